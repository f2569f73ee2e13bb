#include "ctxnmt/synth.h"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "ctxnmt/config.h"
#include "ctxnmt/log.h"

namespace ctxnmt {

void SynthConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("synthetic corpus: " + m); };
  if (domains.size() < 2) fail("need at least two training domains");
  std::set<std::string> seen;
  for (const auto& d : domains) {
    if (d.empty() || d.find_first_of(" \t\n") != std::string::npos) fail("bad domain name '" + d + "'");
    if (!seen.insert(d).second) fail("duplicate domain '" + d + "'");
  }
  if (zero_domain.empty() || seen.count(zero_domain)) fail("held-out domain must be new and non-empty");
  if (zero_mixture.empty()) fail("held-out mixture is empty");
  for (const auto& [d, w] : zero_mixture) {
    if (!seen.count(d)) fail("held-out mixture references unknown domain '" + d + "'");
    if (!(w > 0)) fail("mixture weights must be positive");
  }
  if (subtopics < 1) fail("subtopics must be >= 1");
  if (exclusive_words < subtopics || exclusive_words > 1000) fail("exclusive_words must be in [subtopics, 1000]");
  if (shared_words < 1 || shared_words > 100) fail("shared_words must be in [1, 100]");
  if (polysemous_words < 1 || polysemous_words > 100) fail("polysemous_words must be in [1, 100]");
  if (subtopic_polysemous > polysemous_words) fail("subtopic_polysemous exceeds polysemous_words");
  if (train_docs < 1 || test_docs < 1) fail("train_docs and test_docs must be positive");
  if (min_sentences < 1 || min_sentences > max_sentences) fail("bad sentence-count range");
  if (min_length < 1 || min_length > max_length || max_length > kMaxSentenceTokens) fail("bad sentence-length range");
  auto rate = [&](double r, const char* name) {
    if (!(r >= 0 && r <= 1)) fail(std::string(name) + " must be in [0, 1]");
  };
  rate(cue_free_fraction, "cue_free_fraction");
  rate(exclusive_rate, "exclusive_rate");
  rate(polysemous_rate, "polysemous_rate");
  if (exclusive_rate + polysemous_rate > 1) fail("exclusive_rate + polysemous_rate exceeds 1");
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
  nlohmann::json mix = nlohmann::json::array();
  for (const auto& [d, w] : c.zero_mixture) mix.push_back({d, w});
  j = nlohmann::json{{"domains", c.domains},
                     {"zero_domain", c.zero_domain},
                     {"zero_mixture", mix},
                     {"subtopics", c.subtopics},
                     {"exclusive_words", c.exclusive_words},
                     {"shared_words", c.shared_words},
                     {"polysemous_words", c.polysemous_words},
                     {"subtopic_polysemous", c.subtopic_polysemous},
                     {"train_docs", c.train_docs},
                     {"dev_docs", c.dev_docs},
                     {"test_docs", c.test_docs},
                     {"zero_tune_docs", c.zero_tune_docs},
                     {"zero_tune_dev_docs", c.zero_tune_dev_docs},
                     {"min_sentences", c.min_sentences},
                     {"max_sentences", c.max_sentences},
                     {"min_length", c.min_length},
                     {"max_length", c.max_length},
                     {"cue_free_fraction", c.cue_free_fraction},
                     {"exclusive_rate", c.exclusive_rate},
                     {"polysemous_rate", c.polysemous_rate},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
  c = SynthConfig{};
  static const std::set<std::string> known = {
      "domains",         "zero_domain",    "zero_mixture",       "subtopics",      "exclusive_words",
      "shared_words",    "polysemous_words", "subtopic_polysemous", "train_docs",   "dev_docs",
      "test_docs",       "zero_tune_docs", "zero_tune_dev_docs", "min_sentences",  "max_sentences",
      "min_length",      "max_length",     "cue_free_fraction",  "exclusive_rate", "polysemous_rate",
      "seed"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw ConfigError("synthetic corpus: unknown key '" + it.key() + "'");
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("domains", c.domains);
  get("zero_domain", c.zero_domain);
  if (j.contains("zero_mixture")) {
    c.zero_mixture.clear();
    for (const auto& e : j.at("zero_mixture")) c.zero_mixture.emplace_back(e.at(0).get<std::string>(), e.at(1).get<double>());
  }
  get("subtopics", c.subtopics);
  get("exclusive_words", c.exclusive_words);
  get("shared_words", c.shared_words);
  get("polysemous_words", c.polysemous_words);
  get("subtopic_polysemous", c.subtopic_polysemous);
  get("train_docs", c.train_docs);
  get("dev_docs", c.dev_docs);
  get("test_docs", c.test_docs);
  get("zero_tune_docs", c.zero_tune_docs);
  get("zero_tune_dev_docs", c.zero_tune_dev_docs);
  get("min_sentences", c.min_sentences);
  get("max_sentences", c.max_sentences);
  get("min_length", c.min_length);
  get("max_length", c.max_length);
  get("cue_free_fraction", c.cue_free_fraction);
  get("exclusive_rate", c.exclusive_rate);
  get("polysemous_rate", c.polysemous_rate);
  get("seed", c.seed);
}

std::vector<std::string> SynthCorpus::all_domains() const {
  std::vector<std::string> d = config.domains;
  d.push_back(config.zero_domain);
  return d;
}

namespace {

std::string numbered(const std::string& prefix, std::size_t n, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%0*zu", width, n);
  return prefix + buf;
}

struct Lexicon {
  std::vector<std::string> shared;                              // source words
  std::vector<std::vector<std::vector<std::string>>> exclusive;  // [domain][subtopic]
  std::vector<std::vector<std::size_t>> poly_of_domain;          // [domain] -> word indices
  std::map<std::string, std::string> translation;                // non-polysemous
};

// Draws the words of one document. `pick_domain` chooses the domain that
// supplies the next exclusive or polysemous word; `sense` resolves a
// polysemous word given that domain.
class DocWriter {
 public:
  DocWriter(const SynthConfig& c, const Lexicon& lex, const std::vector<PolysemousWord>& poly, std::mt19937_64& rng)
      : c_(c), lex_(lex), poly_(poly), rng_(rng) {}

  template <class PickDomain, class Sense>
  Document write(const std::string& id, const std::string& domain, std::size_t subtopic, PickDomain pick_domain,
                 Sense sense, std::vector<OracleEntry>& oracle) {
    Document doc{id, domain, {}};
    const std::size_t n = uniform(c_.min_sentences, c_.max_sentences);
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t len = uniform(c_.min_length, c_.max_length);
      const bool cued = real() >= c_.cue_free_fraction;
      const std::size_t forced = cued ? uniform(0, len - 1) : len;
      SentencePair pair;
      for (std::size_t i = 0; i < len; ++i) {
        const double r = real();
        std::string src, tgt;
        if (i != forced && r < c_.polysemous_rate) {
          const std::size_t d = pick_domain();
          const auto& cands = lex_.poly_of_domain[d];
          if (!cands.empty()) {
            const std::size_t w = cands[uniform(0, cands.size() - 1)];
            src = poly_[w].source;
            tgt = sense(w, d, subtopic);
            oracle.push_back({id, s, i, src, tgt});
          }
        } else if (i == forced || (cued && r < c_.polysemous_rate + c_.exclusive_rate)) {
          const auto& words = lex_.exclusive[pick_domain()][subtopic];
          src = words[uniform(0, words.size() - 1)];
        }
        if (src.empty()) src = lex_.shared[uniform(0, lex_.shared.size() - 1)];
        if (tgt.empty()) tgt = lex_.translation.at(src);
        pair.source.push_back(src);
        pair.target.push_back(tgt);
      }
      doc.sentences.push_back(std::move(pair));
    }
    return doc;
  }

  std::size_t uniform(std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_); }
  double real() { return std::uniform_real_distribution<double>(0, 1)(rng_); }

 private:
  const SynthConfig& c_;
  const Lexicon& lex_;
  const std::vector<PolysemousWord>& poly_;
  std::mt19937_64& rng_;
};

std::string sense_key(const std::string& domain, std::size_t subtopic, bool by_subtopic) {
  return by_subtopic ? domain + "/" + std::to_string(subtopic) : domain;
}

}  // namespace

SynthCorpus generate(const SynthConfig& config) {
  config.validate();
  SynthCorpus out;
  out.config = config;
  const std::size_t D = config.domains.size();

  Lexicon lex;
  for (std::size_t i = 0; i < config.shared_words; ++i) {
    lex.shared.push_back(numbered("f", i, 2));
    lex.translation[lex.shared.back()] = numbered("g", i, 2);
  }
  lex.exclusive.assign(D, std::vector<std::vector<std::string>>(config.subtopics));
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t j = 0; j < config.exclusive_words; ++j) {
      const std::string src = numbered("w" + std::to_string(d), j, 3);
      lex.exclusive[d][j % config.subtopics].push_back(src);
      lex.translation[src] = numbered("t" + std::to_string(d), j, 3);
    }

  // Each polysemous word lives in exactly two training domains, cycling
  // through the domain pairs, so no polysemous word is universal.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t a = 0; a < D; ++a)
    for (std::size_t b = a + 1; b < D; ++b) pairs.emplace_back(a, b);
  lex.poly_of_domain.assign(D, {});
  for (std::size_t w = 0; w < config.polysemous_words; ++w) {
    PolysemousWord p;
    p.source = numbered("poly", w, 2);
    p.subtopic_dependent = w < config.subtopic_polysemous;
    const auto [a, b] = pairs[w % pairs.size()];
    for (std::size_t d : {a, b}) {
      p.domains.push_back(config.domains[d]);
      lex.poly_of_domain[d].push_back(w);
      const std::string base = numbered("s", w, 2) + "d" + std::to_string(d);
      if (p.subtopic_dependent) {
        for (std::size_t s = 0; s < config.subtopics; ++s)
          p.senses[sense_key(config.domains[d], s, true)] = base + "t" + std::to_string(s);
      } else {
        p.senses[config.domains[d]] = base;
      }
    }
    out.polysemy.push_back(std::move(p));
  }
  out.lexicon = lex.translation;

  auto domain_sense = [&](std::size_t w, std::size_t d, std::size_t s) {
    const auto& p = out.polysemy[w];
    return p.senses.at(sense_key(config.domains[d], s, p.subtopic_dependent));
  };

  // Held-out domain: component weights, and per word the heaviest component
  // that uses it decides the sense.
  std::vector<std::size_t> mix_domain;
  std::vector<double> mix_weight;
  for (const auto& [name, w] : config.zero_mixture) {
    mix_domain.push_back(static_cast<std::size_t>(
        std::find(config.domains.begin(), config.domains.end(), name) - config.domains.begin()));
    mix_weight.push_back(w);
  }
  std::vector<std::size_t> zero_sense_domain(config.polysemous_words, D);
  for (std::size_t w = 0; w < config.polysemous_words; ++w) {
    double best = -1;
    for (std::size_t k = 0; k < mix_domain.size(); ++k) {
      const auto& owned = lex.poly_of_domain[mix_domain[k]];
      if (std::find(owned.begin(), owned.end(), w) != owned.end() && mix_weight[k] > best) {
        best = mix_weight[k];
        zero_sense_domain[w] = mix_domain[k];
      }
    }
  }

  // Every split and domain draws from its own stream.
  auto stream = [&](std::uint64_t split, std::uint64_t domain) {
    std::seed_seq seq{config.seed, split, domain};
    return std::mt19937_64(seq);
  };

  auto training_split = [&](Corpus& corpus, const std::string& split, std::uint64_t split_id, std::size_t docs) {
    for (std::size_t d = 0; d < D; ++d) {
      auto rng = stream(split_id, d);
      DocWriter writer(config, lex, out.polysemy, rng);
      for (std::size_t i = 0; i < docs; ++i) {
        const std::size_t sub = writer.uniform(0, config.subtopics - 1);
        corpus.push_back(writer.write(
            numbered(split + "-" + config.domains[d] + "-", i, 4), config.domains[d], sub, [d] { return d; },
            domain_sense, out.oracle));
      }
    }
  };

  auto zero_split = [&](Corpus& corpus, const std::string& split, std::uint64_t split_id, std::size_t docs) {
    auto rng = stream(split_id, D);
    std::discrete_distribution<std::size_t> component(mix_weight.begin(), mix_weight.end());
    DocWriter writer(config, lex, out.polysemy, rng);
    auto pick = [&] { return mix_domain[component(rng)]; };
    auto sense = [&](std::size_t w, std::size_t, std::size_t s) { return domain_sense(w, zero_sense_domain[w], s); };
    for (std::size_t i = 0; i < docs; ++i) {
      const std::size_t sub = writer.uniform(0, config.subtopics - 1);
      corpus.push_back(writer.write(numbered(split + "-" + config.zero_domain + "-", i, 4), config.zero_domain, sub,
                                    pick, sense, out.oracle));
    }
  };

  training_split(out.train, "train", 0, config.train_docs);
  training_split(out.dev, "dev", 1, config.dev_docs);
  training_split(out.test, "test", 2, config.test_docs);
  zero_split(out.test, "test", 2, config.test_docs);
  zero_split(out.tune, "tune", 3, config.zero_tune_docs);
  zero_split(out.tune_dev, "tunedev", 4, config.zero_tune_dev_docs);

  // Small configs can leave rare words out of training.
  std::set<std::string> seen;
  for (const auto& d : out.train)
    for (const auto& s : d.sentences) seen.insert(s.source.begin(), s.source.end());
  std::size_t unseen = 0;
  for (const Corpus* split : {&out.test, &out.tune})
    for (const auto& d : *split)
      for (const auto& s : d.sentences)
        for (const auto& w : s.source) unseen += !seen.count(w);
  if (unseen) log_warning("synthetic corpus: " + std::to_string(unseen) + " test tokens unseen in training");
  return out;
}

void write_synth(const std::string& dir, const SynthCorpus& corpus) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const fs::path root(dir);
  save_corpus((root / "train.txt").string(), corpus.train);
  save_corpus((root / "dev.txt").string(), corpus.dev);
  save_corpus((root / "test.txt").string(), corpus.test);
  save_corpus((root / "tune.txt").string(), corpus.tune);
  save_corpus((root / "tune_dev.txt").string(), corpus.tune_dev);

  std::ofstream oracle(root / "oracle.tsv");
  oracle << "doc_id\tsentence\ttoken\tword\tsense\n";
  for (const auto& e : corpus.oracle)
    oracle << e.doc_id << '\t' << e.sentence << '\t' << e.token << '\t' << e.word << '\t' << e.sense << '\n';
  if (!oracle) throw std::runtime_error("cannot write " + (root / "oracle.tsv").string());

  nlohmann::json poly = nlohmann::json::array();
  for (const auto& p : corpus.polysemy)
    poly.push_back({{"source", p.source},
                    {"domains", p.domains},
                    {"subtopic_dependent", p.subtopic_dependent},
                    {"senses", p.senses}});
  const nlohmann::json meta = {{"config", corpus.config}, {"polysemy", poly}, {"lexicon", corpus.lexicon}};
  std::ofstream js(root / "synth.json");
  js << meta.dump(2) << '\n';
  if (!js) throw std::runtime_error("cannot write " + (root / "synth.json").string());
}

std::vector<OracleEntry> load_oracle(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open oracle file " + path);
  std::vector<OracleEntry> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (n == 1 && line.rfind("doc_id\t", 0) == 0) continue;
    if (line.empty()) continue;
    std::istringstream ls(line);
    OracleEntry e;
    if (!(std::getline(ls, e.doc_id, '\t') && ls >> e.sentence >> e.token >> e.word >> e.sense))
      throw CorpusFormatError(path, n, "expected doc_id, sentence, token, word, sense");
    out.push_back(std::move(e));
  }
  return out;
}

OracleScore oracle_disambiguation_score(const Corpus& corpus, const std::vector<std::vector<std::string>>& hypotheses,
                                        const std::vector<OracleEntry>& oracle) {
  if (hypotheses.size() != sentence_count(corpus))
    throw std::invalid_argument("oracle score: " + std::to_string(hypotheses.size()) + " hypotheses for " +
                                std::to_string(sentence_count(corpus)) + " sentences");
  std::map<std::string, std::pair<std::size_t, std::size_t>> offset;  // doc -> (first line, sentences)
  std::size_t line = 0;
  for (const auto& doc : corpus) {
    offset[doc.id] = {line, doc.sentences.size()};
    line += doc.sentences.size();
  }
  OracleScore score;
  for (const auto& e : oracle) {
    auto it = offset.find(e.doc_id);
    if (it == offset.end() || e.sentence >= it->second.second) continue;
    const auto& hyp = hypotheses[it->second.first + e.sentence];
    ++score.total;
    if (std::find(hyp.begin(), hyp.end(), e.sense) != hyp.end()) ++score.correct;
  }
  return score;
}

}  // namespace ctxnmt
