#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "ctxnmt/config.h"
#include "ctxnmt/synth.h"
#include "doctest.h"

using namespace ctxnmt;

namespace {

SynthConfig small_config(std::uint64_t seed = 3) {
  SynthConfig c;
  c.train_docs = 20;
  c.dev_docs = 3;
  c.test_docs = 10;
  c.zero_tune_docs = 4;
  c.zero_tune_dev_docs = 2;
  c.seed = seed;
  return c;
}

std::string dump(const Corpus& c) {
  std::ostringstream os;
  write_corpus(os, c);
  return os.str();
}

std::vector<std::vector<std::string>> targets(const Corpus& c) {
  std::vector<std::vector<std::string>> out;
  for (const auto& d : c)
    for (const auto& s : d.sentences) out.push_back(s.target);
  return out;
}

bool is_exclusive(const std::string& w) { return w.size() >= 5 && w[0] == 'w'; }

}  // namespace

TEST_CASE("synthetic corpus is a deterministic function of its config") {
  const auto a = generate(small_config(3));
  const auto b = generate(small_config(3));
  CHECK(dump(a.train) == dump(b.train));
  CHECK(dump(a.test) == dump(b.test));
  CHECK(dump(a.tune) == dump(b.tune));
  CHECK(a.oracle.size() == b.oracle.size());
  CHECK(dump(generate(small_config(4)).train) != dump(a.train));
}

TEST_CASE("synthetic corpus structure") {
  const auto c = generate(small_config());
  const auto& cfg = c.config;
  CHECK(c.all_domains() == std::vector<std::string>{"A", "B", "C", "Z"});
  CHECK(corpus_domains(c.train) == cfg.domains);
  CHECK(corpus_domains(c.dev) == cfg.domains);
  CHECK(corpus_domains(c.test) == c.all_domains());
  CHECK(corpus_domains(c.tune) == std::vector<std::string>{"Z"});
  CHECK(corpus_domains(c.tune_dev) == std::vector<std::string>{"Z"});

  std::set<std::string> ids;
  for (const Corpus* split : {&c.train, &c.dev, &c.test, &c.tune, &c.tune_dev})
    for (const auto& d : *split) {
      CHECK(ids.insert(d.id).second);
      CHECK(d.sentences.size() >= cfg.min_sentences);
      CHECK(d.sentences.size() <= cfg.max_sentences);
      for (const auto& s : d.sentences) {
        CHECK(s.source.size() == s.target.size());
        CHECK(s.source.size() >= cfg.min_length);
        CHECK(s.source.size() <= cfg.max_length);
      }
    }

  // Held-out vocabulary is a subset of the training vocabulary at the
  // default training size.
  SynthConfig full = small_config();
  full.train_docs = SynthConfig{}.train_docs;
  const auto big = generate(full);
  std::set<std::string> seen_src, seen_tgt;
  for (const auto& d : big.train)
    for (const auto& s : d.sentences) {
      seen_src.insert(s.source.begin(), s.source.end());
      seen_tgt.insert(s.target.begin(), s.target.end());
    }
  for (const Corpus* split : {&big.test, &big.tune})
    for (const auto& d : *split)
      for (const auto& s : d.sentences) {
        for (const auto& w : s.source) CHECK(seen_src.count(w));
        for (const auto& w : s.target) CHECK(seen_tgt.count(w));
      }

  // Every polysemous word has at least two senses, differing across domains.
  for (const auto& p : c.polysemy) {
    CHECK(p.domains.size() == 2);
    std::set<std::string> senses;
    for (const auto& [k, v] : p.senses) senses.insert(v);
    CHECK(senses.size() >= 2);
    CHECK(p.source.size() > 3);
  }
}

TEST_CASE("synthetic corpus cue structure") {
  SynthConfig cfg = small_config();
  cfg.train_docs = 60;
  const auto c = generate(cfg);
  std::size_t sentences = 0, cue_free = 0, ctx_total = 0, ctx_with_cue = 0;
  for (const auto& d : c.train) {
    std::vector<bool> cued;
    for (const auto& s : d.sentences) {
      bool any = false;
      for (const auto& w : s.source) any = any || is_exclusive(w);
      cued.push_back(any);
      ++sentences;
      cue_free += !any;
      // Exclusive words come from the document's domain only.
      const std::size_t d_index = static_cast<std::size_t>(
          std::find(cfg.domains.begin(), cfg.domains.end(), d.domain) - cfg.domains.begin());
      for (const auto& w : s.source)
        if (is_exclusive(w)) CHECK(w[1] - '0' == static_cast<int>(d_index));
    }
    for (std::size_t i = 10; i < cued.size(); ++i) {
      ++ctx_total;
      bool any = false;
      for (std::size_t j = i - 10; j < i; ++j) any = any || cued[j];
      ctx_with_cue += any;
    }
  }
  const double rate = static_cast<double>(cue_free) / static_cast<double>(sentences);
  CHECK(rate == doctest::Approx(cfg.cue_free_fraction).epsilon(0.1));
  // 1 - 0.5^10 in expectation.
  CHECK(static_cast<double>(ctx_with_cue) / static_cast<double>(ctx_total) >= 0.99);
}

TEST_CASE("oracle records and score") {
  const auto c = generate(small_config());
  const auto refs = targets(c.test);

  // Each oracle entry points at its word, and the reference carries the sense.
  std::map<std::string, const Document*> by_id;
  for (const auto& d : c.test) by_id[d.id] = &d;
  std::size_t in_test = 0;
  for (const auto& e : c.oracle) {
    auto it = by_id.find(e.doc_id);
    if (it == by_id.end()) continue;
    ++in_test;
    const auto& s = it->second->sentences.at(e.sentence);
    CHECK(s.source.at(e.token) == e.word);
    CHECK(s.target.at(e.token) == e.sense);
  }
  REQUIRE(in_test > 50);

  const auto perfect = oracle_disambiguation_score(c.test, refs, c.oracle);
  CHECK(perfect.total == in_test);
  CHECK(perfect.accuracy() == 1.0);
  CHECK_THROWS_AS(oracle_disambiguation_score(c.test, {}, c.oracle), std::invalid_argument);

  // Always emitting domain A's sense scores the share of A-sense occurrences.
  std::map<std::string, std::string> a_sense;
  for (const auto& p : c.polysemy)
    for (const auto& [k, v] : p.senses)
      if (k == "A" || k == "A/0") a_sense[p.source] = v;
  auto hyps = targets(c.test);
  std::size_t line = 0, expected = 0;
  std::map<std::string, std::size_t> first_line;
  for (const auto& d : c.test) {
    first_line[d.id] = line;
    line += d.sentences.size();
  }
  for (const auto& e : c.oracle) {
    auto it = first_line.find(e.doc_id);
    if (it == first_line.end()) continue;
    auto& h = hyps[it->second + e.sentence];
    h[e.token] = a_sense.count(e.word) ? a_sense[e.word] : "none";
  }
  // Count afterwards: a sense can also match at another position.
  for (const auto& e : c.oracle) {
    auto it = first_line.find(e.doc_id);
    if (it == first_line.end()) continue;
    const auto& h = hyps[it->second + e.sentence];
    expected += std::find(h.begin(), h.end(), e.sense) != h.end();
  }
  const auto fixed = oracle_disambiguation_score(c.test, hyps, c.oracle);
  CHECK(fixed.correct == expected);
  CHECK(fixed.accuracy() < 1.0);

  // Uniform random sense: expected accuracy is the mean of 1/#senses.
  std::mt19937_64 rng(5);
  double expected_rate = 0;
  hyps = targets(c.test);
  std::map<std::string, std::vector<std::string>> senses;
  for (const auto& p : c.polysemy)
    for (const auto& [k, v] : p.senses) senses[p.source].push_back(v);
  for (const auto& e : c.oracle) {
    auto it = first_line.find(e.doc_id);
    if (it == first_line.end()) continue;
    const auto& opts = senses[e.word];
    hyps[it->second + e.sentence][e.token] = opts[rng() % opts.size()];
    expected_rate += 1.0 / static_cast<double>(opts.size());
  }
  expected_rate /= static_cast<double>(in_test);
  const auto random = oracle_disambiguation_score(c.test, hyps, c.oracle);
  const double sd = std::sqrt(expected_rate * (1 - expected_rate) / static_cast<double>(in_test));
  // Sentences with repeated polysemous words can match at either position,
  // which only helps.
  CHECK(random.accuracy() > expected_rate - 3 * sd);
  CHECK(random.accuracy() < expected_rate + 3 * sd + 0.05);
}

TEST_CASE("held-out senses follow the heaviest mixture component") {
  const auto c = generate(small_config());
  std::map<std::string, const PolysemousWord*> by_word;
  for (const auto& p : c.polysemy) by_word[p.source] = &p;
  std::map<std::string, std::set<std::string>> seen;
  for (const auto& e : c.oracle)
    if (e.doc_id.find("-Z-") != std::string::npos) seen[e.word].insert(e.sense);
  REQUIRE(!seen.empty());
  for (const auto& [w, senses] : seen) {
    const auto& p = *by_word.at(w);
    const bool in_a = std::find(p.domains.begin(), p.domains.end(), "A") != p.domains.end();
    for (const auto& s : senses) {
      const std::string owner = in_a ? "A" : "B";
      bool ok = false;
      for (const auto& [k, v] : p.senses) ok = ok || (v == s && k.rfind(owner, 0) == 0);
      CHECK_MESSAGE(ok, w << " -> " << s);
    }
  }
}

TEST_CASE("synthetic config validation and files") {
  SynthConfig c = small_config();
  c.zero_mixture = {{"Q", 1.0}};
  CHECK_THROWS_AS(generate(c), ConfigError);
  c = small_config();
  c.domains = {"A"};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.exclusive_rate = 0.9;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(nlohmann::json({{"bogus", 1}}).get<SynthConfig>(), ConfigError);

  c = small_config();
  const nlohmann::json j = c;
  const auto back = j.get<SynthConfig>();
  CHECK(nlohmann::json(back) == j);

  const auto corpus = generate(c);
  const auto dir = std::filesystem::temp_directory_path() / "ctxnmt_synth_test";
  std::filesystem::remove_all(dir);
  write_synth(dir.string(), corpus);
  CHECK(load_corpus((dir / "test.txt").string()) == corpus.test);
  CHECK(load_corpus((dir / "train.txt").string()) == corpus.train);
  const auto oracle = load_oracle((dir / "oracle.tsv").string());
  REQUIRE(oracle.size() == corpus.oracle.size());
  CHECK(oracle.back().sense == corpus.oracle.back().sense);
  CHECK(std::filesystem::exists(dir / "synth.json"));
  std::filesystem::remove_all(dir);
}
