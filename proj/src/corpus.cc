#include "ctxnmt/corpus.h"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "ctxnmt/log.h"

namespace ctxnmt {

CorpusFormatError::CorpusFormatError(const std::string& source, std::size_t line,
                                     const std::string& what)
    : std::runtime_error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

std::vector<std::string> tokenize(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

Corpus parse_corpus(std::istream& in, const std::string& source_name) {
  Corpus corpus;
  bool implicit = false;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    if (line.rfind("###", 0) == 0) {
      std::vector<std::string> fields = tokenize(line.substr(3));
      if (fields.size() != 3 || fields[0] != "doc")
        throw CorpusFormatError(source_name, line_no, "expected '### doc <doc_id> <domain>'");
      corpus.push_back({fields[1], fields[2], {}});
      continue;
    }
    const std::size_t sep = line.find("|||");
    if (sep == std::string::npos || line.find("|||", sep + 3) != std::string::npos)
      throw CorpusFormatError(source_name, line_no, "expected 'source ||| target'");
    if (corpus.empty()) {
      corpus.push_back({kImplicitDocumentId, kUnknownDomain, {}});
      implicit = true;
    }
    corpus.back().sentences.push_back({tokenize(line.substr(0, sep)), tokenize(line.substr(sep + 3))});
  }
  if (implicit)
    log_warning(source_name + ": sentences before any '### doc' header; they form document '" +
                kImplicitDocumentId + "'" +
                (corpus.size() == 1 ? " (whole file treated as one document)" : ""));
  return corpus;
}

Corpus load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read corpus " + path);
  return parse_corpus(in, path);
}

void write_corpus(std::ostream& out, const Corpus& corpus) {
  for (const auto& doc : corpus) {
    out << "### doc " << doc.id << ' ' << doc.domain << '\n';
    for (const auto& pair : doc.sentences)
      out << join_tokens(pair.source) << " ||| " << join_tokens(pair.target) << '\n';
  }
}

void save_corpus(const std::string& path, const Corpus& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write corpus " + path);
  write_corpus(out, corpus);
}

std::vector<std::string> corpus_domains(const Corpus& corpus) {
  std::vector<std::string> out;
  for (const auto& doc : corpus)
    if (std::find(out.begin(), out.end(), doc.domain) == out.end()) out.push_back(doc.domain);
  return out;
}

std::size_t sentence_count(const Corpus& corpus) {
  std::size_t n = 0;
  for (const auto& doc : corpus) n += doc.sentences.size();
  return n;
}

Corpus select_domains(const Corpus& corpus, const std::vector<std::string>& domains) {
  Corpus out;
  for (const auto& doc : corpus)
    if (std::find(domains.begin(), domains.end(), doc.domain) != domains.end()) out.push_back(doc);
  return out;
}

std::vector<TokenId> build_context(const Document& doc, std::size_t index, std::size_t k,
                                   const Vocabulary& vocab, std::size_t per_sentence_limit) {
  if (index >= doc.sentences.size())
    throw std::out_of_range("build_context: sentence " + std::to_string(index) +
                            " outside document " + doc.id);
  std::vector<TokenId> out;
  const std::size_t first = index - std::min(k, index);
  for (std::size_t i = first; i < index; ++i) {
    if (i > first) out.push_back(Vocabulary::kSep);
    const auto& words = doc.sentences[i].source;
    const std::size_t n = std::min(words.size(), per_sentence_limit);
    for (std::size_t w = 0; w < n; ++w) out.push_back(vocab.id(words[w]));
  }
  return out;
}

std::vector<TrainingExample> make_examples(const Corpus& corpus, const Vocabulary& vocab,
                                           std::size_t k, std::size_t per_sentence_limit) {
  std::vector<TrainingExample> out;
  out.reserve(sentence_count(corpus));
  for (const auto& doc : corpus) {
    const TokenId tag =
        vocab.contains(Vocabulary::domain_tag(doc.domain)) ? vocab.tag_id(doc.domain) : Vocabulary::kUnk;
    for (std::size_t i = 0; i < doc.sentences.size(); ++i) {
      TrainingExample ex;
      ex.source = vocab.encode(doc.sentences[i].source);
      ex.source.push_back(Vocabulary::kEos);
      ex.target = vocab.encode(doc.sentences[i].target);
      ex.target.push_back(Vocabulary::kEos);
      ex.context = build_context(doc, i, k, vocab, per_sentence_limit);
      ex.domain_tag = tag;
      ex.domain = doc.domain;
      ex.doc_id = doc.id;
      ex.position = i;
      out.push_back(std::move(ex));
    }
  }
  return out;
}

std::vector<TrainingExample> filter_by_length(std::vector<TrainingExample> examples,
                                              std::size_t max_tokens) {
  std::erase_if(examples, [max_tokens](const TrainingExample& ex) {
    return ex.source.size() - 1 > max_tokens || ex.target.size() - 1 > max_tokens;
  });
  return examples;
}

PaddedIds PaddedIds::from(const std::vector<std::vector<TokenId>>& rows) {
  PaddedIds p;
  p.batch = rows.size();
  for (const auto& r : rows) p.len = std::max(p.len, r.size());
  p.ids.assign(p.batch * p.len, Vocabulary::kPad);
  p.valid.assign(p.batch * p.len, 0);
  for (std::size_t b = 0; b < rows.size(); ++b)
    for (std::size_t t = 0; t < rows[b].size(); ++t) {
      p.ids[b * p.len + t] = rows[b][t];
      p.valid[b * p.len + t] = 1;
    }
  return p;
}

std::size_t PaddedIds::row_length(std::size_t b) const {
  std::size_t n = 0;
  for (std::size_t t = 0; t < len; ++t) n += valid[b * len + t];
  return n;
}

Batch make_batch(const std::vector<TrainingExample>& examples,
                 const std::vector<std::size_t>& indices) {
  std::vector<std::vector<TokenId>> src, tin, tout, ctx;
  Batch batch;
  for (std::size_t i : indices) {
    const TrainingExample& ex = examples.at(i);
    src.push_back(ex.source);
    std::vector<TokenId> in{Vocabulary::kBos};
    in.insert(in.end(), ex.target.begin(), ex.target.end() - 1);
    tin.push_back(std::move(in));
    tout.push_back(ex.target);
    ctx.push_back(ex.context);
    batch.target_tokens += ex.target.size();
  }
  batch.source = PaddedIds::from(src);
  batch.target_in = PaddedIds::from(tin);
  batch.target_out = PaddedIds::from(tout);
  batch.context = PaddedIds::from(ctx);
  batch.example_indices = indices;
  return batch;
}

std::vector<Batch> batch_by_tokens(const std::vector<TrainingExample>& examples,
                                   std::size_t budget, std::uint64_t shuffle_seed) {
  std::mt19937_64 rng(shuffle_seed);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  // Bucket by length; the shuffle decides order within a bucket.
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ea = examples[a];
    const auto& eb = examples[b];
    if (ea.source.size() != eb.source.size()) return ea.source.size() < eb.source.size();
    return ea.target.size() < eb.target.size();
  });

  std::vector<std::vector<std::size_t>> groups;
  std::size_t used = 0;
  for (std::size_t i : order) {
    const std::size_t n = examples[i].target.size();
    if (n > budget)
      throw std::invalid_argument("batch_by_tokens: example with " + std::to_string(n) +
                                  " target tokens exceeds the budget of " + std::to_string(budget));
    if (groups.empty() || used + n > budget) {
      groups.emplace_back();
      used = 0;
    }
    groups.back().push_back(i);
    used += n;
  }
  std::shuffle(groups.begin(), groups.end(), rng);
  std::vector<Batch> batches;
  batches.reserve(groups.size());
  for (const auto& g : groups) batches.push_back(make_batch(examples, g));
  return batches;
}

}  // namespace ctxnmt
