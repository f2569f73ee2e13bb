#ifndef CTXNMT_SYNTH_H_
#define CTXNMT_SYNTH_H_

// Deterministic multi-domain document corpora with domain-dependent
// polysemy. Translation is monotone and word by word; only the polysemous
// words need context to be translated correctly.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ctxnmt/corpus.h"

namespace ctxnmt {

struct SynthConfig {
  std::vector<std::string> domains = {"A", "B", "C"};
  // Held-out domain: a word-level mixture of training domains.
  std::string zero_domain = "Z";
  std::vector<std::pair<std::string, double>> zero_mixture = {{"A", 0.6}, {"B", 0.4}};

  std::size_t subtopics = 2;         // per domain, each owns a slice of its words
  std::size_t exclusive_words = 60;  // per domain
  std::size_t shared_words = 40;
  std::size_t polysemous_words = 10;
  // The first n polysemous words take a different sense per subtopic.
  std::size_t subtopic_polysemous = 3;

  std::size_t train_docs = 200;  // per training domain
  std::size_t dev_docs = 15;
  std::size_t test_docs = 30;       // per domain, Z included
  std::size_t zero_tune_docs = 30;  // Z fine-tuning split
  std::size_t zero_tune_dev_docs = 10;

  std::size_t min_sentences = 8, max_sentences = 15;
  std::size_t min_length = 5, max_length = 12;

  // Share of sentences without any domain-exclusive word.
  double cue_free_fraction = 0.5;
  double exclusive_rate = 0.3;   // per token, in sentences with cues
  double polysemous_rate = 0.2;  // per token

  std::uint64_t seed = 1;

  // Throws ConfigError.
  void validate() const;
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

struct PolysemousWord {
  std::string source;
  std::vector<std::string> domains;  // training domains using the word
  bool subtopic_dependent = false;
  // Key "domain" or "domain/subtopic" -> target word.
  std::map<std::string, std::string> senses;
};

// One polysemous occurrence and its gold translation.
struct OracleEntry {
  std::string doc_id;
  std::size_t sentence = 0;
  std::size_t token = 0;
  std::string word;
  std::string sense;
};

struct SynthCorpus {
  SynthConfig config;
  Corpus train;      // training domains only
  Corpus dev;        // training domains only
  Corpus test;       // training domains, then Z
  Corpus tune;       // Z only
  Corpus tune_dev;   // Z only
  std::vector<PolysemousWord> polysemy;
  std::vector<OracleEntry> oracle;  // every split, keyed by unique doc id
  std::map<std::string, std::string> lexicon;  // non-polysemous source -> target

  std::vector<std::string> all_domains() const;  // training domains, then Z
};

SynthCorpus generate(const SynthConfig& config);

// train.txt, dev.txt, test.txt, tune.txt, tune_dev.txt, oracle.tsv and
// synth.json under `dir`.
void write_synth(const std::string& dir, const SynthCorpus& corpus);
std::vector<OracleEntry> load_oracle(const std::string& path);

struct OracleScore {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

// hypotheses[i] translates the i-th sentence of `corpus` in corpus order.
// An occurrence counts when its gold sense appears anywhere in the
// hypothesis; oracle entries of documents outside `corpus` are ignored.
OracleScore oracle_disambiguation_score(const Corpus& corpus, const std::vector<std::vector<std::string>>& hypotheses,
                                        const std::vector<OracleEntry>& oracle);

}  // namespace ctxnmt

#endif  // CTXNMT_SYNTH_H_
