#ifndef CTXNMT_EVALUATION_H_
#define CTXNMT_EVALUATION_H_

// Corpus BLEU, paired bootstrap resampling, TF-IDF domain words, an IBM
// Model 1 aligner for domain-word F1, and the representative-context
// ablation grid.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "ctxnmt/corpus.h"
#include "ctxnmt/tensor.h"

namespace ctxnmt {

using Tokens = std::vector<std::string>;

// ---- BLEU ----

// Sufficient statistics of one sentence pair.
struct BleuStats {
  std::vector<double> matches;  // clipped n-gram matches, n = 1..max_n
  std::vector<double> totals;   // hypothesis n-grams
  double hyp_len = 0;
  double ref_len = 0;

  explicit BleuStats(std::size_t max_n = 4) : matches(max_n, 0), totals(max_n, 0) {}
  BleuStats& operator+=(const BleuStats& o);
};

BleuStats bleu_stats(const Tokens& hypothesis, const Tokens& reference, std::size_t max_n = 4);
// Geometric mean of the modified precisions times the brevity penalty, in
// [0, 100]. Any zero precision gives 0 (no smoothing).
double bleu_from_stats(const BleuStats& stats);
// Throws std::invalid_argument on empty input or unequal line counts.
double corpus_bleu(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references,
                   std::size_t max_n = 4);
// +1 smoothed sentence BLEU for diagnostics.
double sentence_bleu(const Tokens& hypothesis, const Tokens& reference, std::size_t max_n = 4);

struct BootstrapResult {
  double bleu_a = 0, bleu_b = 0;
  // Fraction of resamples in which B scores at least as well as A: the
  // p-value of "A is better than B".
  double p_value = 1;
  std::size_t resamples = 0;
  bool significant_05() const { return p_value < 0.05; }
  bool significant_01() const { return p_value < 0.01; }
};

BootstrapResult paired_bootstrap(const std::vector<Tokens>& hyp_a, const std::vector<Tokens>& hyp_b,
                                 const std::vector<Tokens>& references, std::size_t resamples = 1000,
                                 std::uint64_t seed = 1);

// ---- domain words ----

struct ScoredWord {
  std::string word;
  double score = 0;
};
using DomainWordSet = std::map<std::string, std::vector<ScoredWord>>;

// tf = relative frequency of the word in the domain's concatenated text,
// idf = ln(D / number of domains containing it). Words shorter than min_len
// characters or with a zero score are skipped; ties rank by byte order.
DomainWordSet tfidf_domain_words(const std::map<std::string, std::vector<Tokens>>& text_by_domain,
                                 std::size_t top_k = 100, std::size_t min_len = 4);

// ---- IBM Model 1 ----

inline constexpr const char* kNullWord = "<NULL>";

class AlignmentModel {
 public:
  // t(target | source); unseen pairs fall back to `uniform`.
  double prob(const std::string& target, const std::string& source) const;
  bool knows(const std::string& source) const { return table_.count(source) > 0; }
  const std::unordered_map<std::string, std::unordered_map<std::string, double>>& table() const { return table_; }
  double uniform() const { return uniform_; }

 private:
  friend AlignmentModel ibm1_align(const std::vector<std::pair<Tokens, Tokens>>&, std::size_t,
                                   std::vector<double>*);
  std::unordered_map<std::string, std::unordered_map<std::string, double>> table_;
  double uniform_ = 0;
};

// EM from a uniform start; each target word aligns to a source word or the
// null word. `log_likelihoods` (optional) receives the training
// log-likelihood before every iteration and after the last one.
AlignmentModel ibm1_align(const std::vector<std::pair<Tokens, Tokens>>& bitext, std::size_t iterations = 5,
                          std::vector<double>* log_likelihoods = nullptr);
double ibm1_log_likelihood(const AlignmentModel& model, const std::vector<std::pair<Tokens, Tokens>>& bitext);

struct ForcedAlignment {
  std::vector<int> target_index;  // per source token, -1 for an empty target
  std::vector<std::uint8_t> oov;  // source word unseen in training
};
// Each source token goes to argmax_j t(target_j | source), ties leftmost.
ForcedAlignment force_align(const AlignmentModel& model, const Tokens& source, const Tokens& target);

struct F1Result {
  double precision = 0, recall = 0, f1 = 0;
  std::size_t matches = 0, predicted = 0, gold = 0;
  bool degenerate = false;  // a zero denominator
};

F1Result domain_word_f1(const std::vector<std::string>& domain_words, const std::vector<Tokens>& sources,
                        const std::vector<Tokens>& references, const std::vector<Tokens>& hypotheses,
                        const AlignmentModel& model);

// ---- representative context ----

double cosine(const std::vector<double>& a, const std::vector<double>& b);

struct RepresentativeContext {
  std::size_t index = 0;  // into that domain's context list
  double cosine = 0;
  std::vector<TokenId> context;
};

// Per domain: the context whose mean token embedding is closest (cosine) to
// the mean of all of that domain's context means. Empty contexts are
// skipped; a domain without any non-empty context is an error.
std::map<std::string, RepresentativeContext> representative_contexts(
    const std::map<std::string, std::vector<std::vector<TokenId>>>& contexts_by_domain, const Tensor& embeddings);

struct AblationGrid {
  std::vector<std::string> rows;     // test domains
  std::vector<std::string> columns;  // context domains, then "True"
  std::vector<std::vector<double>> values;

  double diagonal(std::size_t r) const { return values[r][r]; }
  double off_diagonal_mean(std::size_t r) const;
  double true_context(std::size_t r) const { return values[r].back(); }
  std::string to_tsv() const;
};

// metric(examples) scores one decode of the examples. Every row domain is
// decoded once per representative context and once with its true contexts.
AblationGrid ablation_matrix(
    const std::vector<std::string>& domains,
    const std::map<std::string, std::vector<TrainingExample>>& test_by_domain,
    const std::map<std::string, RepresentativeContext>& representatives,
    const std::function<double(const std::string& domain, const std::vector<TrainingExample>&)>& metric);

// ---- reporting ----

// Flat metric store: key = metric.domain.system.
class EvalReport {
 public:
  void add(const std::string& metric, const std::string& domain, const std::string& system, double value);
  double get(const std::string& metric, const std::string& domain, const std::string& system) const;
  bool has(const std::string& metric, const std::string& domain, const std::string& system) const;
  nlohmann::json summary() const;
  // One table per metric: rows = systems, columns = domains.
  std::string to_tsv() const;

 private:
  std::map<std::string, double> values_;
  std::vector<std::string> metrics_, domains_, systems_;
};

}  // namespace ctxnmt

#endif  // CTXNMT_EVALUATION_H_
