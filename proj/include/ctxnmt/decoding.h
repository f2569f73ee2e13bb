#ifndef CTXNMT_DECODING_H_
#define CTXNMT_DECODING_H_

// Beam search over an abstract next-token distribution, with the model-backed
// implementation doubling as a probability-averaging ensemble.

#include <cstdint>
#include <span>
#include <vector>

#include "ctxnmt/corpus.h"
#include "ctxnmt/model.h"

namespace ctxnmt {

// Source of next-token probabilities for `rows` hypotheses over a fixed set
// of sources, rows_per_source hypotheses per source, grouped contiguously.
class StepModel {
 public:
  virtual ~StepModel() = default;
  virtual std::size_t sources() const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual void start(std::size_t rows_per_source) = 0;
  // Probabilities [rows x V]. prefixes[r] holds row r's tokens so far,
  // starting with <BOS>.
  virtual std::vector<double> next_probs(const std::vector<std::vector<TokenId>>& prefixes) = 0;
  // New row r continues old row parents[r] (same source group).
  virtual void reorder(std::span<const std::size_t> parents) = 0;
};

struct DecodeOptions {
  std::size_t beam_size = 12;
  double alpha = 1.0;        // score = log p / length^alpha
  std::size_t max_len = 0;   // 0: 2 * source words + 10
  TokenId bos = Vocabulary::kBos;
  TokenId eos = Vocabulary::kEos;
  std::vector<TokenId> blocked;  // never emitted
};

// Blocks <PAD>, <BOS>, <SEP> and every domain tag of `vocab`.
DecodeOptions default_decode_options(const Vocabulary& vocab, std::size_t beam_size);
DecodeOptions default_decode_options(std::size_t vocab_size, std::size_t num_domains, std::size_t beam_size);

struct Hypothesis {
  std::vector<TokenId> tokens;  // without <BOS>; ends in <EOS> when finished
  double log_prob = 0;
  double score = 0;  // length-normalized
  bool finished = false;
};

double normalized_score(double log_prob, std::size_t length, double alpha);

// One best hypothesis per source. source_words[i] is source i's length in
// words (no <EOS>); a zero-length source yields <EOS> immediately.
std::vector<Hypothesis> beam_search(StepModel& model, const std::vector<std::size_t>& source_words,
                                    const DecodeOptions& options);
// Argmax at every step, ties to the lowest id.
std::vector<Hypothesis> greedy_search(StepModel& model, const std::vector<std::size_t>& source_words,
                                      const DecodeOptions& options);
// Every finished sequence up to max_len is scored; for tiny vocabularies.
Hypothesis exhaustive_search(StepModel& model, std::size_t source_words, const DecodeOptions& options);

// One translation model over a batch of examples already prepared for its
// kind. Probabilities are the softmax of the output logits.
class ModelStepModel : public StepModel {
 public:
  ModelStepModel(const Model& model, const std::vector<TrainingExample>& prepared);

  std::size_t sources() const override { return encoded_.batch; }
  std::size_t vocab_size() const override { return model_->config().vocab_size; }
  void start(std::size_t rows_per_source) override;
  std::vector<double> next_probs(const std::vector<std::vector<TokenId>>& prefixes) override;
  void reorder(std::span<const std::size_t> parents) override { cache_.reorder(parents); }

 private:
  const Model* model_;
  Encoded encoded_;
  DecoderCache cache_;
};

// Weighted arithmetic mean of the members' distributions, weights
// normalized to sum 1; zero-weight members are never queried. Members must
// agree on sources and vocabulary (std::invalid_argument otherwise).
class MixtureStepModel : public StepModel {
 public:
  MixtureStepModel(std::vector<StepModel*> members, std::vector<double> weights);

  std::size_t sources() const override { return members_[0]->sources(); }
  std::size_t vocab_size() const override { return members_[0]->vocab_size(); }
  void start(std::size_t rows_per_source) override;
  std::vector<double> next_probs(const std::vector<std::vector<TokenId>>& prefixes) override;
  void reorder(std::span<const std::size_t> parents) override;

 private:
  std::vector<StepModel*> members_;
  std::vector<double> weights_;
};

struct EnsembleMember {
  const Model* model = nullptr;
  double weight = 1.0;
};

struct TranslateOptions {
  DecodeOptions decode;
  std::size_t batch_sentences = 32;
  std::size_t workers = 1;
};

// Translates raw examples (context and domain tag as built by
// make_examples) in input order. Each member sees the examples prepared for
// its own kind; several members decode as a probability-averaging ensemble.
std::vector<Hypothesis> translate(const std::vector<EnsembleMember>& members,
                                  const std::vector<TrainingExample>& examples, const TranslateOptions& options);
std::vector<Hypothesis> translate(const Model& model, const std::vector<TrainingExample>& examples,
                                  const TranslateOptions& options);

}  // namespace ctxnmt

#endif  // CTXNMT_DECODING_H_
