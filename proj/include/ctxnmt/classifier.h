#ifndef CTXNMT_CLASSIFIER_H_
#define CTXNMT_CLASSIFIER_H_

// Document-level bag-of-words domain classifier (vocab -> hidden -> K) that
// supplies predicted domain tags to TagBase at test time.

#include <cstdint>
#include <string>
#include <vector>

#include "ctxnmt/checkpoint.h"
#include "ctxnmt/corpus.h"
#include "ctxnmt/layers.h"

namespace ctxnmt {

struct DocFeature {
  std::string doc_id;
  std::vector<Real> values;  // vocabulary-sized, L1-normalized
  bool degenerate = false;   // no countable tokens
};

// Source-side term counts over the whole document, reserved symbols and
// unknown words excluded.
DocFeature featurize(const Document& doc, const Vocabulary& vocab);

struct ClassifierConfig {
  std::size_t hidden = 256;
  std::size_t epochs = 40;
  std::size_t batch_size = 32;
  double learning_rate = 1e-2;
  std::uint64_t seed = 1;
};

class DomainClassifier {
 public:
  DomainClassifier(std::size_t vocab_size, std::vector<std::string> domains, std::size_t hidden,
                   std::uint64_t seed);

  const std::vector<std::string>& domains() const { return domains_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  // Logits [n x K] for stacked features.
  Tensor logits(const std::vector<const DocFeature*>& features) const;
  Tensor loss(const std::vector<const DocFeature*>& features, const std::vector<TokenId>& labels) const;
  // Argmax, ties to the lowest class index.
  std::size_t predict(const DocFeature& feature) const;

  Checkpoint to_checkpoint() const;
  static DomainClassifier from_checkpoint(const Checkpoint& checkpoint);

 private:
  std::size_t vocab_size_;
  std::vector<std::string> domains_;
  std::size_t hidden_;
  ParameterSet params_;
  Linear l1_, l2_;
};

struct ClassifierReport {
  double train_accuracy = 0;
  double heldout_accuracy = 0;
  std::size_t heldout_documents = 0;
};

// labels index into `domains`. Throws std::invalid_argument when fewer than
// two classes occur among the labels.
DomainClassifier train_classifier(const std::vector<DocFeature>& features, const std::vector<std::size_t>& labels,
                                  const std::vector<std::string>& domains, std::size_t vocab_size,
                                  const ClassifierConfig& config,
                                  const std::vector<DocFeature>& heldout = {},
                                  const std::vector<std::size_t>& heldout_labels = {},
                                  ClassifierReport* report = nullptr);

// One predicted domain per document. Empty documents get the first domain
// and a warning.
std::vector<std::string> predict_domains(const Corpus& corpus, const DomainClassifier& classifier,
                                         const Vocabulary& vocab);

// Per-sentence tags: every sentence of a document carries its document's
// predicted tag. Returns one tag id per sentence in corpus order.
std::vector<TokenId> predict_tags(const Corpus& corpus, const DomainClassifier& classifier,
                                  const Vocabulary& vocab);

}  // namespace ctxnmt

#endif  // CTXNMT_CLASSIFIER_H_
