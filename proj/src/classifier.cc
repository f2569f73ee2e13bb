#include "ctxnmt/classifier.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

#include "ctxnmt/log.h"
#include "ctxnmt/optim.h"

namespace ctxnmt {

namespace {

Tensor xavier(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<Real> v(in * out);
  for (auto& x : v) x = static_cast<Real>(dist(rng));
  return Tensor::parameter({in, out}, std::move(v));
}

double accuracy(const DomainClassifier& c, const std::vector<DocFeature>& f, const std::vector<std::size_t>& y) {
  if (f.empty()) return 0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < f.size(); ++i) ok += c.predict(f[i]) == y[i];
  return static_cast<double>(ok) / static_cast<double>(f.size());
}

}  // namespace

DocFeature featurize(const Document& doc, const Vocabulary& vocab) {
  DocFeature f;
  f.doc_id = doc.id;
  f.values.assign(vocab.size(), Real(0));
  double total = 0;
  for (const auto& pair : doc.sentences)
    for (const auto& w : pair.source) {
      const TokenId id = vocab.id(w);
      if (vocab.is_reserved(id)) continue;
      f.values[static_cast<std::size_t>(id)] += 1;
      total += 1;
    }
  if (total == 0) {
    f.degenerate = true;
    return f;
  }
  for (auto& v : f.values) v = static_cast<Real>(v / total);
  return f;
}

DomainClassifier::DomainClassifier(std::size_t vocab_size, std::vector<std::string> domains, std::size_t hidden,
                                   std::uint64_t seed)
    : vocab_size_(vocab_size), domains_(std::move(domains)), hidden_(hidden) {
  if (domains_.size() < 2) throw std::invalid_argument("domain classifier needs at least two domains");
  std::mt19937_64 rng(seed);
  l1_ = {params_.add("l1.w", xavier(vocab_size_, hidden_, rng)),
         params_.add("l1.b", Tensor::parameter({hidden_}, std::vector<Real>(hidden_, 0)))};
  l2_ = {params_.add("l2.w", xavier(hidden_, domains_.size(), rng)),
         params_.add("l2.b", Tensor::parameter({domains_.size()}, std::vector<Real>(domains_.size(), 0)))};
}

Tensor DomainClassifier::logits(const std::vector<const DocFeature*>& features) const {
  std::vector<Real> x;
  x.reserve(features.size() * vocab_size_);
  for (const DocFeature* f : features) {
    if (f->values.size() != vocab_size_)
      throw DimensionError("classifier: feature of size " + std::to_string(f->values.size()) +
                           " for vocabulary of " + std::to_string(vocab_size_));
    x.insert(x.end(), f->values.begin(), f->values.end());
  }
  Tensor input(Shape{features.size(), vocab_size_}, std::move(x));
  return l2_.forward(relu(l1_.forward(input)));
}

Tensor DomainClassifier::loss(const std::vector<const DocFeature*>& features,
                              const std::vector<TokenId>& labels) const {
  return label_smoothed_loss(logits(features), labels, 0, -1);
}

std::size_t DomainClassifier::predict(const DocFeature& feature) const {
  NoGradScope ng;
  Tensor z = logits({&feature});
  std::size_t best = 0;
  for (std::size_t k = 1; k < domains_.size(); ++k)
    if (z.at(k) > z.at(best)) best = k;
  return best;
}

Checkpoint DomainClassifier::to_checkpoint() const {
  Checkpoint c = Checkpoint::capture(params_);
  c.kind = "classifier";
  c.config = {{"vocab_size", vocab_size_}, {"domains", domains_}, {"hidden", hidden_}};
  c.fingerprint = "classifier";
  return c;
}

DomainClassifier DomainClassifier::from_checkpoint(const Checkpoint& checkpoint) {
  if (checkpoint.kind != "classifier") throw CheckpointError("checkpoint holds a " + checkpoint.kind);
  DomainClassifier c(checkpoint.config.at("vocab_size").get<std::size_t>(),
                     checkpoint.config.at("domains").get<std::vector<std::string>>(),
                     checkpoint.config.at("hidden").get<std::size_t>(), 0);
  checkpoint.restore(c.params_);
  return c;
}

DomainClassifier train_classifier(const std::vector<DocFeature>& features, const std::vector<std::size_t>& labels,
                                  const std::vector<std::string>& domains, std::size_t vocab_size,
                                  const ClassifierConfig& config, const std::vector<DocFeature>& heldout,
                                  const std::vector<std::size_t>& heldout_labels, ClassifierReport* report) {
  if (features.size() != labels.size()) throw std::invalid_argument("train_classifier: one label per document");
  std::set<std::size_t> classes(labels.begin(), labels.end());
  if (classes.size() < 2)
    throw std::invalid_argument("train_classifier: training set has a single class; need at least two");
  for (std::size_t y : labels)
    if (y >= domains.size()) throw std::out_of_range("train_classifier: label outside the domain list");

  DomainClassifier clf(vocab_size, domains, config.hidden, config.seed);
  Adam adam(clf.parameters());
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < features.size(); ++i)
    if (!features[i].degenerate) order.push_back(i);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      std::vector<const DocFeature*> batch;
      std::vector<TokenId> y;
      for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i) {
        batch.push_back(&features[order[i]]);
        y.push_back(static_cast<TokenId>(labels[order[i]]));
      }
      Tape tape;
      clf.parameters().zero_grad();
      {
        TapeScope scope(tape);
        tape.backward(clf.loss(batch, y));
      }
      adam.step(clf.parameters(), config.learning_rate);
    }
  }
  if (report) {
    report->train_accuracy = accuracy(clf, features, labels);
    report->heldout_accuracy = accuracy(clf, heldout, heldout_labels);
    report->heldout_documents = heldout.size();
  }
  return clf;
}

std::vector<std::string> predict_domains(const Corpus& corpus, const DomainClassifier& classifier,
                                         const Vocabulary& vocab) {
  std::vector<std::string> out;
  for (const auto& doc : corpus) {
    DocFeature f = featurize(doc, vocab);
    if (f.degenerate) {
      log_warning("document " + doc.id + " has no countable tokens; tagging it as " + classifier.domains()[0]);
      out.push_back(classifier.domains()[0]);
    } else {
      out.push_back(classifier.domains()[classifier.predict(f)]);
    }
  }
  return out;
}

std::vector<TokenId> predict_tags(const Corpus& corpus, const DomainClassifier& classifier,
                                  const Vocabulary& vocab) {
  std::vector<std::string> domains = predict_domains(corpus, classifier, vocab);
  std::vector<TokenId> tags;
  for (std::size_t d = 0; d < corpus.size(); ++d)
    tags.insert(tags.end(), corpus[d].sentences.size(), vocab.tag_id(domains[d]));
  return tags;
}

}  // namespace ctxnmt
