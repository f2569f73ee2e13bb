#ifndef CTXNMT_EXPERIMENT_H_
#define CTXNMT_EXPERIMENT_H_

// Experiment orchestration shared by the command-line tool and the
// acceptance suite: a manifest, a data set on disk, and an output directory
// that caches every trained model.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxnmt/checkpoint.h"
#include "ctxnmt/classifier.h"
#include "ctxnmt/config.h"
#include "ctxnmt/corpus.h"
#include "ctxnmt/decoding.h"
#include "ctxnmt/evaluation.h"
#include "ctxnmt/synth.h"
#include "ctxnmt/trainer.h"

namespace ctxnmt {

// Environment variable naming the default output root.
inline constexpr const char* kOutputRootEnv = "CTXNMT_OUT";
// $CTXNMT_OUT, or "runs" when unset.
std::string default_output_root();

struct Manifest {
  std::string name = "desk";
  SynthConfig synth;     // used when the data directory has no corpus yet
  std::string data_dir;  // empty: <out>/data
  // Architecture template; kind, vocabulary and context size are per system.
  ModelConfig model;
  TrainConfig pretrain;   // sentence-level baseline from scratch
  TrainConfig doc_train;  // every other kind, warm-started from the baseline
  TrainConfig fine_tune;  // continued training on the held-out tuning split
  ClassifierConfig classifier;
  std::size_t context = 10;
  std::size_t beam = 12;
  std::size_t workers = 1;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::size_t bootstrap_resamples = 1000;
  std::uint64_t bootstrap_seed = 12345;
  std::size_t domain_words = 100;
  std::size_t ibm1_iterations = 5;

  void validate() const;
  // Built-in manifests: "desk" (the default synthetic study) and "smoke"
  // (a seconds-scale run for tests).
  static Manifest preset(const std::string& name);
  // A JSON file path, or the name of a preset.
  static Manifest load(const std::string& path_or_preset);
  // A JSON object merged over the preset named by its "base" key (default
  // desk).
  static Manifest from_overrides(nlohmann::json overrides);
};

void to_json(nlohmann::json& j, const Manifest& m);
void from_json(const nlohmann::json& j, Manifest& m);

// train/dev/test corpora plus the optional held-out tuning split and oracle.
struct DataSet {
  Corpus train, dev, test, tune, tune_dev;
  std::vector<OracleEntry> oracle;
  bool has_oracle = false;

  std::vector<std::string> train_domains() const { return corpus_domains(train); }
  std::vector<std::string> test_domains() const { return corpus_domains(test); }
  // Test domains absent from training.
  std::vector<std::string> zero_domains() const;

  static bool exists(const std::string& dir);
  // Throws std::runtime_error naming the missing file.
  static DataSet load(const std::string& dir);
};

struct SystemSpec {
  ModelKind kind = ModelKind::kSent;
  std::size_t context = 0;  // ignored for kinds without context
  std::uint64_t seed = 1;
  bool fine_tuned = false;

  // e.g. "domemb_avg-ctx10-s1" or "sent-s2-ft".
  std::string name() const;
  static SystemSpec make(ModelKind kind, std::size_t context, std::uint64_t seed, bool fine_tuned = false);
};

struct SystemScores {
  std::map<std::string, double> bleu;      // per test domain, plus "joint"
  std::map<std::string, double> accuracy;  // oracle disambiguation, when available
  std::map<std::string, F1Result> f1;      // domain-word F1
};

class Experiment {
 public:
  Experiment(Manifest manifest, std::string out_dir);
  ~Experiment();

  const Manifest& manifest() const { return manifest_; }
  const std::string& out_dir() const { return out_dir_; }
  std::string path(const std::string& relative) const;

  // Loads the data directory, generating the synthetic corpus if it is empty.
  const DataSet& data();
  const Vocabulary& vocab();

  ModelConfig model_config(ModelKind kind, std::size_t context);
  // Trains on first use, then serves from memory or <out>/models. A cached
  // file trained under a different manifest or data set is retrained.
  const Checkpoint& checkpoint(const SystemSpec& system);
  const Model& model(const SystemSpec& system);

  const DomainClassifier& classifier();
  ClassifierReport classifier_report();

  // Raw examples of a corpus. Domain tags come from the classifier when
  // `predicted_tags` is set, from the gold domain otherwise.
  std::vector<TrainingExample> examples(const Corpus& corpus, std::size_t context, bool predicted_tags);

  // Equal-weight ensemble; all members must share one context size.
  // Returns words without <EOS>, in corpus order.
  std::vector<Tokens> translate(const std::vector<SystemSpec>& members, const Corpus& corpus,
                                std::size_t beam = 0);
  std::vector<Tokens> translate_examples(const std::vector<SystemSpec>& members,
                                         const std::vector<TrainingExample>& examples, std::size_t beam = 0);

  const DomainWordSet& domain_words();
  const AlignmentModel& aligner();

  // Scores per test domain and jointly. `hyps` follow test-corpus order.
  SystemScores score(const std::vector<Tokens>& hyps);
  SystemScores evaluate(const std::vector<SystemSpec>& members, EvalReport* report = nullptr,
                        const std::string& label = "");

  // Paired bootstrap of `system` against `baseline` on one test domain (or
  // "joint"); p_value is the chance that the baseline is at least as good.
  BootstrapResult bootstrap(const std::vector<Tokens>& system, const std::vector<Tokens>& baseline,
                            const std::string& domain);

  // Test domains x (test domains + "True") with each domain's representative
  // context; the metric is oracle accuracy when available, BLEU otherwise.
  AblationGrid ablation(const SystemSpec& system);

  // Mean seconds per sentence decoding the test set: per decoding chunk, the
  // fastest of `repeats` interleaved rounds.
  std::map<std::string, double> timing(const std::vector<SystemSpec>& systems, std::size_t repeats = 3,
                                       std::size_t max_sentences = 0);

  // Stores the manifest plus the command line that used it.
  void write_manifest(const nlohmann::json& run) const;

 private:
  std::string system_fingerprint(const SystemSpec& system);
  Checkpoint train_system(const SystemSpec& system);
  std::string data_fingerprint();

  Manifest manifest_;
  std::string out_dir_;
  std::optional<DataSet> data_;
  std::optional<Vocabulary> vocab_;
  std::string data_hash_;
  std::map<std::string, Checkpoint> checkpoints_;
  std::map<std::string, std::unique_ptr<Model>> models_;
  std::unique_ptr<DomainClassifier> classifier_;
  std::optional<ClassifierReport> classifier_report_;
  std::optional<DomainWordSet> domain_words_;
  std::unique_ptr<AlignmentModel> aligner_;
};

// Words of a hypothesis without the trailing <EOS>.
Tokens hypothesis_words(const Hypothesis& h, const Vocabulary& vocab);

// Source and target token lists of a corpus, in order.
std::vector<Tokens> corpus_sources(const Corpus& corpus);
std::vector<Tokens> corpus_targets(const Corpus& corpus);

// Line ranges of each domain in a corpus, by domain.
std::map<std::string, std::vector<std::size_t>> lines_by_domain(const Corpus& corpus);

// Parameter-count cross-check against the reference sizes (61M, +2.1M, +13M).
struct ParamRow {
  std::string kind;
  std::size_t parameters = 0;
  long long delta = 0;  // against the sentence-level baseline
};
std::vector<ParamRow> parameter_table(const ModelConfig& base);

struct ParamCheck {
  std::string what;
  double value = 0;
  double target = 0;
  double tolerance = 0;  // relative; 0 demands equality
  bool pass = false;
};
// Reference-size checks for the large configuration with a joint vocabulary
// of `vocab_size` entries.
std::vector<ParamCheck> parameter_checks(std::size_t vocab_size = 32000);

}  // namespace ctxnmt

#endif  // CTXNMT_EXPERIMENT_H_
