#ifndef CTXNMT_TRAINER_H_
#define CTXNMT_TRAINER_H_

// Training regime: sentence-level pretraining, warm start of context models,
// plateau learning-rate decay with early stopping, best-checkpoint averaging
// and low-rate fine-tuning.

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxnmt/checkpoint.h"
#include "ctxnmt/corpus.h"
#include "ctxnmt/model.h"

namespace ctxnmt {

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  double decay_factor = 0.7;
  std::size_t patience = 8;             // checkpoints without improvement before a decay
  std::size_t checkpoint_interval = 200;  // updates
  std::size_t keep_best = 8;
  // Stop once this many consecutive decays brought no improvement.
  std::size_t max_decays_without_improvement = 3;
  std::size_t max_updates = 0;  // 0: no cap
  std::size_t max_epochs = 0;   // 0: no cap
  std::size_t token_budget = 1024;
  double clip_norm = 0;  // 0: off
  std::uint64_t seed = 1;
  std::string checkpoint_dir;  // empty: nothing written to disk

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Plateau schedule over a sequence of dev perplexities.
class PlateauSchedule {
 public:
  PlateauSchedule(double learning_rate, double decay_factor, std::size_t patience,
                  std::size_t max_decays_without_improvement);

  // Records one checkpoint's dev perplexity. Returns true on a new best.
  bool observe(double dev_perplexity);
  double learning_rate() const { return lr_; }
  std::size_t decays() const { return decays_; }
  bool should_stop() const { return decays_since_best_ >= max_decays_; }
  double best() const { return best_; }

 private:
  double lr_, factor_;
  std::size_t patience_, max_decays_;
  double best_;
  std::size_t bad_ = 0, decays_ = 0, decays_since_best_ = 0;
};

struct CheckpointRecord {
  std::size_t step = 0;
  double learning_rate = 0;
  double train_loss = 0;
  double dev_perplexity = 0;
  std::string path;        // empty when not written
  bool in_memory = false;  // parameters held in TrainHistory::kept
};

struct TrainHistory {
  std::vector<CheckpointRecord> records;  // every checkpoint, in order
  std::vector<Checkpoint> kept;           // the keep_best best, by perplexity
  std::size_t updates = 0;
  std::size_t decays = 0;
  bool early_stopped = false;

  const CheckpointRecord& best() const;
};

// exp(mean token NLL) over the batches, no smoothing.
double perplexity(const Model& model, const std::vector<Batch>& batches);

// Trains `model` in place; on return it holds the last parameters. Examples
// must already be prepared for the model kind. Throws TrainingDiverged on a
// non-finite loss. `log` receives one tab-separated line per checkpoint.
TrainHistory train(Model& model, const std::vector<TrainingExample>& train_examples,
                   const std::vector<TrainingExample>& dev_examples, const TrainConfig& config,
                   std::ostream* log = nullptr);

// Mean of the n best (lowest dev perplexity) checkpoints, n capped at the
// number available. Metadata is taken from the best one.
Checkpoint average_checkpoints(const std::vector<Checkpoint>& checkpoints, std::size_t n = 8);

struct WarmStartReport {
  std::vector<std::string> copied;
  std::vector<std::string> fresh;    // left at their initial values
  std::vector<std::string> ignored;  // in the checkpoint only
};

// Copies every parameter of `base` whose name exists in `model`. Shape
// mismatches on a shared name throw CheckpointError.
WarmStartReport init_from_checkpoint(Model& model, const Checkpoint& base);

// Sentence-level baseline trained to convergence and averaged.
struct PretrainResult {
  Checkpoint averaged;
  TrainHistory history;
};
PretrainResult pretrain_baseline(const ModelConfig& config, std::uint64_t init_seed,
                                 const std::vector<TrainingExample>& train_examples,
                                 const std::vector<TrainingExample>& dev_examples, const TrainConfig& train_config,
                                 std::ostream* log = nullptr);

// Continued training of `checkpoint` on in-domain data; returns the averaged
// result. The original checkpoint is untouched. Throws CheckpointError if the
// examples use ids outside the checkpoint's vocabulary.
PretrainResult fine_tune(const Checkpoint& checkpoint, const std::vector<TrainingExample>& train_examples,
                         const std::vector<TrainingExample>& dev_examples, const TrainConfig& train_config,
                         std::ostream* log = nullptr);

}  // namespace ctxnmt

#endif  // CTXNMT_TRAINER_H_
