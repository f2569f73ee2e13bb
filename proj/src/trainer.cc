#include "ctxnmt/trainer.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "ctxnmt/log.h"
#include "ctxnmt/optim.h"

namespace ctxnmt {

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
  if (!(learning_rate >= 0)) fail("learning_rate must be >= 0");
  if (!(decay_factor > 0 && decay_factor < 1)) fail("decay_factor must lie in (0, 1)");
  if (patience < 1) fail("patience must be >= 1");
  if (checkpoint_interval < 1) fail("checkpoint_interval must be >= 1");
  if (keep_best < 1) fail("keep_best must be >= 1");
  if (max_decays_without_improvement < 1) fail("max_decays_without_improvement must be >= 1");
  if (token_budget < 1) fail("token_budget must be >= 1");
  if (clip_norm < 0) fail("clip_norm must be >= 0");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"learning_rate", c.learning_rate},
       {"decay_factor", c.decay_factor},
       {"patience", c.patience},
       {"checkpoint_interval", c.checkpoint_interval},
       {"keep_best", c.keep_best},
       {"max_decays_without_improvement", c.max_decays_without_improvement},
       {"max_updates", c.max_updates},
       {"max_epochs", c.max_epochs},
       {"token_budget", c.token_budget},
       {"clip_norm", c.clip_norm},
       {"seed", c.seed},
       {"checkpoint_dir", c.checkpoint_dir}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("learning_rate", c.learning_rate);
  get("decay_factor", c.decay_factor);
  get("patience", c.patience);
  get("checkpoint_interval", c.checkpoint_interval);
  get("keep_best", c.keep_best);
  get("max_decays_without_improvement", c.max_decays_without_improvement);
  get("max_updates", c.max_updates);
  get("max_epochs", c.max_epochs);
  get("token_budget", c.token_budget);
  get("clip_norm", c.clip_norm);
  get("seed", c.seed);
  get("checkpoint_dir", c.checkpoint_dir);
  for (auto it = j.begin(); it != j.end(); ++it) {
    static const std::set<std::string> known = {"learning_rate", "decay_factor", "patience", "checkpoint_interval",
                                                "keep_best", "max_decays_without_improvement", "max_updates",
                                                "max_epochs", "token_budget", "clip_norm", "seed",
                                                "checkpoint_dir"};
    if (!known.count(it.key())) throw ConfigError("train config: unknown key '" + it.key() + "'");
  }
}

PlateauSchedule::PlateauSchedule(double learning_rate, double decay_factor, std::size_t patience,
                                 std::size_t max_decays_without_improvement)
    : lr_(learning_rate),
      factor_(decay_factor),
      patience_(patience),
      max_decays_(max_decays_without_improvement),
      best_(std::numeric_limits<double>::infinity()) {}

bool PlateauSchedule::observe(double dev_perplexity) {
  if (dev_perplexity < best_) {
    best_ = dev_perplexity;
    bad_ = 0;
    decays_since_best_ = 0;
    return true;
  }
  if (++bad_ >= patience_) {
    lr_ *= factor_;
    ++decays_;
    ++decays_since_best_;
    bad_ = 0;
  }
  return false;
}

const CheckpointRecord& TrainHistory::best() const {
  if (records.empty()) throw std::logic_error("training history is empty");
  return *std::min_element(records.begin(), records.end(), [](const auto& a, const auto& b) {
    return a.dev_perplexity < b.dev_perplexity;
  });
}

double perplexity(const Model& model, const std::vector<Batch>& batches) {
  double total = 0;
  std::size_t count = 0;
  for (const auto& b : batches) {
    auto [nll, n] = model.nll(b);
    total += nll;
    count += n;
  }
  if (count == 0) throw std::invalid_argument("perplexity: no target tokens");
  return std::exp(total / static_cast<double>(count));
}

namespace {

void check_ids(const ModelConfig& config, const std::vector<TrainingExample>& examples) {
  const auto V = static_cast<TokenId>(config.vocab_size);
  for (const auto& ex : examples)
    for (const auto* seq : {&ex.source, &ex.target, &ex.context})
      for (TokenId id : *seq)
        if (id < 0 || id >= V)
          throw CheckpointError("token id " + std::to_string(id) + " in " + ex.doc_id +
                                " is outside the model vocabulary of " + std::to_string(V));
}

// Fixed, unshuffled-seed batching so every perplexity of a run sums in the
// same order.
std::vector<Batch> dev_batches(const std::vector<TrainingExample>& examples, std::size_t budget) {
  for (const auto& ex : examples) budget = std::max(budget, ex.target.size());
  return batch_by_tokens(examples, budget, 0);
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(8) << v;
  return os.str();
}

}  // namespace

TrainHistory train(Model& model, const std::vector<TrainingExample>& train_examples,
                   const std::vector<TrainingExample>& dev_examples, const TrainConfig& config, std::ostream* log) {
  config.validate();
  if (train_examples.empty()) throw std::invalid_argument("train: no training examples");
  if (dev_examples.empty()) throw std::invalid_argument("train: no dev examples");
  check_ids(model.config(), train_examples);
  check_ids(model.config(), dev_examples);
  if (!config.checkpoint_dir.empty()) std::filesystem::create_directories(config.checkpoint_dir);

  const std::vector<Batch> dev = dev_batches(dev_examples, config.token_budget);
  AdamOptions adam_options;
  adam_options.clip_norm = config.clip_norm;
  Adam adam(model.parameters(), adam_options);
  PlateauSchedule schedule(config.learning_rate, config.decay_factor, config.patience,
                           config.max_decays_without_improvement);
  std::mt19937_64 dropout_rng(config.seed);
  TrainHistory history;
  if (log) *log << "step\tlr\ttrain_loss\tdev_ppl\tcheckpoint\n";

  double loss_sum = 0;
  std::size_t loss_count = 0;
  auto checkpoint = [&](std::size_t step) {
    const double lr = schedule.learning_rate();
    const double ppl = perplexity(model, dev);
    if (!std::isfinite(ppl))
      throw TrainingDiverged("dev perplexity is not finite at update " + std::to_string(step));
    CheckpointRecord rec;
    rec.step = step;
    rec.learning_rate = lr;
    rec.train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : std::nan("");
    rec.dev_perplexity = ppl;
    loss_sum = 0;
    loss_count = 0;
    Checkpoint ck = model.to_checkpoint(step, ppl);
    ck.meta["learning_rate"] = lr;
    ck.meta["train_loss"] = std::isfinite(rec.train_loss) ? nlohmann::json(rec.train_loss) : nlohmann::json();
    if (!config.checkpoint_dir.empty()) {
      std::ostringstream name;
      name << "step" << std::setw(7) << std::setfill('0') << step << ".ckpt";
      rec.path = (std::filesystem::path(config.checkpoint_dir) / name.str()).string();
      save_checkpoint(rec.path, ck);
    }
    // Keep the keep_best lowest perplexities in memory.
    history.kept.push_back(std::move(ck));
    std::stable_sort(history.kept.begin(), history.kept.end(),
                     [](const Checkpoint& a, const Checkpoint& b) { return a.dev_perplexity < b.dev_perplexity; });
    if (history.kept.size() > config.keep_best) history.kept.resize(config.keep_best);
    history.records.push_back(rec);
    for (auto& r : history.records) {
      r.in_memory = false;
      for (const auto& k : history.kept)
        if (k.step == r.step) r.in_memory = true;
    }
    if (log)
      *log << step << '\t' << format_double(lr) << '\t' << format_double(rec.train_loss) << '\t'
           << format_double(ppl) << '\t' << rec.path << '\n'
           << std::flush;
    schedule.observe(ppl);
    history.decays = schedule.decays();
  };

  checkpoint(0);
  std::size_t step = 0;
  bool done = false;
  for (std::size_t epoch = 0; !done; ++epoch) {
    if (config.max_epochs && epoch >= config.max_epochs) break;
    const auto batches = batch_by_tokens(train_examples, config.token_budget, config.seed * 1000003ull + epoch);
    for (const auto& batch : batches) {
      Tape tape;
      model.parameters().zero_grad();
      double value;
      {
        TapeScope scope(tape);
        Tensor loss = model.loss(batch, &dropout_rng);
        value = loss.item();
        if (!std::isfinite(value))
          throw TrainingDiverged("training loss is " + std::to_string(value) + " at update " +
                                 std::to_string(step + 1) + " (learning rate " +
                                 format_double(schedule.learning_rate()) + ")");
        tape.backward(loss);
      }
      const double norm = adam.step(model.parameters(), schedule.learning_rate());
      if (!std::isfinite(norm))
        throw TrainingDiverged("gradient norm is not finite at update " + std::to_string(step + 1));
      ++step;
      loss_sum += value;
      ++loss_count;
      if (step % config.checkpoint_interval == 0) {
        checkpoint(step);
        if (schedule.should_stop()) {
          history.early_stopped = true;
          done = true;
          break;
        }
      }
      if (config.max_updates && step >= config.max_updates) {
        done = true;
        break;
      }
    }
  }
  if (step % config.checkpoint_interval != 0) checkpoint(step);
  history.updates = step;
  return history;
}

Checkpoint average_checkpoints(const std::vector<Checkpoint>& checkpoints, std::size_t n) {
  if (checkpoints.empty()) throw std::invalid_argument("average_checkpoints: no checkpoints");
  std::vector<std::size_t> order(checkpoints.size());
  std::iota(order.begin(), order.end(), 0);
  // Ties by perplexity fall back to step so the choice does not depend on
  // the input order.
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = checkpoints[a];
    const auto& y = checkpoints[b];
    if (x.dev_perplexity != y.dev_perplexity) return x.dev_perplexity < y.dev_perplexity;
    return x.step < y.step;
  });
  n = std::max<std::size_t>(1, std::min(n, checkpoints.size()));
  order.resize(n);
  // Sum in step order so the result is independent of input permutation.
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return checkpoints[a].step < checkpoints[b].step;
  });

  const Checkpoint& best = *std::min_element(
      checkpoints.begin(), checkpoints.end(), [](const Checkpoint& a, const Checkpoint& b) {
        if (a.dev_perplexity != b.dev_perplexity) return a.dev_perplexity < b.dev_perplexity;
        return a.step < b.step;
      });
  Checkpoint out = best;
  for (std::size_t i = 0; i < out.arrays.size(); ++i) {
    auto& [name, values] = out.arrays[i];
    // Mean as first + mean offset, so identical inputs come back bit-exact.
    std::vector<const std::vector<Real>*> srcs;
    for (std::size_t idx : order) {
      const auto* src = checkpoints[idx].find(name);
      if (!src || src->size() != values.size())
        throw CheckpointError("average_checkpoints: parameter " + name + " differs between checkpoints");
      srcs.push_back(src);
    }
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double first = static_cast<double>((*srcs[0])[k]);
      double offset = 0;
      for (const auto* src : srcs) offset += static_cast<double>((*src)[k]) - first;
      values[k] = static_cast<Real>(first + offset / static_cast<double>(n));
    }
  }
  std::vector<std::size_t> steps;
  for (std::size_t idx : order) steps.push_back(checkpoints[idx].step);
  out.meta["averaged_steps"] = steps;
  return out;
}

WarmStartReport init_from_checkpoint(Model& model, const Checkpoint& base) {
  WarmStartReport report;
  std::set<std::string> model_names;
  for (auto& [name, tensor] : model.parameters().items()) {
    model_names.insert(name);
    const auto* values = base.find(name);
    if (!values) {
      report.fresh.push_back(name);
      continue;
    }
    std::size_t idx = 0;
    while (base.arrays[idx].first != name) ++idx;
    if (base.shapes[idx] != tensor.shape())
      throw CheckpointError("warm start: parameter " + name + " has shape " + shape_string(base.shapes[idx]) +
                            " in the checkpoint but " + shape_string(tensor.shape()) + " in the model");
    std::copy(values->begin(), values->end(), tensor.mutable_values().begin());
    report.copied.push_back(name);
  }
  for (const auto& [name, values] : base.arrays)
    if (!model_names.count(name)) report.ignored.push_back(name);
  return report;
}

PretrainResult pretrain_baseline(const ModelConfig& config, std::uint64_t init_seed,
                                 const std::vector<TrainingExample>& train_examples,
                                 const std::vector<TrainingExample>& dev_examples, const TrainConfig& train_config,
                                 std::ostream* log) {
  if (config.kind != ModelKind::kSent) throw ConfigError("pretrain_baseline expects a sentence-level config");
  Model model(config, init_seed);
  PretrainResult result;
  result.history = train(model, train_examples, dev_examples, train_config, log);
  result.averaged = average_checkpoints(result.history.kept, train_config.keep_best);
  return result;
}

PretrainResult fine_tune(const Checkpoint& checkpoint, const std::vector<TrainingExample>& train_examples,
                         const std::vector<TrainingExample>& dev_examples, const TrainConfig& train_config,
                         std::ostream* log) {
  Model model = Model::from_checkpoint(checkpoint);
  PretrainResult result;
  result.history = train(model, train_examples, dev_examples, train_config, log);
  // The average of the best checkpoints can land above the best single one;
  // keep whichever is better so the monitored perplexity never regresses.
  Checkpoint averaged = average_checkpoints(result.history.kept, train_config.keep_best);
  Model probe = Model::from_checkpoint(averaged);
  averaged.dev_perplexity = perplexity(probe, dev_batches(dev_examples, train_config.token_budget));
  const Checkpoint& best = result.history.kept.front();
  result.averaged = averaged.dev_perplexity <= best.dev_perplexity ? std::move(averaged) : best;
  return result;
}

}  // namespace ctxnmt
