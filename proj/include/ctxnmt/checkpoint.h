#ifndef CTXNMT_CHECKPOINT_H_
#define CTXNMT_CHECKPOINT_H_

// Binary parameter container shared by translation models and the domain
// classifier:
//   8 bytes magic "CTXNMT\x01\n", u64 little-endian header length,
//   JSON header {kind, config, fingerprint, step, dev_perplexity, meta,
//   params: [{name, shape}]}, then every array as little-endian float64 in
//   header order.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ctxnmt/layers.h"

namespace ctxnmt {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  std::string kind = "model";  // "model" or "classifier"
  nlohmann::json config;
  std::string fingerprint;
  std::size_t step = 0;
  double dev_perplexity = 0;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, std::vector<Real>>> arrays;
  std::vector<Shape> shapes;

  // Deep copy of the current values of `params`.
  static Checkpoint capture(const ParameterSet& params);
  // Copies values into `params`; every name must be present on both sides
  // with equal shapes, otherwise CheckpointError naming the mismatch.
  void restore(ParameterSet& params) const;
  const std::vector<Real>* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace ctxnmt

#endif  // CTXNMT_CHECKPOINT_H_
