#ifndef CTXNMT_OPTIM_H_
#define CTXNMT_OPTIM_H_

#include <vector>

#include "ctxnmt/layers.h"

namespace ctxnmt {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Global L2 norm clip; 0 disables.
  double clip_norm = 0;
};

class Adam {
 public:
  explicit Adam(const ParameterSet& params, AdamOptions options = {});

  // One update from the gradients currently stored on the parameters.
  // Parameters without a gradient count as zero-gradient. Returns the global
  // gradient norm before clipping.
  double step(ParameterSet& params, double learning_rate);
  std::size_t steps() const { return t_; }

 private:
  AdamOptions options_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace ctxnmt

#endif  // CTXNMT_OPTIM_H_
