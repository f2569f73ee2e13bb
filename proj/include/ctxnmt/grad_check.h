#ifndef CTXNMT_GRAD_CHECK_H_
#define CTXNMT_GRAD_CHECK_H_

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ctxnmt/tensor.h"

namespace ctxnmt {

struct GradCheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor of the relative error, so entries whose true gradient
  // is ~0 are judged by absolute error instead.
  double denominator_floor = 1e-6;
  // 0 checks every entry; otherwise a seeded sample of this many per tensor.
  std::size_t max_entries_per_tensor = 0;
  unsigned long long seed = 7;
};

struct GradCheckEntry {
  std::string name;
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double relative_error = 0;
};

struct GradCheckReport {
  double max_relative_error = 0;
  std::size_t checked = 0;
  std::vector<GradCheckEntry> failures;
  bool passed() const { return failures.empty(); }
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// Compares tape gradients of the scalar `f` against central differences
// (f(x+eps) - f(x-eps)) / 2eps for every checked entry of `params`. `f` must
// be deterministic and rebuild its graph from the current parameter values.
GradCheckReport grad_check(const std::function<Tensor()>& f, const NamedTensors& params,
                           const GradCheckOptions& options = {});

}  // namespace ctxnmt

#endif  // CTXNMT_GRAD_CHECK_H_
