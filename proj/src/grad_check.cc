#include "ctxnmt/grad_check.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace ctxnmt {

GradCheckReport grad_check(const std::function<Tensor()>& f, const NamedTensors& params,
                           const GradCheckOptions& options) {
  std::vector<std::vector<double>> analytic;
  {
    for (const auto& [name, t] : params) {
      Tensor p = t;
      p.zero_grad();
    }
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = f();
    tape.backward(loss);
    for (const auto& [name, t] : params) {
      std::vector<double> g(t.size(), 0.0);
      if (t.has_grad())
        for (std::size_t i = 0; i < t.size(); ++i) g[i] = static_cast<double>(t.grad()[i]);
      analytic.push_back(std::move(g));
    }
  }

  auto evaluate = [&]() {
    NoGradScope no_grad;
    return static_cast<double>(f().item());
  };

  GradCheckReport report;
  std::mt19937_64 rng(options.seed);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor t = params[p].second;
    std::vector<std::size_t> indices(t.size());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    if (options.max_entries_per_tensor > 0 && indices.size() > options.max_entries_per_tensor) {
      std::shuffle(indices.begin(), indices.end(), rng);
      indices.resize(options.max_entries_per_tensor);
      std::sort(indices.begin(), indices.end());
    }
    for (std::size_t i : indices) {
      Real& x = t.mutable_values()[i];
      const Real original = x;
      x = original + static_cast<Real>(options.epsilon);
      const double plus = evaluate();
      x = original - static_cast<Real>(options.epsilon);
      const double minus = evaluate();
      x = original;
      const double numeric = (plus - minus) / (2.0 * options.epsilon);
      const double a = analytic[p][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.denominator_floor});
      const double rel = std::abs(a - numeric) / denom;
      report.max_relative_error = std::max(report.max_relative_error, rel);
      ++report.checked;
      if (!(rel < options.tolerance))
        report.failures.push_back({params[p].first, i, a, numeric, rel});
    }
  }
  return report;
}

}  // namespace ctxnmt
