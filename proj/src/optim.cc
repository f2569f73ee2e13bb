#include "ctxnmt/optim.h"

#include <cmath>
#include <stdexcept>

namespace ctxnmt {

Adam::Adam(const ParameterSet& params, AdamOptions options) : options_(options) {
  for (const auto& [name, t] : params.items()) {
    m_.emplace_back(t.size(), 0.0);
    v_.emplace_back(t.size(), 0.0);
  }
}

double Adam::step(ParameterSet& params, double lr) {
  auto& items = params.items();
  if (items.size() != m_.size()) throw std::logic_error("Adam: parameter set changed size");
  double sq = 0;
  for (const auto& [name, t] : items)
    if (t.has_grad())
      for (Real g : t.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  const double factor = options_.clip_norm > 0 && norm > options_.clip_norm ? options_.clip_norm / norm : 1.0;

  ++t_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t p = 0; p < items.size(); ++p) {
    Tensor& t = items[p].second;
    const bool has = t.has_grad();
    std::span<Real> w = t.mutable_values();
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double g = has ? static_cast<double>(t.grad()[i]) * factor : 0.0;
      m[i] = b1 * m[i] + (1 - b1) * g;
      v[i] = b2 * v[i] + (1 - b2) * g * g;
      w[i] -= static_cast<Real>(lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + options_.epsilon));
    }
  }
  return norm;
}

}  // namespace ctxnmt
