#ifndef CTXNMT_TESTS_TEST_UTIL_H_
#define CTXNMT_TESTS_TEST_UTIL_H_

#include <random>

#include "ctxnmt/ops.h"

namespace ctxnmt::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0,
                            bool parameter = false) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  std::vector<Real> values(shape_size(shape));
  for (auto& v : values) v = static_cast<Real>(dist(rng));
  return parameter ? Tensor::parameter(std::move(shape), std::move(values))
                   : Tensor(std::move(shape), std::move(values));
}

// sum(x * w) with w constant: a scalar whose gradient exercises every entry.
inline Tensor weighted_sum(const Tensor& x, const Tensor& w) {
  return sum(mul(x, reshape(w, x.shape())));
}

}  // namespace ctxnmt::testing

#endif  // CTXNMT_TESTS_TEST_UTIL_H_
