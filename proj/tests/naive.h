#ifndef CTXNMT_TESTS_NAIVE_H_
#define CTXNMT_TESTS_NAIVE_H_

// Scalar loop implementations used as independent oracles for the fused,
// vectorized model code.

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "ctxnmt/layers.h"

namespace ctxnmt::naive {

struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> v;
  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}
  double& operator()(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
};

inline Mat from(const Tensor& t) {
  Mat m(t.rows(), t.cols());
  for (std::size_t i = 0; i < t.size(); ++i) m.v[i] = t.at(i);
  return m;
}

inline Mat linear(const Mat& x, const Linear& l) {
  Mat w = from(l.w), out(x.rows, w.cols);
  for (std::size_t r = 0; r < x.rows; ++r)
    for (std::size_t c = 0; c < w.cols; ++c) {
      double s = l.b.at(c);
      for (std::size_t k = 0; k < x.cols; ++k) s += x(r, k) * w(k, c);
      out(r, c) = s;
    }
  return out;
}

inline Mat add(const Mat& a, const Mat& b) {
  Mat out = a;
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += b.v[i];
  return out;
}

inline Mat layer_norm(const Mat& x, const LayerNormParams& p) {
  Mat out(x.rows, x.cols);
  for (std::size_t r = 0; r < x.rows; ++r) {
    double mu = 0, var = 0;
    for (std::size_t c = 0; c < x.cols; ++c) mu += x(r, c);
    mu /= static_cast<double>(x.cols);
    for (std::size_t c = 0; c < x.cols; ++c) var += (x(r, c) - mu) * (x(r, c) - mu);
    var /= static_cast<double>(x.cols);
    for (std::size_t c = 0; c < x.cols; ++c)
      out(r, c) = (x(r, c) - mu) / std::sqrt(var + 1e-6) * p.gain.at(c) + p.bias.at(c);
  }
  return out;
}

inline Mat ffn(const Mat& x, const FeedForward& f) {
  Mat h = linear(x, f.in);
  for (auto& e : h.v) e = e > 0 ? e : 0;
  return linear(h, f.out);
}

// Per-head, per-query loops; rows without an admissible key give zero.
inline Mat mha(const Mat& query_input, const Mat& memory, const MultiHeadAttention& a,
               std::size_t batch, std::size_t qlen, std::size_t klen, bool causal,
               const std::vector<std::uint8_t>& key_valid) {
  Mat q = linear(query_input, a.q), k = linear(memory, a.k), v = linear(memory, a.v);
  const std::size_t d = q.cols, dh = d / a.heads;
  Mat concat(batch * qlen, d);
  std::vector<bool> has_key(batch, false);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < a.heads; ++h)
      for (std::size_t i = 0; i < qlen; ++i) {
        std::vector<double> score(klen, -std::numeric_limits<double>::infinity());
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < klen; ++j) {
          if (!key_valid.empty() && !key_valid[b * klen + j]) continue;
          if (causal && j > i) continue;
          double s = 0;
          for (std::size_t c = 0; c < dh; ++c) s += q(b * qlen + i, h * dh + c) * k(b * klen + j, h * dh + c);
          score[j] = s / std::sqrt(static_cast<double>(dh));
          m = std::max(m, score[j]);
        }
        if (m == -std::numeric_limits<double>::infinity()) continue;
        has_key[b] = true;
        double z = 0;
        for (std::size_t j = 0; j < klen; ++j) z += std::exp(score[j] - m);
        for (std::size_t j = 0; j < klen; ++j) {
          const double p = std::exp(score[j] - m) / z;
          for (std::size_t c = 0; c < dh; ++c) concat(b * qlen + i, h * dh + c) += p * v(b * klen + j, h * dh + c);
        }
      }
  Mat out = linear(concat, a.o);
  for (std::size_t b = 0; b < batch; ++b)
    if (!has_key[b])
      for (std::size_t i = 0; i < qlen; ++i)
        for (std::size_t c = 0; c < d; ++c) out(b * qlen + i, c) = 0;
  return out;
}

inline Mat encoder_layer(const Mat& x, const EncoderLayer& l, std::size_t batch, std::size_t len,
                         const std::vector<std::uint8_t>& valid) {
  Mat h = layer_norm(add(x, mha(x, x, l.self_attn, batch, len, len, false, valid)), l.ln1);
  return layer_norm(add(h, ffn(h, l.ffn)), l.ln2);
}

inline Mat gate_merge(const Linear& gate, const Mat& a, const Mat& b) {
  Mat out(a.rows, a.cols);
  Mat w = from(gate.w);
  for (std::size_t r = 0; r < a.rows; ++r)
    for (std::size_t c = 0; c < a.cols; ++c) {
      double s = gate.b.at(c);
      for (std::size_t k = 0; k < a.cols; ++k) s += a(r, k) * w(k, c) + b(r, k) * w(a.cols + k, c);
      const double g = 1.0 / (1.0 + std::exp(-s));
      out(r, c) = g * a(r, c) + (1 - g) * b(r, c);
    }
  return out;
}

// sqrt(d) * E[id] + PE(pos) for every position of every row.
inline Mat embed(const Tensor& table, const std::vector<TokenId>& ids, std::size_t batch,
                 std::size_t len, std::size_t offset = 0) {
  const std::size_t d = table.cols();
  Mat out(batch * len, d);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t c = 0; c < d; ++c) {
        const double pos = static_cast<double>(t + offset);
        const double rate = std::pow(10000.0, static_cast<double>(c - c % 2) / static_cast<double>(d));
        const double pe = c % 2 == 0 ? std::sin(pos / rate) : std::cos(pos / rate);
        out(b * len + t, c) = std::sqrt(static_cast<double>(d)) * table.at(ids[b * len + t], c) + pe;
      }
  return out;
}

inline double max_abs_diff(const Mat& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.v.size(); ++i) m = std::max(m, std::abs(a.v[i] - b.at(i)));
  return m;
}

}  // namespace ctxnmt::naive

#endif  // CTXNMT_TESTS_NAIVE_H_
