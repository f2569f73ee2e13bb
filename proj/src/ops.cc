#include "ctxnmt/ops.h"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

namespace ctxnmt {

namespace {

using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;
using StridedMap = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;

ConstMatMap as_matrix(const Tensor& t) {
  return ConstMatMap(t.data(), static_cast<Eigen::Index>(t.rows()),
                     static_cast<Eigen::Index>(t.cols()));
}

MatMap value_matrix(Tensor& t) {
  return MatMap(t.mutable_data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

MatMap grad_matrix(const Tensor& t) {
  detail::Node* n = t.node();
  return MatMap(n->grad_data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

// Registers `fn` on the active tape when any input needs a gradient.
Tensor finish(Tensor out, std::initializer_list<const Tensor*> inputs, Tape::Backward fn) {
  Tape* tape = active_tape();
  if (tape == nullptr) return out;
  bool any = false;
  for (const Tensor* t : inputs) any = any || t->requires_grad();
  if (!any) return out;
  out.set_requires_grad(true);
  tape->record(out.node_ptr(), std::move(fn));
  return out;
}

void require_same_size(const Tensor& a, const Tensor& b, const char* op) {
  if (a.size() != b.size())
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner dimensions of " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " disagree");
  Tensor out(Shape{a.rows(), b.cols()});
  value_matrix(out).noalias() = as_matrix(a) * as_matrix(b);
  return finish(out, {&a, &b}, [a, b](detail::Node& o) {
    MatMap g(o.grad.data(), static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(b.cols()));
    if (a.requires_grad()) grad_matrix(a).noalias() += g * as_matrix(b).transpose();
    if (b.requires_grad()) grad_matrix(b).noalias() += as_matrix(a).transpose() * g;
  });
}

Tensor matmul_transposed(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols())
    throw DimensionError("matmul_transposed: inner dimensions of " + shape_string(a.shape()) +
                         " and " + shape_string(b.shape()) + "^T disagree");
  Tensor out(Shape{a.rows(), b.rows()});
  value_matrix(out).noalias() = as_matrix(a) * as_matrix(b).transpose();
  return finish(out, {&a, &b}, [a, b](detail::Node& o) {
    MatMap g(o.grad.data(), static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(b.rows()));
    if (a.requires_grad()) grad_matrix(a).noalias() += g * as_matrix(b);
    if (b.requires_grad()) grad_matrix(b).noalias() += g.transpose() * as_matrix(a);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_size(a, b, "add");
  Tensor out(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.mutable_data()[i] = a.data()[i] + b.data()[i];
  return finish(out, {&a, &b}, [a, b, n](detail::Node& o) {
    for (const Tensor* t : {&a, &b}) {
      if (!t->requires_grad()) continue;
      Real* g = t->node()->grad_data();
      for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_size(a, b, "sub");
  Tensor out(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.mutable_data()[i] = a.data()[i] - b.data()[i];
  return finish(out, {&a, &b}, [a, b, n](detail::Node& o) {
    if (a.requires_grad()) {
      Real* g = a.node()->grad_data();
      for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[i];
    }
    if (b.requires_grad()) {
      Real* g = b.node()->grad_data();
      for (std::size_t i = 0; i < n; ++i) g[i] -= o.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_size(a, b, "mul");
  Tensor out(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.mutable_data()[i] = a.data()[i] * b.data()[i];
  return finish(out, {&a, &b}, [a, b, n](detail::Node& o) {
    if (a.requires_grad()) {
      Real* g = a.node()->grad_data();
      for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[i] * b.data()[i];
    }
    if (b.requires_grad()) {
      Real* g = b.node()->grad_data();
      for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[i] * a.data()[i];
    }
  });
}

Tensor scale(const Tensor& a, Real factor) {
  Tensor out(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.mutable_data()[i] = a.data()[i] * factor;
  return finish(out, {&a}, [a, n, factor](detail::Node& o) {
    Real* g = a.node()->grad_data();
    for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[i] * factor;
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t rows = x.rows(), cols = x.cols();
  if (bias.size() != cols)
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " does not fit rows of " +
                         shape_string(x.shape()));
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out.mutable_data()[r * cols + c] = x.data()[r * cols + c] + bias.data()[c];
  return finish(out, {&x, &bias}, [x, bias, rows, cols](detail::Node& o) {
    if (x.requires_grad()) {
      Real* g = x.node()->grad_data();
      for (std::size_t i = 0; i < rows * cols; ++i) g[i] += o.grad[i];
    }
    if (bias.requires_grad()) {
      Real* g = bias.node()->grad_data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) g[c] += o.grad[r * cols + c];
    }
  });
}

Tensor add_group_broadcast(const Tensor& x, const Tensor& v) {
  const std::size_t groups = v.rows(), cols = x.cols();
  if (v.cols() != cols || groups == 0 || x.rows() % groups != 0)
    throw DimensionError("add_group_broadcast: " + shape_string(v.shape()) +
                         " cannot be broadcast over " + shape_string(x.shape()));
  const std::size_t steps = x.rows() / groups;
  Tensor out(x.shape());
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t i = (g * steps + t) * cols + c;
        out.mutable_data()[i] = x.data()[i] + v.data()[g * cols + c];
      }
  return finish(out, {&x, &v}, [x, v, groups, steps, cols](detail::Node& o) {
    if (x.requires_grad()) {
      Real* g = x.node()->grad_data();
      for (std::size_t i = 0; i < x.size(); ++i) g[i] += o.grad[i];
    }
    if (v.requires_grad()) {
      Real* g = v.node()->grad_data();
      for (std::size_t gr = 0; gr < groups; ++gr)
        for (std::size_t t = 0; t < steps; ++t)
          for (std::size_t c = 0; c < cols; ++c) g[gr * cols + c] += o.grad[(gr * steps + t) * cols + c];
    }
  });
}

Tensor scale_rows(const Tensor& x, std::span<const Real> factors) {
  const std::size_t rows = x.rows(), cols = x.cols();
  if (factors.size() != rows)
    throw DimensionError("scale_rows: " + std::to_string(factors.size()) + " factors for " +
                         shape_string(x.shape()));
  std::vector<Real> f(factors.begin(), factors.end());
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out.mutable_data()[r * cols + c] = x.data()[r * cols + c] * f[r];
  return finish(out, {&x}, [x, f = std::move(f), rows, cols](detail::Node& o) {
    Real* g = x.node()->grad_data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += o.grad[r * cols + c] * f[r];
  });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows())
    throw DimensionError("concat_cols: row counts of " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
  const std::size_t rows = a.rows(), ca = a.cols(), cb = b.cols();
  Tensor out(Shape{rows, ca + cb});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.data() + r * ca, ca, out.mutable_data() + r * (ca + cb));
    std::copy_n(b.data() + r * cb, cb, out.mutable_data() + r * (ca + cb) + ca);
  }
  return finish(out, {&a, &b}, [a, b, rows, ca, cb](detail::Node& o) {
    if (a.requires_grad()) {
      Real* g = a.node()->grad_data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < ca; ++c) g[r * ca + c] += o.grad[r * (ca + cb) + c];
    }
    if (b.requires_grad()) {
      Real* g = b.node()->grad_data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cb; ++c) g[r * cb + c] += o.grad[r * (ca + cb) + ca + c];
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size())
    throw DimensionError("reshape: " + shape_string(x.shape()) + " to " + shape_string(shape));
  Tensor out(std::move(shape), std::vector<Real>(x.values().begin(), x.values().end()));
  return finish(out, {&x}, [x](detail::Node& o) {
    Real* g = x.node()->grad_data();
    for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
  });
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) out.mutable_data()[i] = std::max(x.data()[i], Real(0));
  return finish(out, {&x}, [x, n](detail::Node& o) {
    Real* g = x.node()->grad_data();
    for (std::size_t i = 0; i < n; ++i)
      if (x.data()[i] > Real(0)) g[i] += o.grad[i];
  });
}

Tensor gated_sum(const Tensor& g, const Tensor& a, const Tensor& b) {
  require_same_size(g, a, "gated_sum");
  require_same_size(a, b, "gated_sum");
  const std::size_t n = a.size();
  Tensor out(a.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const Real w = g.data()[i];
    out.mutable_data()[i] = w * a.data()[i] + (Real(1) - w) * b.data()[i];
  }
  return finish(out, {&g, &a, &b}, [g, a, b, n](detail::Node& o) {
    if (g.requires_grad()) {
      Real* d = g.node()->grad_data();
      for (std::size_t i = 0; i < n; ++i) d[i] += o.grad[i] * (a.data()[i] - b.data()[i]);
    }
    if (a.requires_grad()) {
      Real* d = a.node()->grad_data();
      for (std::size_t i = 0; i < n; ++i) d[i] += o.grad[i] * g.data()[i];
    }
    if (b.requires_grad()) {
      Real* d = b.node()->grad_data();
      for (std::size_t i = 0; i < n; ++i) d[i] += o.grad[i] * (Real(1) - g.data()[i]);
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  Tensor out(x.shape());
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Real v = x.data()[i];
    // Branches keep exp() from overflowing for large |v|.
    out.mutable_data()[i] = v >= 0 ? Real(1) / (Real(1) + std::exp(-v))
                                   : std::exp(v) / (Real(1) + std::exp(v));
  }
  detail::Node* self = out.node();
  return finish(out, {&x}, [x, n, self](detail::Node& o) {
    Real* g = x.node()->grad_data();
    for (std::size_t i = 0; i < n; ++i) {
      const Real y = self->value[i];
      g[i] += o.grad[i] * y * (Real(1) - y);
    }
  });
}

Tensor dropout(const Tensor& x, Real p, std::mt19937_64& rng) {
  if (p <= Real(0)) return x;
  if (p >= Real(1)) throw std::invalid_argument("dropout probability must be < 1");
  const std::size_t n = x.size();
  std::vector<Real> keep(n);
  std::bernoulli_distribution survive(1.0 - static_cast<double>(p));
  const Real factor = Real(1) / (Real(1) - p);
  for (std::size_t i = 0; i < n; ++i) keep[i] = survive(rng) ? factor : Real(0);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < n; ++i) out.mutable_data()[i] = x.data()[i] * keep[i];
  return finish(out, {&x}, [x, n, keep = std::move(keep)](detail::Node& o) {
    Real* g = x.node()->grad_data();
    for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[i] * keep[i];
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  const std::size_t rows = x.rows(), cols = x.cols();
  if (gain.size() != cols || bias.size() != cols)
    throw DimensionError("layer_norm: gain/bias do not match " + shape_string(x.shape()));
  Tensor out(x.shape());
  std::vector<Real> normalized(rows * cols);
  std::vector<Real> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = x.data() + r * cols;
    Real mu = 0;
    for (std::size_t c = 0; c < cols; ++c) mu += xr[c];
    mu /= static_cast<Real>(cols);
    Real var = 0;
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<Real>(cols);
    const Real rs = Real(1) / std::sqrt(var + kLayerNormEpsilon);
    inv_std[r] = rs;
    for (std::size_t c = 0; c < cols; ++c) {
      const Real h = (xr[c] - mu) * rs;
      normalized[r * cols + c] = h;
      out.mutable_data()[r * cols + c] = h * gain.data()[c] + bias.data()[c];
    }
  }
  return finish(out, {&x, &gain, &bias},
                [x, gain, bias, rows, cols, normalized = std::move(normalized),
                 inv_std = std::move(inv_std)](detail::Node& o) {
                  if (gain.requires_grad() || bias.requires_grad()) {
                    Real* gg = gain.requires_grad() ? gain.node()->grad_data() : nullptr;
                    Real* gb = bias.requires_grad() ? bias.node()->grad_data() : nullptr;
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t c = 0; c < cols; ++c) {
                        const Real dy = o.grad[r * cols + c];
                        if (gg) gg[c] += dy * normalized[r * cols + c];
                        if (gb) gb[c] += dy;
                      }
                  }
                  if (!x.requires_grad()) return;
                  Real* gx = x.node()->grad_data();
                  const Real inv_n = Real(1) / static_cast<Real>(cols);
                  for (std::size_t r = 0; r < rows; ++r) {
                    Real mean_d = 0, mean_dh = 0;
                    for (std::size_t c = 0; c < cols; ++c) {
                      const Real d = o.grad[r * cols + c] * gain.data()[c];
                      mean_d += d;
                      mean_dh += d * normalized[r * cols + c];
                    }
                    mean_d *= inv_n;
                    mean_dh *= inv_n;
                    for (std::size_t c = 0; c < cols; ++c) {
                      const Real d = o.grad[r * cols + c] * gain.data()[c];
                      gx[r * cols + c] +=
                          inv_std[r] * (d - mean_d - normalized[r * cols + c] * mean_dh);
                    }
                  }
                });
}

Tensor embedding_lookup(const Tensor& table, std::span<const TokenId> ids) {
  const std::size_t vocab = table.rows(), dim = table.cols();
  Tensor out(Shape{ids.size(), dim});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab)
      throw std::out_of_range("embedding_lookup: id " + std::to_string(ids[i]) +
                              " outside vocabulary of size " + std::to_string(vocab));
    std::copy_n(table.data() + static_cast<std::size_t>(ids[i]) * dim, dim,
                out.mutable_data() + i * dim);
  }
  std::vector<TokenId> saved(ids.begin(), ids.end());
  return finish(out, {&table}, [table, dim, saved = std::move(saved)](detail::Node& o) {
    Real* g = table.node()->grad_data();
    for (std::size_t i = 0; i < saved.size(); ++i) {
      Real* row = g + static_cast<std::size_t>(saved[i]) * dim;
      for (std::size_t c = 0; c < dim; ++c) row[c] += o.grad[i * dim + c];
    }
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size())
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_string(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  Tensor out(s);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      Real m = -std::numeric_limits<Real>::infinity();
      for (std::size_t j = 0; j < n; ++j) m = std::max(m, x.data()[base + j * inner]);
      Real total = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const Real e = std::exp(x.data()[base + j * inner] - m);
        out.mutable_data()[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < n; ++j) out.mutable_data()[base + j * inner] /= total;
    }
  detail::Node* self = out.node();
  return finish(out, {&x}, [x, self, outer, inner, n](detail::Node& o) {
    Real* g = x.node()->grad_data();
    for (std::size_t a = 0; a < outer; ++a)
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = a * n * inner + in;
        Real dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += o.grad[base + j * inner] * self->value[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t i = base + j * inner;
          g[i] += self->value[i] * (o.grad[i] - dot);
        }
      }
  });
}

Tensor sum(const Tensor& x) {
  Real total = 0;
  for (Real v : x.values()) total += v;
  Tensor out = Tensor::scalar(total);
  return finish(out, {&x}, [x](detail::Node& o) {
    Real* g = x.node()->grad_data();
    for (std::size_t i = 0; i < x.size(); ++i) g[i] += o.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), Real(1) / static_cast<Real>(x.size())); }

Tensor label_smoothed_loss(const Tensor& logits, std::span<const TokenId> targets, Real smoothing,
                           TokenId pad_id) {
  const std::size_t rows = logits.rows(), vocab = logits.cols();
  if (targets.size() != rows)
    throw DimensionError("label_smoothed_loss: " + std::to_string(targets.size()) +
                         " targets for logits " + shape_string(logits.shape()));
  const bool pad_in_vocab = pad_id >= 0 && static_cast<std::size_t>(pad_id) < vocab;
  // Ids eligible for smoothing mass besides the gold one.
  const std::size_t others = vocab - 1 - (pad_in_vocab ? 1 : 0);
  const Real off = others > 0 ? smoothing / static_cast<Real>(others) : Real(0);
  const Real on = others > 0 ? Real(1) - smoothing : Real(1);

  std::vector<Real> probs(rows * vocab, Real(0));
  std::vector<std::uint8_t> active(rows, 0);
  std::size_t count = 0;
  Real total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const TokenId t = targets[r];
    if (t == pad_id) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= vocab)
      throw std::out_of_range("label_smoothed_loss: target id " + std::to_string(t) +
                              " outside vocabulary of size " + std::to_string(vocab));
    active[r] = 1;
    ++count;
    const Real* z = logits.data() + r * vocab;
    Real m = *std::max_element(z, z + vocab);
    Real s = 0;
    for (std::size_t j = 0; j < vocab; ++j) s += std::exp(z[j] - m);
    const Real log_norm = m + std::log(s);
    Real row_loss = 0;
    for (std::size_t j = 0; j < vocab; ++j) {
      const Real logp = z[j] - log_norm;
      probs[r * vocab + j] = std::exp(logp);
      Real q = off;
      if (static_cast<TokenId>(j) == t) q = on;
      else if (pad_in_vocab && static_cast<TokenId>(j) == pad_id) q = 0;
      row_loss -= q * logp;
    }
    total += row_loss;
  }
  if (count == 0) throw std::invalid_argument("label_smoothed_loss: every target is padding");
  Tensor out = Tensor::scalar(total / static_cast<Real>(count));
  std::vector<TokenId> saved(targets.begin(), targets.end());
  return finish(out, {&logits},
                [logits, rows, vocab, count, on, off, pad_id, pad_in_vocab,
                 q_total = on + off * static_cast<Real>(others),
                 probs = std::move(probs), active = std::move(active),
                 saved = std::move(saved)](detail::Node& o) {
                  Real* g = logits.node()->grad_data();
                  const Real w = o.grad[0] / static_cast<Real>(count);
                  for (std::size_t r = 0; r < rows; ++r) {
                    if (!active[r]) continue;
                    for (std::size_t j = 0; j < vocab; ++j) {
                      Real q = off;
                      if (static_cast<TokenId>(j) == saved[r]) q = on;
                      else if (pad_in_vocab && static_cast<TokenId>(j) == pad_id) q = 0;
                      // d/dz of -sum q log p is p * sum(q) - q.
                      g[r * vocab + j] += w * (probs[r * vocab + j] * q_total - q);
                    }
                  }
                });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionShape& shape,
                 std::span<const std::uint8_t> key_valid) {
  const std::size_t B = shape.batch, Tq = shape.query_len, Tk = shape.key_len, H = shape.heads;
  const std::size_t d = q.cols();
  if (H == 0 || d % H != 0) throw DimensionError("attention: model width not divisible by heads");
  if (q.rows() != B * Tq || k.rows() != B * Tk || v.rows() != B * Tk || k.cols() != d ||
      v.cols() != d)
    throw DimensionError("attention: q " + shape_string(q.shape()) + ", k " +
                         shape_string(k.shape()) + ", v " + shape_string(v.shape()) +
                         " do not match batch/lengths");
  if (!key_valid.empty() && key_valid.size() != B * Tk)
    throw DimensionError("attention: key mask has wrong length");
  if (shape.causal && Tq != Tk) throw DimensionError("attention: causal mask needs square scores");

  const std::size_t dh = d / H;
  const Real scale_factor = Real(1) / std::sqrt(static_cast<Real>(dh));
  const auto n_q = static_cast<Eigen::Index>(Tq), n_k = static_cast<Eigen::Index>(Tk),
             n_h = static_cast<Eigen::Index>(dh);
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(d));

  auto probs = std::make_shared<std::vector<Real>>(B * H * Tq * Tk, Real(0));
  Tensor out(Shape{B * Tq, d});
  RowMatrix scores(n_q, n_k);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      ConstStridedMap qb(q.data() + b * Tq * d + h * dh, n_q, n_h, stride);
      ConstStridedMap kb(k.data() + b * Tk * d + h * dh, n_k, n_h, stride);
      ConstStridedMap vb(v.data() + b * Tk * d + h * dh, n_k, n_h, stride);
      scores.noalias() = (qb * kb.transpose()) * scale_factor;
      MatMap p(probs->data() + (b * H + h) * Tq * Tk, n_q, n_k);
      for (std::size_t i = 0; i < Tq; ++i) {
        Real m = -std::numeric_limits<Real>::infinity();
        bool any = false;
        for (std::size_t j = 0; j < Tk; ++j) {
          const bool ok = (key_valid.empty() || key_valid[b * Tk + j]) && (!shape.causal || j <= i);
          if (!ok) continue;
          any = true;
          m = std::max(m, scores(i, j));
        }
        if (!any) continue;  // row stays zero
        Real total = 0;
        for (std::size_t j = 0; j < Tk; ++j) {
          const bool ok = (key_valid.empty() || key_valid[b * Tk + j]) && (!shape.causal || j <= i);
          const Real e = ok ? std::exp(scores(i, j) - m) : Real(0);
          p(i, j) = e;
          total += e;
        }
        p.row(i) /= total;
      }
      StridedMap ob(out.mutable_data() + b * Tq * d + h * dh, n_q, n_h, stride);
      ob.noalias() = p * vb;
    }
  }

  return finish(out, {&q, &k, &v}, [q, k, v, B, Tq, Tk, H, d, dh, scale_factor, probs](detail::Node& o) {
    const auto n_q = static_cast<Eigen::Index>(Tq), n_k = static_cast<Eigen::Index>(Tk),
               n_h = static_cast<Eigen::Index>(dh);
    const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(d));
    Real* gq = q.requires_grad() ? q.node()->grad_data() : nullptr;
    Real* gk = k.requires_grad() ? k.node()->grad_data() : nullptr;
    Real* gv = v.requires_grad() ? v.node()->grad_data() : nullptr;
    RowMatrix dp(n_q, n_k), ds(n_q, n_k);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t h = 0; h < H; ++h) {
        const std::size_t qoff = b * Tq * d + h * dh, koff = b * Tk * d + h * dh;
        ConstStridedMap go(o.grad.data() + qoff, n_q, n_h, stride);
        ConstStridedMap qb(q.data() + qoff, n_q, n_h, stride);
        ConstStridedMap kb(k.data() + koff, n_k, n_h, stride);
        ConstStridedMap vb(v.data() + koff, n_k, n_h, stride);
        ConstMatMap p(probs->data() + (b * H + h) * Tq * Tk, n_q, n_k);
        if (gv) StridedMap(gv + koff, n_k, n_h, stride).noalias() += p.transpose() * go;
        if (!gq && !gk) continue;
        dp.noalias() = go * vb.transpose();
        for (Eigen::Index i = 0; i < n_q; ++i) {
          const Real dot = (dp.row(i).array() * p.row(i).array()).sum();
          ds.row(i) = p.row(i).array() * (dp.row(i).array() - dot);
        }
        ds *= scale_factor;
        if (gq) StridedMap(gq + qoff, n_q, n_h, stride).noalias() += ds * kb;
        if (gk) StridedMap(gk + koff, n_k, n_h, stride).noalias() += ds.transpose() * qb;
      }
    }
  });
}

PooledSequence pool_over_time(const Tensor& x, std::size_t batch, std::size_t len,
                              std::span<const std::uint8_t> valid, std::size_t window,
                              std::size_t stride, PoolMode mode) {
  if (window == 0 || stride == 0)
    throw std::invalid_argument("pool_over_time: window and stride must be >= 1");
  if (x.rows() != batch * len)
    throw DimensionError("pool_over_time: input " + shape_string(x.shape()) + " is not " +
                         std::to_string(batch) + "x" + std::to_string(len) + " rows");
  if (!valid.empty() && valid.size() != batch * len)
    throw DimensionError("pool_over_time: mask has wrong length");
  const std::size_t d = x.cols();
  const std::size_t steps = len == 0 ? 1 : (len + stride - 1) / stride;

  PooledSequence result;
  result.steps = steps;
  result.valid.assign(batch * steps, 0);
  Tensor out(Shape{batch * steps, d});
  // For avg: 1/count per slot. For max: source row per output element.
  std::vector<Real> inv_count(batch * steps, Real(0));
  std::vector<std::int64_t> argmax(mode == PoolMode::kMax ? batch * steps * d : 0, -1);

  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t s = 0; s < steps && len > 0; ++s) {
      const std::size_t begin = s * stride, end = std::min(begin + window, len);
      const std::size_t slot = b * steps + s;
      Real* o = out.mutable_data() + slot * d;
      std::size_t count = 0;
      for (std::size_t t = begin; t < end; ++t) {
        const std::size_t row = b * len + t;
        if (!valid.empty() && !valid[row]) continue;
        const Real* xr = x.data() + row * d;
        if (mode == PoolMode::kAvg) {
          for (std::size_t c = 0; c < d; ++c) o[c] += xr[c];
        } else {
          for (std::size_t c = 0; c < d; ++c) {
            std::int64_t& arg = argmax[slot * d + c];
            if (count == 0 || xr[c] > o[c]) {  // strict: ties keep the lowest index
              o[c] = xr[c];
              arg = static_cast<std::int64_t>(row);
            }
          }
        }
        ++count;
      }
      if (count == 0) continue;
      result.valid[slot] = 1;
      inv_count[slot] = Real(1) / static_cast<Real>(count);
      if (mode == PoolMode::kAvg)
        for (std::size_t c = 0; c < d; ++c) o[c] *= inv_count[slot];
    }
  }

  std::vector<std::uint8_t> in_valid(valid.begin(), valid.end());
  result.values = finish(out, {&x},
                         [x, batch, len, steps, d, window, stride, mode,
                          inv_count = std::move(inv_count), argmax = std::move(argmax),
                          in_valid = std::move(in_valid)](detail::Node& o) {
                           Real* g = x.node()->grad_data();
                           for (std::size_t b = 0; b < batch; ++b)
                             for (std::size_t s = 0; s < steps && len > 0; ++s) {
                               const std::size_t slot = b * steps + s;
                               const Real* go = o.grad.data() + slot * d;
                               if (mode == PoolMode::kMax) {
                                 for (std::size_t c = 0; c < d; ++c) {
                                   const std::int64_t row = argmax[slot * d + c];
                                   if (row >= 0) g[static_cast<std::size_t>(row) * d + c] += go[c];
                                 }
                                 continue;
                               }
                               if (inv_count[slot] == Real(0)) continue;
                               const std::size_t begin = s * stride,
                                                 end = std::min(begin + window, len);
                               for (std::size_t t = begin; t < end; ++t) {
                                 const std::size_t row = b * len + t;
                                 if (!in_valid.empty() && !in_valid[row]) continue;
                                 for (std::size_t c = 0; c < d; ++c)
                                   g[row * d + c] += go[c] * inv_count[slot];
                               }
                             }
                         });
  return result;
}

}  // namespace ctxnmt
