#ifndef CTXNMT_OPS_H_
#define CTXNMT_OPS_H_

// Differentiable primitives. Unless stated otherwise tensors are treated as
// row-major matrices [rows x cols] where cols is the product of the trailing
// extents.

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "ctxnmt/tensor.h"

namespace ctxnmt {

using TokenId = std::int32_t;

Tensor matmul(const Tensor& a, const Tensor& b);
// a * b^T
Tensor matmul_transposed(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real factor);
// x[n x d] + bias[d] on every row.
Tensor add_bias(const Tensor& x, const Tensor& bias);
// x[(groups*steps) x d] + v[groups x d], row g of v added to the `steps` rows
// of group g.
Tensor add_group_broadcast(const Tensor& x, const Tensor& v);
// Multiplies row i by factors[i] (factors are constants).
Tensor scale_rows(const Tensor& x, std::span<const Real> factors);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor reshape(const Tensor& x, Shape shape);

// g * a + (1 - g) * b, elementwise.
Tensor gated_sum(const Tensor& g, const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
// Inverted dropout: zeroes with probability p and scales survivors by 1/(1-p).
Tensor dropout(const Tensor& x, Real p, std::mt19937_64& rng);

inline constexpr Real kLayerNormEpsilon = Real(1e-6);
// Per-row normalization with gain and bias of length cols.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

// Rows of table[V x d] selected by ids; out-of-range ids throw std::out_of_range.
Tensor embedding_lookup(const Tensor& table, std::span<const TokenId> ids);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Cross-entropy against the label-smoothed target distribution: the gold id
// receives 1 - smoothing, the remaining non-pad ids share `smoothing`
// uniformly. Averaged over positions whose target is not pad_id.
Tensor label_smoothed_loss(const Tensor& logits, std::span<const TokenId> targets,
                           Real smoothing, TokenId pad_id);

struct AttentionShape {
  std::size_t batch = 1;
  std::size_t query_len = 1;
  std::size_t key_len = 1;
  std::size_t heads = 1;
  bool causal = false;
};

// Scaled dot-product attention over already-projected inputs. q is
// [(batch*query_len) x d], k and v are [(batch*key_len) x d]; heads split d
// evenly. key_valid is empty (all valid) or batch*key_len flags. A query row
// with no admissible key attends to a zero dummy position: its output is 0.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const AttentionShape& shape, std::span<const std::uint8_t> key_valid);

enum class PoolMode { kMax, kAvg };

struct PooledSequence {
  Tensor values;                  // [(batch*steps) x d]
  std::vector<std::uint8_t> valid;  // batch*steps
  std::size_t steps = 0;
};

// Pools each sequence of x[(batch*len) x d] over windows starting every
// `stride` positions, ceil(len/stride) slots per sequence. Invalid positions
// never contribute; a slot without valid positions is zero and invalid.
// len == 0 yields one invalid zero slot per sequence. Max ties route the
// gradient to the lowest index.
PooledSequence pool_over_time(const Tensor& x, std::size_t batch, std::size_t len,
                              std::span<const std::uint8_t> valid, std::size_t window,
                              std::size_t stride, PoolMode mode);

}  // namespace ctxnmt

#endif  // CTXNMT_OPS_H_
