#ifndef CTXNMT_LAYERS_H_
#define CTXNMT_LAYERS_H_

// Transformer building blocks over named parameter tensors. All layers are
// post-norm: x = LayerNorm(x + Dropout(Sublayer(x))).

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ctxnmt/ops.h"

namespace ctxnmt {

// Ordered name -> tensor registry. Order is creation order and is the
// serialization order of checkpoints.
class ParameterSet {
 public:
  Tensor& add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  // Throws std::out_of_range naming the missing parameter.
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);

  std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Linear {
  Tensor w;  // [in x out]
  Tensor b;  // [out]
  Tensor forward(const Tensor& x) const { return add_bias(matmul(x, w), b); }
};

struct LayerNormParams {
  Tensor gain, bias;
  Tensor forward(const Tensor& x) const { return layer_norm(x, gain, bias); }
};

struct FeedForward {
  Linear in, out;
  Tensor forward(const Tensor& x) const { return out.forward(relu(in.forward(x))); }
};

struct MultiHeadAttention {
  Linear q, k, v, o;
  std::size_t heads = 1;

  struct KeyValues {
    Tensor k, v;
  };
  KeyValues project(const Tensor& memory) const { return {k.forward(memory), v.forward(memory)}; }

  // Query rows whose batch element has no valid key produce a zero row.
  Tensor attend(const Tensor& query_input, const KeyValues& kv, const AttentionShape& shape,
                std::span<const std::uint8_t> key_valid) const;
  Tensor forward(const Tensor& query_input, const Tensor& memory, const AttentionShape& shape,
                 std::span<const std::uint8_t> key_valid) const {
    return attend(query_input, project(memory), shape, key_valid);
  }
};

// Dropout that is the identity when rng is null or p is 0.
Tensor maybe_dropout(const Tensor& x, Real p, std::mt19937_64* rng);

struct EncoderLayer {
  MultiHeadAttention self_attn;
  LayerNormParams ln1;
  FeedForward ffn;
  LayerNormParams ln2;

  Tensor forward(const Tensor& x, std::size_t batch, std::size_t len,
                 std::span<const std::uint8_t> valid, Real dropout, std::mt19937_64* rng) const;
};

struct DecoderLayer {
  MultiHeadAttention self_attn;
  LayerNormParams ln1;
  MultiHeadAttention cross_attn;
  LayerNormParams ln2;
  FeedForward ffn;
  LayerNormParams ln3;
  // Present for models with a context encoder.
  bool has_context = false;
  MultiHeadAttention ctx_attn;
  Linear gate;  // [2d x d]
};

// g = sigmoid(gate([c_main; c_ctx])), returns g*c_main + (1-g)*c_ctx.
Tensor gate_merge(const Linear& gate, const Tensor& c_main, const Tensor& c_ctx);

// Sinusoidal encodings for positions [offset, offset+len) tiled over batch:
// [(batch*len) x d].
Tensor positional_encoding(std::size_t batch, std::size_t len, std::size_t d,
                           std::size_t offset = 0);

}  // namespace ctxnmt

#endif  // CTXNMT_LAYERS_H_
