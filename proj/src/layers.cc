#include "ctxnmt/layers.h"

#include <cmath>
#include <stdexcept>

namespace ctxnmt {

Tensor& ParameterSet::add(const std::string& name, Tensor value) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
  index_.emplace(name, items_.size());
  items_.emplace_back(name, std::move(value));
  return items_.back().second;
}

const Tensor& ParameterSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return items_[it->second].second;
}

Tensor& ParameterSet::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return items_[it->second].second;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : items_) n += t.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& [name, t] : items_) t.zero_grad();
}

Tensor MultiHeadAttention::attend(const Tensor& query_input, const KeyValues& kv,
                                  const AttentionShape& shape,
                                  std::span<const std::uint8_t> key_valid) const {
  AttentionShape s = shape;
  s.heads = heads;
  Tensor out = o.forward(attention(q.forward(query_input), kv.k, kv.v, s, key_valid));
  if (key_valid.empty()) return out;
  std::vector<Real> keep(s.batch * s.query_len, Real(1));
  bool any_empty = false;
  for (std::size_t b = 0; b < s.batch; ++b) {
    bool has_key = false;
    for (std::size_t j = 0; j < s.key_len && !has_key; ++j) has_key = key_valid[b * s.key_len + j];
    if (has_key) continue;
    any_empty = true;
    for (std::size_t i = 0; i < s.query_len; ++i) keep[b * s.query_len + i] = Real(0);
  }
  return any_empty ? scale_rows(out, keep) : out;
}

Tensor maybe_dropout(const Tensor& x, Real p, std::mt19937_64* rng) {
  if (rng == nullptr || p <= Real(0)) return x;
  return dropout(x, p, *rng);
}

Tensor EncoderLayer::forward(const Tensor& x, std::size_t batch, std::size_t len,
                             std::span<const std::uint8_t> valid, Real p,
                             std::mt19937_64* rng) const {
  Tensor a = self_attn.forward(x, x, {batch, len, len, self_attn.heads, false}, valid);
  Tensor h = ln1.forward(add(x, maybe_dropout(a, p, rng)));
  return ln2.forward(add(h, maybe_dropout(ffn.forward(h), p, rng)));
}

Tensor gate_merge(const Linear& gate, const Tensor& c_main, const Tensor& c_ctx) {
  Tensor g = sigmoid(gate.forward(concat_cols(c_main, c_ctx)));
  return gated_sum(g, c_main, c_ctx);
}

Tensor positional_encoding(std::size_t batch, std::size_t len, std::size_t d, std::size_t offset) {
  std::vector<Real> row_block(len * d);
  for (std::size_t t = 0; t < len; ++t) {
    const double pos = static_cast<double>(t + offset);
    for (std::size_t i = 0; i < d; i += 2) {
      const double angle = pos / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      row_block[t * d + i] = static_cast<Real>(std::sin(angle));
      if (i + 1 < d) row_block[t * d + i + 1] = static_cast<Real>(std::cos(angle));
    }
  }
  std::vector<Real> values;
  values.reserve(batch * len * d);
  for (std::size_t b = 0; b < batch; ++b) values.insert(values.end(), row_block.begin(), row_block.end());
  return Tensor(Shape{batch * len, d}, std::move(values));
}

}  // namespace ctxnmt
