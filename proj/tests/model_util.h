#ifndef CTXNMT_TESTS_MODEL_UTIL_H_
#define CTXNMT_TESTS_MODEL_UTIL_H_

#include <random>
#include <vector>

#include "ctxnmt/model.h"

namespace ctxnmt::testing {

inline ModelConfig tiny_config(ModelKind kind, std::size_t vocab = 20, std::size_t layers = 2) {
  ModelConfig c;
  c.kind = kind;
  c.layers = layers;
  c.heads = 2;
  c.d_model = 8;
  c.d_ff = 16;
  c.vocab_size = vocab;
  c.dropout = 0;
  c.context_size = 10;
  c.pool_window = 3;
  c.pool_stride = 3;
  return c;
}

// Replaces every parameter by uniform noise so no layer is at its neutral
// initialization (unit gains, zero biases).
inline void perturb(Model& m, std::uint64_t seed, double scale = 0.5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-scale, scale);
  for (auto& [name, t] : m.parameters().items())
    for (auto& v : t.mutable_values()) v += static_cast<Real>(dist(rng));
}

// Rows of random ids in [first, vocab) with the given lengths.
inline std::vector<std::vector<TokenId>> random_rows(const std::vector<std::size_t>& lengths,
                                                     std::size_t vocab, std::mt19937_64& rng,
                                                     TokenId first = 5) {
  std::uniform_int_distribution<TokenId> id(first, static_cast<TokenId>(vocab) - 1);
  std::vector<std::vector<TokenId>> rows;
  for (std::size_t n : lengths) {
    std::vector<TokenId> r(n);
    for (auto& t : r) t = id(rng);
    rows.push_back(r);
  }
  return rows;
}

inline Batch random_batch(std::size_t vocab, std::mt19937_64& rng, const std::vector<std::size_t>& src_len,
                          const std::vector<std::size_t>& tgt_len, const std::vector<std::size_t>& ctx_len) {
  std::vector<TrainingExample> ex(src_len.size());
  auto src = random_rows(src_len, vocab, rng);
  auto tgt = random_rows(tgt_len, vocab, rng);
  auto ctx = random_rows(ctx_len, vocab, rng);
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < ex.size(); ++i) {
    ex[i].source = src[i];
    ex[i].source.push_back(Vocabulary::kEos);
    ex[i].target = tgt[i];
    ex[i].target.push_back(Vocabulary::kEos);
    ex[i].context = ctx[i];
    idx.push_back(i);
  }
  return make_batch(ex, idx);
}

}  // namespace ctxnmt::testing

#endif  // CTXNMT_TESTS_MODEL_UTIL_H_
