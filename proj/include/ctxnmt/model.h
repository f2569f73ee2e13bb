#ifndef CTXNMT_MODEL_H_
#define CTXNMT_MODEL_H_

// Encoder-decoder Transformer with the context extensions: DomEmb adds a
// pooled context embedding to every source position, CtxPool/CtxBase encode
// the context separately and merge a gated context attention into every
// decoder layer. TagBase and ConcBase only change the source ids (see
// context.h) and share the sentence-level architecture.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ctxnmt/checkpoint.h"
#include "ctxnmt/config.h"
#include "ctxnmt/corpus.h"
#include "ctxnmt/layers.h"

namespace ctxnmt {

struct ParameterSpec {
  enum class Init { kXavier, kZero, kOne, kConstant };
  std::string name;
  Shape shape;
  Init init = Init::kXavier;
  Real value = 0;
  // Created by the context extension (names start with "ctx.").
  bool context_specific = false;
};

inline constexpr const char* kContextPrefix = "ctx.";

std::vector<ParameterSpec> parameter_specs(const ModelConfig& config);
std::size_t count_parameters(const ModelConfig& config);

struct Encoded {
  std::size_t batch = 0;
  std::size_t src_len = 0;
  Tensor states;                       // [(batch*src_len) x d]
  std::vector<std::uint8_t> src_valid;
  Tensor domain_embedding;             // [batch x d], DomEmb only
  std::size_t ctx_len = 0;
  Tensor ctx_states;                   // [(batch*ctx_len) x d], context encoder only
  std::vector<std::uint8_t> ctx_valid;
};

// Incremental decoding state for `rows` hypotheses over `sources` encoded
// sentences, rows/sources hypotheses per sentence, grouped contiguously.
struct DecoderCache {
  std::size_t sources = 0;
  std::size_t rows = 0;
  std::size_t steps = 0;
  // [layer][row] -> steps*d values.
  std::vector<std::vector<std::vector<Real>>> self_k, self_v;
  std::vector<MultiHeadAttention::KeyValues> cross, ctx;
  Tensor domain_embedding;  // [rows x d] when added on the target side

  // New row r continues old row parents[r]; parents must stay in r's group.
  void reorder(std::span<const std::size_t> parents);
};

class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);
  // Parameters are shared handles, so copies would alias; use clone().
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
  Model clone() const { return from_checkpoint(to_checkpoint()); }

  const ModelConfig& config() const { return config_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }
  const Tensor& source_embedding() const;

  Checkpoint to_checkpoint(std::size_t step = 0, double dev_perplexity = 0) const;
  // Requires an identical architecture fingerprint.
  void load(const Checkpoint& checkpoint);
  static Model from_checkpoint(const Checkpoint& checkpoint);

  // A null rng disables dropout.
  Encoded encode(const PaddedIds& source, const PaddedIds& context,
                 std::mt19937_64* rng = nullptr) const;
  // Source side with an explicit domain embedding ([batch x d] or undefined).
  Tensor encode_source(const PaddedIds& source, const Tensor& domain_embedding,
                       std::mt19937_64* rng = nullptr) const;
  // DomEmb pooled context vector, zero for empty contexts.
  Tensor domain_embedding(const PaddedIds& context, std::mt19937_64* rng = nullptr) const;
  // Context encoder states and slot validity (CtxPool/CtxBase).
  PooledSequence encode_context(const PaddedIds& context, std::mt19937_64* rng = nullptr) const;

  // Teacher-forced logits [(batch*len) x V].
  Tensor decode(const Encoded& enc, const PaddedIds& target_in, std::mt19937_64* rng = nullptr) const;
  Tensor loss(const Batch& batch, std::mt19937_64* rng = nullptr) const;
  // Summed negative log-likelihood (no smoothing) and token count, no tape.
  std::pair<double, std::size_t> nll(const Batch& batch) const;

  DecoderCache start_decoding(const Encoded& enc, std::size_t rows_per_source) const;
  // Logits [rows x V] for the next position given each row's last token.
  Tensor decode_step(const Encoded& enc, DecoderCache& cache, std::span<const TokenId> last) const;

 private:
  void wire();
  Tensor output_logits(const Tensor& h) const;
  Tensor embed_target(std::span<const TokenId> ids, std::size_t batch, std::size_t len,
                      std::size_t offset, const Tensor& domain_embedding) const;

  ModelConfig config_;
  ParameterSet params_;
  Tensor embed_, tgt_embed_, output_;
  std::vector<EncoderLayer> encoder_;
  EncoderLayer ctx_final_;
  bool has_ctx_final_ = false;
  std::vector<DecoderLayer> decoder_;
  FeedForward domemb_ffn_;
};

}  // namespace ctxnmt

#endif  // CTXNMT_MODEL_H_
