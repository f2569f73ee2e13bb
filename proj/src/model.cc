#include "ctxnmt/model.h"

#include <cmath>
#include <stdexcept>

namespace ctxnmt {

namespace {

using Init = ParameterSpec::Init;

std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void add_linear(std::vector<ParameterSpec>& out, const std::string& name, std::size_t in,
                std::size_t outd, bool ctx, Real bias = 0) {
  out.push_back({name + ".w", {in, outd}, Init::kXavier, 0, ctx});
  out.push_back({name + ".b", {outd}, bias == 0 ? Init::kZero : Init::kConstant, bias, ctx});
}

void add_layer_norm(std::vector<ParameterSpec>& out, const std::string& name, std::size_t d, bool ctx) {
  out.push_back({name + ".gain", {d}, Init::kOne, 0, ctx});
  out.push_back({name + ".bias", {d}, Init::kZero, 0, ctx});
}

void add_attention(std::vector<ParameterSpec>& out, const std::string& name, std::size_t d, bool ctx) {
  for (const char* p : {".q", ".k", ".v", ".o"}) add_linear(out, name + p, d, d, ctx);
}

void add_ffn(std::vector<ParameterSpec>& out, const std::string& name, std::size_t d, std::size_t ff,
             bool ctx) {
  add_linear(out, name + ".in", d, ff, ctx);
  add_linear(out, name + ".out", ff, d, ctx);
}

void add_encoder_layer(std::vector<ParameterSpec>& out, const std::string& name, std::size_t d,
                       std::size_t ff, bool ctx) {
  add_attention(out, name + ".self_attn", d, ctx);
  add_layer_norm(out, name + ".ln1", d, ctx);
  add_ffn(out, name + ".ffn", d, ff, ctx);
  add_layer_norm(out, name + ".ln2", d, ctx);
}

std::vector<Real> initial_values(const ParameterSpec& spec, std::uint64_t seed) {
  const std::size_t n = shape_size(spec.shape);
  std::vector<Real> v(n, Real(0));
  switch (spec.init) {
    case Init::kZero:
      break;
    case Init::kOne:
      std::fill(v.begin(), v.end(), Real(1));
      break;
    case Init::kConstant:
      std::fill(v.begin(), v.end(), spec.value);
      break;
    case Init::kXavier: {
      const std::uint64_t h = name_hash(spec.name);
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
      std::mt19937_64 rng(seq);
      const double fan_in = static_cast<double>(spec.shape[0]);
      const double fan_out = static_cast<double>(spec.shape.size() > 1 ? spec.shape[1] : 1);
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (auto& x : v) x = static_cast<Real>(dist(rng));
      break;
    }
  }
  return v;
}

PaddedIds empty_context(std::size_t batch) {
  PaddedIds p;
  p.batch = batch;
  return p;
}

}  // namespace

std::vector<ParameterSpec> parameter_specs(const ModelConfig& c) {
  c.validate();
  const std::size_t d = c.d_model, ff = c.d_ff, V = c.vocab_size;
  std::vector<ParameterSpec> out;
  if (c.tie_embeddings) {
    out.push_back({"embed", {V, d}});
  } else {
    out.push_back({"src_embed", {V, d}});
    out.push_back({"tgt_embed", {V, d}});
    out.push_back({"output", {V, d}});
  }
  for (std::size_t i = 0; i < c.layers; ++i)
    add_encoder_layer(out, "encoder." + std::to_string(i), d, ff, false);
  for (std::size_t i = 0; i < c.layers; ++i) {
    const std::string name = "decoder." + std::to_string(i);
    add_attention(out, name + ".self_attn", d, false);
    add_layer_norm(out, name + ".ln1", d, false);
    add_attention(out, name + ".cross_attn", d, false);
    add_layer_norm(out, name + ".ln2", d, false);
    add_ffn(out, name + ".ffn", d, ff, false);
    add_layer_norm(out, name + ".ln3", d, false);
  }
  if (c.kind == ModelKind::kDomEmbAvg) add_ffn(out, "ctx.domemb.ffn", d, ff, true);
  if (has_context_encoder(c.kind) && c.layers > 0) {
    add_encoder_layer(out, "ctx.encoder.final", d, ff, true);
    for (std::size_t i = 0; i < c.layers; ++i) {
      const std::string name = "ctx.decoder." + std::to_string(i);
      add_attention(out, name + ".ctx_attn", d, true);
      add_linear(out, name + ".gate", 2 * d, d, true, c.gate_bias_init);
    }
  }
  return out;
}

std::size_t count_parameters(const ModelConfig& config) {
  std::size_t n = 0;
  for (const auto& s : parameter_specs(config)) n += shape_size(s.shape);
  return n;
}

void DecoderCache::reorder(std::span<const std::size_t> parents) {
  if (parents.size() != rows) throw std::invalid_argument("reorder: one parent per row expected");
  const std::size_t group = sources == 0 ? rows : rows / sources;
  for (std::size_t r = 0; r < rows; ++r)
    if (parents[r] >= rows || parents[r] / group != r / group)
      throw std::invalid_argument("reorder: parent outside the row's source group");
  for (auto* cache : {&self_k, &self_v})
    for (auto& layer : *cache) {
      std::vector<std::vector<Real>> next(rows);
      for (std::size_t r = 0; r < rows; ++r) next[r] = layer[parents[r]];
      layer = std::move(next);
    }
}

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  for (const auto& spec : parameter_specs(config_))
    params_.add(spec.name, Tensor::parameter(spec.shape, initial_values(spec, seed)));
  wire();
}

void Model::wire() {
  auto P = [this](const std::string& n) { return params_.get(n); };
  auto linear = [&](const std::string& n) { return Linear{P(n + ".w"), P(n + ".b")}; };
  auto norm = [&](const std::string& n) { return LayerNormParams{P(n + ".gain"), P(n + ".bias")}; };
  auto mha = [&](const std::string& n) {
    return MultiHeadAttention{linear(n + ".q"), linear(n + ".k"), linear(n + ".v"), linear(n + ".o"),
                              config_.heads};
  };
  auto ffn = [&](const std::string& n) { return FeedForward{linear(n + ".in"), linear(n + ".out")}; };
  auto enc_layer = [&](const std::string& n) {
    return EncoderLayer{mha(n + ".self_attn"), norm(n + ".ln1"), ffn(n + ".ffn"), norm(n + ".ln2")};
  };

  if (config_.tie_embeddings) {
    embed_ = tgt_embed_ = output_ = P("embed");
  } else {
    embed_ = P("src_embed");
    tgt_embed_ = P("tgt_embed");
    output_ = P("output");
  }
  encoder_.clear();
  decoder_.clear();
  for (std::size_t i = 0; i < config_.layers; ++i)
    encoder_.push_back(enc_layer("encoder." + std::to_string(i)));
  for (std::size_t i = 0; i < config_.layers; ++i) {
    const std::string n = "decoder." + std::to_string(i);
    DecoderLayer layer;
    layer.self_attn = mha(n + ".self_attn");
    layer.ln1 = norm(n + ".ln1");
    layer.cross_attn = mha(n + ".cross_attn");
    layer.ln2 = norm(n + ".ln2");
    layer.ffn = ffn(n + ".ffn");
    layer.ln3 = norm(n + ".ln3");
    if (has_context_encoder(config_.kind)) {
      const std::string c = "ctx.decoder." + std::to_string(i);
      layer.has_context = true;
      layer.ctx_attn = mha(c + ".ctx_attn");
      layer.gate = linear(c + ".gate");
    }
    decoder_.push_back(std::move(layer));
  }
  has_ctx_final_ = has_context_encoder(config_.kind) && config_.layers > 0;
  if (has_ctx_final_) ctx_final_ = enc_layer("ctx.encoder.final");
  if (config_.kind == ModelKind::kDomEmbAvg) domemb_ffn_ = ffn("ctx.domemb.ffn");
}

const Tensor& Model::source_embedding() const { return embed_; }

Checkpoint Model::to_checkpoint(std::size_t step, double dev_perplexity) const {
  Checkpoint c = Checkpoint::capture(params_);
  c.kind = "model";
  c.config = config_;
  c.fingerprint = config_.fingerprint();
  c.step = step;
  c.dev_perplexity = dev_perplexity;
  return c;
}

void Model::load(const Checkpoint& checkpoint) {
  if (checkpoint.kind != "model") throw CheckpointError("checkpoint holds a " + checkpoint.kind);
  if (checkpoint.fingerprint != config_.fingerprint())
    throw CheckpointError("checkpoint architecture " + checkpoint.config.dump() +
                          " does not match the model (" + nlohmann::json(config_).dump() + ")");
  checkpoint.restore(params_);
}

Model Model::from_checkpoint(const Checkpoint& checkpoint) {
  Model m(checkpoint.config.get<ModelConfig>(), 0);
  m.load(checkpoint);
  return m;
}

Tensor Model::domain_embedding(const PaddedIds& context, std::mt19937_64* /*rng*/) const {
  const std::size_t B = context.batch, L = context.len, d = config_.d_model;
  if (L == 0) return Tensor(Shape{B, d});
  Tensor x = embedding_lookup(embed_, context.ids);
  const PoolMode mode = config_.kind == ModelKind::kDomEmbMax ? PoolMode::kMax : PoolMode::kAvg;
  PooledSequence pooled = pool_over_time(x, B, L, context.valid, L, L, mode);
  Tensor v = pooled.values;
  if (config_.kind == ModelKind::kDomEmbAvg) v = domemb_ffn_.forward(v);
  std::vector<Real> keep(B);
  bool all = true;
  for (std::size_t b = 0; b < B; ++b) {
    keep[b] = pooled.valid[b] ? Real(1) : Real(0);
    all = all && pooled.valid[b];
  }
  return all ? v : scale_rows(v, keep);
}

Tensor Model::encode_source(const PaddedIds& source, const Tensor& de, std::mt19937_64* rng) const {
  const std::size_t B = source.batch, L = source.len, d = config_.d_model;
  Tensor x = scale(embedding_lookup(embed_, source.ids), std::sqrt(static_cast<Real>(d)));
  x = add(x, positional_encoding(B, L, d));
  if (de.defined()) x = add_group_broadcast(x, de);
  x = maybe_dropout(x, config_.dropout, rng);
  for (const auto& layer : encoder_) x = layer.forward(x, B, L, source.valid, config_.dropout, rng);
  return x;
}

PooledSequence Model::encode_context(const PaddedIds& context, std::mt19937_64* rng) const {
  const std::size_t B = context.batch, L = context.len, d = config_.d_model;
  if (L == 0) return {Tensor(Shape{B, d}), std::vector<std::uint8_t>(B, 0), 1};
  Tensor x = scale(embedding_lookup(embed_, context.ids), std::sqrt(static_cast<Real>(d)));
  PooledSequence p;
  if (config_.kind == ModelKind::kCtxBase) {
    p = {x, context.valid, L};
  } else {
    const PoolMode mode = config_.kind == ModelKind::kCtxPoolMax ? PoolMode::kMax : PoolMode::kAvg;
    p = pool_over_time(x, B, L, context.valid, config_.pool_window, config_.pool_stride, mode);
  }
  Tensor h = maybe_dropout(add(p.values, positional_encoding(B, p.steps, d)), config_.dropout, rng);
  for (std::size_t i = 0; i + 1 < encoder_.size(); ++i)
    h = encoder_[i].forward(h, B, p.steps, p.valid, config_.dropout, rng);
  if (has_ctx_final_) h = ctx_final_.forward(h, B, p.steps, p.valid, config_.dropout, rng);
  p.values = h;
  return p;
}

Encoded Model::encode(const PaddedIds& source, const PaddedIds& context_in, std::mt19937_64* rng) const {
  const PaddedIds context = context_in.batch == 0 ? empty_context(source.batch) : context_in;
  if (uses_context(config_.kind) && context.batch != source.batch)
    throw DimensionError("encode: context batch " + std::to_string(context.batch) +
                         " differs from source batch " + std::to_string(source.batch));
  Encoded e;
  e.batch = source.batch;
  e.src_len = source.len;
  e.src_valid = source.valid;
  if (is_domemb(config_.kind)) e.domain_embedding = domain_embedding(context, rng);
  e.states = encode_source(source, e.domain_embedding, rng);
  if (has_context_encoder(config_.kind)) {
    PooledSequence p = encode_context(context, rng);
    e.ctx_states = p.values;
    e.ctx_valid = std::move(p.valid);
    e.ctx_len = p.steps;
  }
  return e;
}

Tensor Model::embed_target(std::span<const TokenId> ids, std::size_t batch, std::size_t len,
                           std::size_t offset, const Tensor& de) const {
  const std::size_t d = config_.d_model;
  Tensor x = scale(embedding_lookup(tgt_embed_, ids), std::sqrt(static_cast<Real>(d)));
  x = add(x, positional_encoding(batch, len, d, offset));
  if (config_.domain_embedding_target_side && de.defined()) x = add_group_broadcast(x, de);
  return x;
}

Tensor Model::output_logits(const Tensor& h) const { return matmul_transposed(h, output_); }

Tensor Model::decode(const Encoded& enc, const PaddedIds& target_in, std::mt19937_64* rng) const {
  const std::size_t B = target_in.batch, T = target_in.len;
  if (B != enc.batch) throw DimensionError("decode: target batch differs from the encoded batch");
  const Real p = config_.dropout;
  Tensor x = maybe_dropout(embed_target(target_in.ids, B, T, 0, enc.domain_embedding), p, rng);
  for (const auto& layer : decoder_) {
    Tensor a = layer.self_attn.forward(x, x, {B, T, T, config_.heads, true}, target_in.valid);
    x = layer.ln1.forward(add(x, maybe_dropout(a, p, rng)));
    Tensor c = layer.cross_attn.forward(x, enc.states, {B, T, enc.src_len, config_.heads, false},
                                        enc.src_valid);
    if (layer.has_context) {
      Tensor cc = layer.ctx_attn.forward(c, enc.ctx_states, {B, T, enc.ctx_len, config_.heads, false},
                                         enc.ctx_valid);
      c = gate_merge(layer.gate, c, cc);
    }
    x = layer.ln2.forward(add(x, maybe_dropout(c, p, rng)));
    x = layer.ln3.forward(add(x, maybe_dropout(layer.ffn.forward(x), p, rng)));
  }
  return output_logits(x);
}

Tensor Model::loss(const Batch& batch, std::mt19937_64* rng) const {
  Encoded enc = encode(batch.source, batch.context, rng);
  Tensor logits = decode(enc, batch.target_in, rng);
  return label_smoothed_loss(logits, batch.target_out.ids, config_.label_smoothing, Vocabulary::kPad);
}

std::pair<double, std::size_t> Model::nll(const Batch& batch) const {
  NoGradScope no_grad;
  Tensor logits = decode(encode(batch.source, batch.context), batch.target_in);
  const std::size_t V = logits.cols();
  double total = 0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const TokenId gold = batch.target_out.ids[r];
    if (gold == Vocabulary::kPad) continue;
    const Real* row = logits.data() + r * V;
    double m = row[0];
    for (std::size_t j = 1; j < V; ++j) m = std::max(m, static_cast<double>(row[j]));
    double s = 0;
    for (std::size_t j = 0; j < V; ++j) s += std::exp(static_cast<double>(row[j]) - m);
    total += m + std::log(s) - static_cast<double>(row[gold]);
    ++count;
  }
  return {total, count};
}

DecoderCache Model::start_decoding(const Encoded& enc, std::size_t rows_per_source) const {
  if (rows_per_source == 0) throw std::invalid_argument("start_decoding: need at least one row per source");
  DecoderCache cache;
  cache.sources = enc.batch;
  cache.rows = enc.batch * rows_per_source;
  cache.self_k.assign(decoder_.size(), std::vector<std::vector<Real>>(cache.rows));
  cache.self_v = cache.self_k;
  NoGradScope no_grad;
  for (const auto& layer : decoder_) {
    cache.cross.push_back(layer.cross_attn.project(enc.states));
    if (layer.has_context) cache.ctx.push_back(layer.ctx_attn.project(enc.ctx_states));
  }
  if (config_.domain_embedding_target_side && enc.domain_embedding.defined()) {
    const std::size_t d = config_.d_model;
    std::vector<Real> rows;
    rows.reserve(cache.rows * d);
    for (std::size_t b = 0; b < enc.batch; ++b)
      for (std::size_t h = 0; h < rows_per_source; ++h)
        rows.insert(rows.end(), enc.domain_embedding.data() + b * d, enc.domain_embedding.data() + (b + 1) * d);
    cache.domain_embedding = Tensor(Shape{cache.rows, d}, std::move(rows));
  }
  return cache;
}

Tensor Model::decode_step(const Encoded& enc, DecoderCache& cache, std::span<const TokenId> last) const {
  if (last.size() != cache.rows)
    throw DimensionError("decode_step: " + std::to_string(last.size()) + " tokens for " +
                         std::to_string(cache.rows) + " rows");
  NoGradScope no_grad;
  const std::size_t R = cache.rows, d = config_.d_model, t = cache.steps;
  const std::size_t H = R / cache.sources;
  Tensor x = embed_target(last, R, 1, t, cache.domain_embedding);
  for (std::size_t l = 0; l < decoder_.size(); ++l) {
    const DecoderLayer& layer = decoder_[l];
    MultiHeadAttention::KeyValues step = layer.self_attn.project(x);
    std::vector<Real> k_all, v_all;
    k_all.reserve(R * (t + 1) * d);
    v_all.reserve(R * (t + 1) * d);
    for (std::size_t r = 0; r < R; ++r) {
      auto& kc = cache.self_k[l][r];
      auto& vc = cache.self_v[l][r];
      kc.insert(kc.end(), step.k.data() + r * d, step.k.data() + (r + 1) * d);
      vc.insert(vc.end(), step.v.data() + r * d, step.v.data() + (r + 1) * d);
      k_all.insert(k_all.end(), kc.begin(), kc.end());
      v_all.insert(v_all.end(), vc.begin(), vc.end());
    }
    MultiHeadAttention::KeyValues kv{Tensor(Shape{R * (t + 1), d}, std::move(k_all)),
                                     Tensor(Shape{R * (t + 1), d}, std::move(v_all))};
    Tensor a = layer.self_attn.attend(x, kv, {R, 1, t + 1, config_.heads, false}, {});
    x = layer.ln1.forward(add(x, a));
    Tensor c = layer.cross_attn.attend(x, cache.cross[l], {cache.sources, H, enc.src_len, config_.heads, false},
                                       enc.src_valid);
    if (layer.has_context) {
      Tensor cc = layer.ctx_attn.attend(c, cache.ctx[l], {cache.sources, H, enc.ctx_len, config_.heads, false},
                                        enc.ctx_valid);
      c = gate_merge(layer.gate, c, cc);
    }
    x = layer.ln2.forward(add(x, c));
    x = layer.ln3.forward(add(x, layer.ffn.forward(x)));
  }
  ++cache.steps;
  return output_logits(x);
}

}  // namespace ctxnmt
