#include "ctxnmt/config.h"

#include <array>
#include <cstdio>
#include <utility>

namespace ctxnmt {

namespace {

constexpr std::array<std::pair<ModelKind, std::string_view>, 8> kKindNames{{
    {ModelKind::kSent, "sent"},
    {ModelKind::kTag, "tag"},
    {ModelKind::kDomEmbMax, "domemb_max"},
    {ModelKind::kDomEmbAvg, "domemb_avg"},
    {ModelKind::kCtxPoolMax, "ctxpool_max"},
    {ModelKind::kCtxPoolAvg, "ctxpool_avg"},
    {ModelKind::kCtxBase, "ctxbase"},
    {ModelKind::kConcBase, "concbase"},
}};

}  // namespace

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string content_hash(std::string_view text) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(text)));
  return buf;
}

std::string_view kind_name(ModelKind kind) {
  for (const auto& [k, name] : kKindNames)
    if (k == kind) return name;
  throw ConfigError("unknown model kind");
}

ModelKind parse_kind(std::string_view name) {
  for (const auto& [k, n] : kKindNames)
    if (n == name) return k;
  std::string known;
  for (const auto& [k, n] : kKindNames) known += (known.empty() ? "" : ", ") + std::string(n);
  throw ConfigError("unknown model kind '" + std::string(name) + "' (expected one of " + known + ")");
}

const std::vector<ModelKind>& all_kinds() {
  static const std::vector<ModelKind> kinds = [] {
    std::vector<ModelKind> v;
    for (const auto& [k, n] : kKindNames) v.push_back(k);
    return v;
  }();
  return kinds;
}

bool is_domemb(ModelKind kind) {
  return kind == ModelKind::kDomEmbMax || kind == ModelKind::kDomEmbAvg;
}

bool has_context_encoder(ModelKind kind) {
  return kind == ModelKind::kCtxPoolMax || kind == ModelKind::kCtxPoolAvg ||
         kind == ModelKind::kCtxBase;
}

bool uses_context(ModelKind kind) { return is_domemb(kind) || has_context_encoder(kind); }

void ModelConfig::validate() const {
  if (heads == 0) throw ConfigError("heads must be positive");
  if (d_model == 0 || d_model % heads != 0)
    throw ConfigError("d_model (" + std::to_string(d_model) + ") must be a positive multiple of heads (" +
                      std::to_string(heads) + ")");
  if (layers > 0 && d_ff == 0) throw ConfigError("d_ff must be positive");
  if (vocab_size == 0) throw ConfigError("vocab_size must be positive");
  if (pool_window == 0) throw ConfigError("pool window must be at least 1");
  if (pool_stride == 0) throw ConfigError("pool stride must be at least 1");
  if (!(dropout >= 0 && dropout < 1)) throw ConfigError("dropout must lie in [0, 1)");
  if (!(label_smoothing >= 0 && label_smoothing < 1))
    throw ConfigError("label_smoothing must lie in [0, 1)");
  if (max_sentence_tokens == 0 || context_sentence_limit == 0)
    throw ConfigError("token limits must be positive");
}

std::string ModelConfig::fingerprint() const {
  nlohmann::json j{{"kind", kind_name(kind)},       {"layers", layers},
                   {"heads", heads},                {"d_model", d_model},
                   {"d_ff", d_ff},                  {"vocab_size", vocab_size},
                   {"tie_embeddings", tie_embeddings}};
  return content_hash(j.dump());
}

ModelConfig ModelConfig::paper(ModelKind kind, std::size_t vocab_size) {
  ModelConfig c;
  c.kind = kind;
  c.layers = 6;
  c.heads = 8;
  c.d_model = 512;
  c.d_ff = 2048;
  c.vocab_size = vocab_size;
  c.context_size = kind == ModelKind::kSent || kind == ModelKind::kTag ? 0 : 10;
  return c;
}

ModelConfig ModelConfig::desk(ModelKind kind, std::size_t vocab_size) {
  ModelConfig c;
  c.kind = kind;
  c.vocab_size = vocab_size;
  c.context_size = kind == ModelKind::kSent || kind == ModelKind::kTag ? 0 : 10;
  return c;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"kind", kind_name(c.kind)},
                     {"layers", c.layers},
                     {"heads", c.heads},
                     {"d_model", c.d_model},
                     {"d_ff", c.d_ff},
                     {"dropout", c.dropout},
                     {"label_smoothing", c.label_smoothing},
                     {"vocab_size", c.vocab_size},
                     {"tie_embeddings", c.tie_embeddings},
                     {"context_size", c.context_size},
                     {"pool_window", c.pool_window},
                     {"pool_stride", c.pool_stride},
                     {"max_sentence_tokens", c.max_sentence_tokens},
                     {"context_sentence_limit", c.context_sentence_limit},
                     {"max_concat_tokens", c.max_concat_tokens},
                     {"domain_embedding_target_side", c.domain_embedding_target_side},
                     {"gate_bias_init", c.gate_bias_init}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c = ModelConfig{};
  if (j.contains("kind")) c.kind = parse_kind(j.at("kind").get<std::string>());
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("layers", c.layers);
  get("heads", c.heads);
  get("d_model", c.d_model);
  get("d_ff", c.d_ff);
  get("dropout", c.dropout);
  get("label_smoothing", c.label_smoothing);
  get("vocab_size", c.vocab_size);
  get("tie_embeddings", c.tie_embeddings);
  get("context_size", c.context_size);
  get("pool_window", c.pool_window);
  get("pool_stride", c.pool_stride);
  get("max_sentence_tokens", c.max_sentence_tokens);
  get("context_sentence_limit", c.context_sentence_limit);
  get("max_concat_tokens", c.max_concat_tokens);
  get("domain_embedding_target_side", c.domain_embedding_target_side);
  get("gate_bias_init", c.gate_bias_init);
}

}  // namespace ctxnmt
