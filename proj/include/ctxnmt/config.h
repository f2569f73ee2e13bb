#ifndef CTXNMT_CONFIG_H_
#define CTXNMT_CONFIG_H_

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ctxnmt/tensor.h"

namespace ctxnmt {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class ModelKind {
  kSent,
  kTag,
  kDomEmbMax,
  kDomEmbAvg,
  kCtxPoolMax,
  kCtxPoolAvg,
  kCtxBase,
  kConcBase,
};

// Command-line names: sent, tag, domemb_max, domemb_avg, ctxpool_max,
// ctxpool_avg, ctxbase, concbase.
std::string_view kind_name(ModelKind kind);
// Throws ConfigError for unknown names.
ModelKind parse_kind(std::string_view name);
const std::vector<ModelKind>& all_kinds();

bool is_domemb(ModelKind kind);
// CtxPool variants and CtxBase: context encoder plus decoder context attention.
bool has_context_encoder(ModelKind kind);
// Kinds whose forward pass reads the context ids directly.
bool uses_context(ModelKind kind);

struct ModelConfig {
  ModelKind kind = ModelKind::kSent;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t d_model = 64;
  std::size_t d_ff = 256;
  Real dropout = Real(0.1);
  Real label_smoothing = Real(0.1);
  std::size_t vocab_size = 0;
  bool tie_embeddings = true;
  std::size_t context_size = 0;
  std::size_t pool_window = 10;
  std::size_t pool_stride = 10;
  std::size_t max_sentence_tokens = 100;
  std::size_t context_sentence_limit = 100;
  // ConcBase encoder input cap; oldest context sentences are dropped first.
  std::size_t max_concat_tokens = 1200;
  bool domain_embedding_target_side = false;
  Real gate_bias_init = Real(2);

  void validate() const;
  // Hash of everything that determines parameter names and shapes.
  std::string fingerprint() const;

  static ModelConfig paper(ModelKind kind, std::size_t vocab_size);
  static ModelConfig desk(ModelKind kind, std::size_t vocab_size);
};

// 64-bit FNV-1a, as 16 hex digits.
std::uint64_t fnv1a(std::string_view s);
std::string content_hash(std::string_view text);

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace ctxnmt

#endif  // CTXNMT_CONFIG_H_
