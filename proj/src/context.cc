#include "ctxnmt/context.h"

#include <stdexcept>

namespace ctxnmt {

std::vector<TokenId> tagbase_prepare(const std::vector<TokenId>& source, TokenId tag,
                                     const Vocabulary& vocab) {
  if (!vocab.is_tag(tag))
    throw std::invalid_argument("tagbase_prepare: id " + std::to_string(tag) + " is not a domain tag");
  return tagbase_prepare(source, tag);
}

std::vector<TokenId> tagbase_prepare(const std::vector<TokenId>& source, TokenId tag) {
  if (tag < Vocabulary::kFirstTag)
    throw std::invalid_argument("tagbase_prepare: id " + std::to_string(tag) + " is not a domain tag");
  std::vector<TokenId> out{tag};
  out.insert(out.end(), source.begin(), source.end());
  return out;
}

std::vector<TokenId> concbase_prepare(const std::vector<TokenId>& context,
                                      const std::vector<TokenId>& source, std::size_t max_tokens) {
  if (context.empty()) return source;
  std::vector<std::vector<TokenId>> sentences(1);
  for (TokenId t : context) {
    if (t == Vocabulary::kSep)
      sentences.emplace_back();
    else
      sentences.back().push_back(t);
  }
  std::size_t first = 0;
  auto length = [&](std::size_t from) {
    std::size_t n = source.size();
    for (std::size_t i = from; i < sentences.size(); ++i) n += sentences[i].size() + 1;
    return n;
  };
  while (first < sentences.size() && length(first) > max_tokens) ++first;
  std::vector<TokenId> out;
  for (std::size_t i = first; i < sentences.size(); ++i) {
    out.insert(out.end(), sentences[i].begin(), sentences[i].end());
    out.push_back(Vocabulary::kSep);
  }
  out.insert(out.end(), source.begin(), source.end());
  return out;
}

TrainingExample prepare_example(const ModelConfig& config, const TrainingExample& example) {
  TrainingExample ex = example;
  switch (config.kind) {
    case ModelKind::kTag:
      ex.source = tagbase_prepare(ex.source, ex.domain_tag);
      ex.context.clear();
      break;
    case ModelKind::kConcBase:
      ex.source = concbase_prepare(ex.context, ex.source, config.max_concat_tokens);
      ex.context.clear();
      break;
    case ModelKind::kSent:
      ex.context.clear();
      break;
    default:
      break;
  }
  return ex;
}

std::vector<TrainingExample> prepare_examples(const ModelConfig& config,
                                              const std::vector<TrainingExample>& examples) {
  std::vector<TrainingExample> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(prepare_example(config, ex));
  return out;
}

}  // namespace ctxnmt
