#ifndef CTXNMT_CONTEXT_H_
#define CTXNMT_CONTEXT_H_

// Input-side preparation for the context baselines and per-kind batching.

#include <vector>

#include "ctxnmt/config.h"
#include "ctxnmt/corpus.h"

namespace ctxnmt {

// [tag] + source. Throws std::invalid_argument unless tag is a domain tag id.
std::vector<TokenId> tagbase_prepare(const std::vector<TokenId>& source, TokenId tag,
                                     const Vocabulary& vocab);
std::vector<TokenId> tagbase_prepare(const std::vector<TokenId>& source, TokenId tag);

// context <SEP> source; with an empty context the source unchanged. When the
// result would exceed max_tokens, the oldest context sentences go first.
std::vector<TokenId> concbase_prepare(const std::vector<TokenId>& context,
                                      const std::vector<TokenId>& source, std::size_t max_tokens);

// Rewrites one example's inputs for the model kind: TagBase prepends the
// example's domain tag, ConcBase folds the context into the source, and
// kinds without a context path drop it.
TrainingExample prepare_example(const ModelConfig& config, const TrainingExample& example);
std::vector<TrainingExample> prepare_examples(const ModelConfig& config,
                                              const std::vector<TrainingExample>& examples);

}  // namespace ctxnmt

#endif  // CTXNMT_CONTEXT_H_
