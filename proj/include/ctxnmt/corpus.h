#ifndef CTXNMT_CORPUS_H_
#define CTXNMT_CORPUS_H_

// Document-aware corpus handling: the line format, context windows and
// token-budget batching.
//
// Corpus file format (UTF-8):
//   ### doc <doc_id> <domain>      opens a document
//   source tokens ||| target tokens
// Lines before the first header form one implicit document.

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctxnmt/ops.h"
#include "ctxnmt/vocab.h"

namespace ctxnmt {

struct SentencePair {
  std::vector<std::string> source;
  std::vector<std::string> target;
  bool operator==(const SentencePair&) const = default;
};

struct Document {
  std::string id;
  std::string domain;
  std::vector<SentencePair> sentences;
  bool operator==(const Document&) const = default;
};

using Corpus = std::vector<Document>;

class CorpusFormatError : public std::runtime_error {
 public:
  CorpusFormatError(const std::string& source, std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

inline constexpr const char* kImplicitDocumentId = "doc0";
inline constexpr const char* kUnknownDomain = "unknown";
inline constexpr std::size_t kMaxSentenceTokens = 100;

Corpus parse_corpus(std::istream& in, const std::string& source_name = "<stream>");
Corpus load_corpus(const std::string& path);
void write_corpus(std::ostream& out, const Corpus& corpus);
void save_corpus(const std::string& path, const Corpus& corpus);

std::vector<std::string> tokenize(const std::string& text);
std::string join_tokens(const std::vector<std::string>& tokens);

// Distinct domain labels in first-seen order.
std::vector<std::string> corpus_domains(const Corpus& corpus);
std::size_t sentence_count(const Corpus& corpus);
// Documents whose domain is in `domains`.
Corpus select_domains(const Corpus& corpus, const std::vector<std::string>& domains);

struct TrainingExample {
  std::vector<TokenId> source;   // words + <EOS>
  std::vector<TokenId> target;   // words + <EOS>
  std::vector<TokenId> context;  // previous source sentences joined by <SEP>
  TokenId domain_tag = Vocabulary::kUnk;
  std::string domain;
  std::string doc_id;
  std::size_t position = 0;
};

// The min(k, index) source sentences preceding `index`, oldest first, each
// cut to its first `per_sentence_limit` tokens, joined by <SEP>.
std::vector<TokenId> build_context(const Document& doc, std::size_t index, std::size_t k,
                                   const Vocabulary& vocab,
                                   std::size_t per_sentence_limit = kMaxSentenceTokens);

// One example per sentence, in corpus order.
std::vector<TrainingExample> make_examples(const Corpus& corpus, const Vocabulary& vocab,
                                           std::size_t k,
                                           std::size_t per_sentence_limit = kMaxSentenceTokens);

// Drops examples whose source or target exceeds max_tokens words.
std::vector<TrainingExample> filter_by_length(std::vector<TrainingExample> examples,
                                              std::size_t max_tokens = kMaxSentenceTokens);

struct PaddedIds {
  std::size_t batch = 0;
  std::size_t len = 0;
  std::vector<TokenId> ids;          // batch*len, <PAD> filled
  std::vector<std::uint8_t> valid;   // batch*len

  static PaddedIds from(const std::vector<std::vector<TokenId>>& rows);
  std::size_t row_length(std::size_t b) const;
};

struct Batch {
  PaddedIds source;
  PaddedIds target_in;   // <BOS> + words
  PaddedIds target_out;  // words + <EOS>
  PaddedIds context;
  std::vector<std::size_t> example_indices;
  std::size_t target_tokens = 0;
};

Batch make_batch(const std::vector<TrainingExample>& examples,
                 const std::vector<std::size_t>& indices);

inline constexpr std::size_t kUnlimitedBudget = std::numeric_limits<std::size_t>::max();

// Length-bucketed batches holding at most `budget` non-pad target tokens,
// emitted in a seeded shuffled order. Every example appears exactly once.
std::vector<Batch> batch_by_tokens(const std::vector<TrainingExample>& examples,
                                   std::size_t budget, std::uint64_t shuffle_seed);

}  // namespace ctxnmt

#endif  // CTXNMT_CORPUS_H_
