#ifndef CTXNMT_VOCAB_H_
#define CTXNMT_VOCAB_H_

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ctxnmt/ops.h"

namespace ctxnmt {

struct Document;

// Joint source/target word vocabulary. Ids 0..4 are <PAD> <BOS> <EOS> <SEP>
// <UNK>, followed by one <dom:LABEL> tag per known domain, followed by words
// in descending frequency (ties in byte order).
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kSep = 3;
  static constexpr TokenId kUnk = 4;
  static constexpr TokenId kFirstTag = 5;

  static std::string domain_tag(std::string_view domain);
  static std::vector<std::string> reserved_symbols(const std::vector<std::string>& domains);

  // Reserved symbols only.
  explicit Vocabulary(const std::vector<std::string>& domains = {});

  static Vocabulary build(const std::vector<Document>& corpus, const std::vector<std::string>& domains);

  // One token per line, line number = id.
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  std::size_t size() const { return tokens_.size(); }
  TokenId id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const;

  const std::vector<std::string>& domains() const { return domains_; }
  // Throws std::invalid_argument for a domain without a reserved tag.
  TokenId tag_id(std::string_view domain) const;
  bool is_tag(TokenId id) const;
  bool is_reserved(TokenId id) const;

  std::vector<TokenId> encode(const std::vector<std::string>& words) const;
  // Drops reserved symbols.
  std::vector<std::string> decode(const std::vector<TokenId>& ids) const;

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  TokenId append(const std::string& token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  std::vector<std::string> domains_;
};

}  // namespace ctxnmt

#endif  // CTXNMT_VOCAB_H_
