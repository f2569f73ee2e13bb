#include "ctxnmt/vocab.h"

#include <algorithm>
#include <fstream>
#include <map>
#include <stdexcept>

#include "ctxnmt/corpus.h"

namespace ctxnmt {

namespace {
const char* const kSpecials[] = {"<PAD>", "<BOS>", "<EOS>", "<SEP>", "<UNK>"};
constexpr std::string_view kTagPrefix = "<dom:";
}  // namespace

std::string Vocabulary::domain_tag(std::string_view domain) {
  return std::string(kTagPrefix) + std::string(domain) + ">";
}

std::vector<std::string> Vocabulary::reserved_symbols(const std::vector<std::string>& domains) {
  std::vector<std::string> out(std::begin(kSpecials), std::end(kSpecials));
  for (const auto& d : domains) out.push_back(domain_tag(d));
  return out;
}

Vocabulary::Vocabulary(const std::vector<std::string>& domains) {
  for (const auto& s : kSpecials) append(s);
  for (const auto& d : domains) {
    if (index_.count(domain_tag(d))) throw std::invalid_argument("duplicate domain " + d);
    append(domain_tag(d));
    domains_.push_back(d);
  }
}

TokenId Vocabulary::append(const std::string& token) {
  const auto id = static_cast<TokenId>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

Vocabulary Vocabulary::build(const std::vector<Document>& corpus,
                             const std::vector<std::string>& domains) {
  Vocabulary vocab(domains);
  std::map<std::string, std::size_t> counts;
  for (const auto& doc : corpus)
    for (const auto& pair : doc.sentences) {
      for (const auto& w : pair.source) ++counts[w];
      for (const auto& w : pair.target) ++counts[w];
    }
  std::vector<std::pair<std::string, std::size_t>> ordered(counts.begin(), counts.end());
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  for (const auto& [word, count] : ordered)
    if (!vocab.contains(word)) vocab.append(word);
  return vocab;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocabulary " + path);
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read vocabulary " + path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  if (lines.size() < std::size(kSpecials))
    throw std::runtime_error("vocabulary " + path + " lacks the reserved symbols");
  for (std::size_t i = 0; i < std::size(kSpecials); ++i)
    if (lines[i] != kSpecials[i])
      throw std::runtime_error("vocabulary " + path + ": line " + std::to_string(i + 1) +
                               " should be " + kSpecials[i]);
  std::vector<std::string> domains;
  std::size_t i = std::size(kSpecials);
  for (; i < lines.size(); ++i) {
    const std::string& t = lines[i];
    if (t.size() <= kTagPrefix.size() + 1 || t.compare(0, kTagPrefix.size(), kTagPrefix) != 0 ||
        t.back() != '>')
      break;
    domains.push_back(t.substr(kTagPrefix.size(), t.size() - kTagPrefix.size() - 1));
  }
  Vocabulary vocab(domains);
  for (; i < lines.size(); ++i) {
    if (vocab.contains(lines[i]))
      throw std::runtime_error("vocabulary " + path + ": duplicate token on line " +
                               std::to_string(i + 1));
    vocab.append(lines[i]);
  }
  return vocab;
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.count(std::string(token)) > 0;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[static_cast<std::size_t>(id)];
}

TokenId Vocabulary::tag_id(std::string_view domain) const {
  auto it = index_.find(domain_tag(domain));
  if (it == index_.end())
    throw std::invalid_argument("no domain tag for '" + std::string(domain) + "'");
  return it->second;
}

bool Vocabulary::is_tag(TokenId id) const {
  return id >= kFirstTag && id < kFirstTag + static_cast<TokenId>(domains_.size());
}

bool Vocabulary::is_reserved(TokenId id) const {
  return id >= 0 && id < kFirstTag + static_cast<TokenId>(domains_.size());
}

std::vector<TokenId> Vocabulary::encode(const std::vector<std::string>& words) const {
  std::vector<TokenId> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(id(w));
  return ids;
}

std::vector<std::string> Vocabulary::decode(const std::vector<TokenId>& ids) const {
  std::vector<std::string> words;
  for (TokenId id : ids)
    if (!is_reserved(id)) words.push_back(token(id));
  return words;
}

}  // namespace ctxnmt
