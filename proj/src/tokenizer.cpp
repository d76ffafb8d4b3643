#include "crispr/tokenizer.hpp"

#include <cctype>
#include <unordered_map>

#include "crispr/errors.hpp"

namespace crispr {

namespace {

// Rank order matters: a merge may only use pieces produced by earlier ranks.
const std::vector<std::pair<std::string, std::string>> kStandardMerges = {
    {"t", "h"},   {"h", "e"},   {"i", "n"},   {"e", "r"},   {"a", "n"},   {"r", "e"},
    {"o", "n"},   {"a", "t"},   {"e", "n"},   {"n", "d"},   {"o", "u"},   {"e", "s"},
    {"o", "r"},   {"t", "o"},   {"i", "s"},   {"i", "t"},   {"a", "l"},   {"a", "r"},
    {"s", "t"},   {"e", "d"},   {"l", "e"},   {"s", "e"},   {"o", "w"},   {"c", "h"},
    {"e", "a"},   {"n", "g"},   {"o", "f"},   {" ", "t"},   {" ", "a"},   {" ", "w"},
    {" ", "s"},   {" ", "o"},   {"th", "e"},  {" t", "he"}, {"in", "g"},  {"an", "d"},
    {" a", "nd"}, {"o", "p"},   {"p", "le"},  {"w", "h"},
};

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

}  // namespace

const Tokenizer& Tokenizer::standard() {
  static const Tokenizer tok(kStandardMerges);
  return tok;
}

Tokenizer::Tokenizer(const std::vector<std::pair<std::string, std::string>>& merges) {
  pieces_ = {"", "", ""};
  for (int b = 0; b < 256; ++b) pieces_.emplace_back(1, static_cast<char>(b));
  std::unordered_map<std::string, TokenId> lookup;
  for (TokenId id = kFirstByteToken; id < static_cast<TokenId>(pieces_.size()); ++id)
    lookup.emplace(pieces_[static_cast<std::size_t>(id)], id);
  for (const auto& [left, right] : merges) {
    const auto l = lookup.find(left);
    const auto r = lookup.find(right);
    if (l == lookup.end() || r == lookup.end())
      throw ConfigError("merge '" + left + "' + '" + right + "' uses an unknown piece");
    const auto result = static_cast<TokenId>(pieces_.size());
    pieces_.push_back(left + right);
    if (!lookup.emplace(pieces_.back(), result).second)
      throw ConfigError("merge '" + left + right + "' duplicates an existing piece");
    merges_.push_back({l->second, r->second, result});
  }
}

std::string Tokenizer::normalize(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char c : text) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  const std::string norm = normalize(text);
  if (norm.empty()) throw EmptyInputError("cannot tokenize empty text");
  std::vector<TokenId> ids;
  ids.reserve(norm.size());
  for (char c : norm) ids.push_back(kFirstByteToken + static_cast<unsigned char>(c));
  for (const Merge& m : merges_) {
    std::size_t w = 0;
    for (std::size_t r = 0; r < ids.size(); ++r) {
      if (r + 1 < ids.size() && ids[r] == m.left && ids[r + 1] == m.right) {
        ids[w++] = m.result;
        ++r;
      } else {
        ids[w++] = ids[r];
      }
    }
    ids.resize(w);
  }
  return ids;
}

std::string Tokenizer::decode(const std::vector<TokenId>& ids) const {
  std::string out;
  for (TokenId id : ids) out += piece(id);
  return out;
}

const std::string& Tokenizer::piece(TokenId id) const {
  if (id < 0 || id >= vocab_size()) throw AddressError("token id out of range");
  return pieces_[static_cast<std::size_t>(id)];
}

}  // namespace crispr
