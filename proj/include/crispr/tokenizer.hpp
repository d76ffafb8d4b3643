#pragma once

// Byte-level tokenizer with a fixed merge table.
//
// Ids 0..2 are special tokens, ids 3..258 are raw bytes, and every merge in
// the table appends one id after that. Text is normalized (leading and
// trailing whitespace dropped, internal whitespace runs collapsed to one
// space) and then encoded byte by byte, after which merges are applied in
// rank order. Any byte sequence is encodable, so there is no out-of-vocabulary
// case.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace crispr {

using TokenId = std::int32_t;

inline constexpr TokenId kPadToken = 0;
inline constexpr TokenId kBosToken = 1;
inline constexpr TokenId kEosToken = 2;
inline constexpr TokenId kFirstByteToken = 3;

class Tokenizer {
 public:
  // The built-in tokenizer with the repository's merge table.
  static const Tokenizer& standard();

  // `merges` are (left, right) token strings; each must already be in the
  // vocabulary when its rank is reached.
  explicit Tokenizer(const std::vector<std::pair<std::string, std::string>>& merges);

  int vocab_size() const noexcept { return static_cast<int>(pieces_.size()); }

  // Throws EmptyInputError when nothing is left after normalization.
  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(const std::vector<TokenId>& ids) const;
  // Surface bytes of one token (empty for special tokens).
  const std::string& piece(TokenId id) const;

  static std::string normalize(std::string_view text);

 private:
  struct Merge {
    TokenId left;
    TokenId right;
    TokenId result;
  };
  std::vector<std::string> pieces_;
  std::vector<Merge> merges_;
};

}  // namespace crispr
