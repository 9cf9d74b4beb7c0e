#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace collab {

using TokenId = std::int32_t;

/// Special ids shared by every backend.
namespace special {
inline constexpr TokenId kBos = 0;
inline constexpr TokenId kEos = 1;
inline constexpr TokenId kUnk = 2;
inline constexpr TokenId kSep = 3;
inline constexpr TokenId kCount = 4;
}  // namespace special

/// Character-level tokenizer over printable ASCII (0x20..0x7e) plus the four
/// specials. Ids 0..3 are specials, then one id per character in code order.
class CharTokenizer {
 public:
  static constexpr char kFirstChar = ' ';
  static constexpr char kLastChar = '~';
  static constexpr TokenId kVocabSize = special::kCount + (kLastChar - kFirstChar + 1);
  /// Rendered for UNK ids: U+FFFD.
  static constexpr std::string_view kUnkGlyph = "\xEF\xBF\xBD";

  static std::vector<TokenId> tokenize(std::string_view text);
  /// BOS, EOS and SEP render as nothing.
  static std::string detokenize(std::span<const TokenId> ids);

  static TokenId id_of(char c);
  static bool is_sentence_end(TokenId id);
};

}  // namespace collab
