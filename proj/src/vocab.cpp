#include "collab/vocab.hpp"

namespace collab {

TokenId CharTokenizer::id_of(char c) {
  if (c < kFirstChar || c > kLastChar) return special::kUnk;
  return special::kCount + static_cast<TokenId>(c - kFirstChar);
}

std::vector<TokenId> CharTokenizer::tokenize(std::string_view text) {
  std::vector<TokenId> ids;
  ids.reserve(text.size());
  for (char c : text) ids.push_back(id_of(c));
  return ids;
}

std::string CharTokenizer::detokenize(std::span<const TokenId> ids) {
  std::string out;
  out.reserve(ids.size());
  for (TokenId id : ids) {
    if (id >= special::kCount && id < kVocabSize) {
      out.push_back(static_cast<char>(kFirstChar + (id - special::kCount)));
    } else if (id == special::kUnk || id >= kVocabSize || id < 0) {
      out.append(kUnkGlyph);
    }
  }
  return out;
}

bool CharTokenizer::is_sentence_end(TokenId id) {
  return id == id_of('.') || id == id_of('!') || id == id_of('?');
}

}  // namespace collab
