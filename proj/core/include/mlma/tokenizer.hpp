#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mlma/types.hpp"

namespace mlma::tokenizer {

// Text normalization applied to transcripts, references and hypotheses alike:
//   1. Unicode NFC.
//   2. Optional lowercasing (root locale).
//   3. U+2019 RIGHT SINGLE QUOTATION MARK becomes U+0027 APOSTROPHE.
//   4. When strip_punctuation is set, every code point in a Unicode
//      punctuation category (Pc Pd Ps Pe Pi Pf Po) other than the apostrophe
//      becomes a space.
//   5. Runs of Unicode whitespace collapse to one U+0020; leading and
//      trailing whitespace is removed.
struct NormalizerConfig {
  bool lowercase = true;
  bool strip_punctuation = true;
};

std::string normalize_text(std::string_view text, const NormalizerConfig& cfg = {});

// UTF-8 <-> code points. Malformed UTF-8 raises ParseError.
std::u32string to_code_points(std::string_view utf8);
std::string to_utf8(std::u32string_view code_points);

// Character vocabulary: 0 = blank, 1 = BOS, 2 = EOS, then characters in
// ascending code point order from id 3.
class Vocab {
 public:
  // Normalizes every transcript, then collects the support of the character
  // multiset. Empty corpus (no characters at all) raises ValidationError.
  static Vocab build(std::span<const std::string> transcripts, const NormalizerConfig& cfg = {});
  // Symbols must be strictly ascending and contain no duplicates.
  static Vocab from_symbols(std::u32string symbols);

  std::size_t size() const { return kFirstSymbolId + symbols_.size(); }
  const std::u32string& symbols() const { return symbols_; }
  std::optional<TokenId> id_of(char32_t c) const;
  // Reserved ids map to std::nullopt.
  std::optional<char32_t> symbol_of(TokenId id) const;

  // File form: UTF-8, one entry per line, line k (1-based) holds id k - 1.
  // Lines 1-3 are "<blank>", "<s>", "</s>". Space is written as "\s" and
  // backslash as "\\".
  std::string serialize() const;
  static Vocab parse(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  // Lowercase hex SHA-256 of serialize().
  std::string digest() const;

  bool operator==(const Vocab& other) const { return symbols_ == other.symbols_; }

 private:
  std::u32string symbols_;
  std::unordered_map<char32_t, TokenId> index_;
};

// Table lookup per code point; text is expected to be normalized already.
// Unknown characters raise OovError naming the character and utterance.
TokenSequence encode(std::string_view text, const Vocab& vocab, std::string_view utterance_id = {});
// Reserved ids decode to nothing; ids outside the vocabulary raise ValidationError.
std::string decode(std::span<const TokenId> ids, const Vocab& vocab);

}  // namespace mlma::tokenizer
