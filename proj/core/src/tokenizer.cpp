#include "mlma/tokenizer.hpp"

#include <unicode/locid.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include <algorithm>
#include <cstdio>
#include <set>

#include "mlma/error.hpp"
#include "mlma/io_util.hpp"

namespace mlma::tokenizer {

namespace {

constexpr char32_t kApostrophe = U'\'';
constexpr char32_t kRightQuote = U'’';
constexpr std::string_view kReserved[] = {"<blank>", "<s>", "</s>"};

std::string describe_char(char32_t c) {
  char code[16];
  std::snprintf(code, sizeof code, "U+%04X", static_cast<unsigned>(c));
  return "'" + to_utf8(std::u32string(1, c)) + "' (" + code + ")";
}

bool is_punctuation(char32_t c) {
  return c != kApostrophe && u_ispunct(static_cast<UChar32>(c));
}

}  // namespace

std::u32string to_code_points(std::string_view utf8) {
  std::u32string out;
  out.reserve(utf8.size());
  const auto* s = reinterpret_cast<const std::uint8_t*>(utf8.data());
  const auto length = static_cast<std::int32_t>(utf8.size());
  std::int32_t i = 0;
  while (i < length) {
    const std::int32_t start = i;
    UChar32 c;
    U8_NEXT(s, i, length, c);
    if (c < 0) throw ParseError("malformed UTF-8 at byte offset " + std::to_string(start));
    out.push_back(static_cast<char32_t>(c));
  }
  return out;
}

std::string to_utf8(std::u32string_view code_points) {
  std::string out;
  out.reserve(code_points.size());
  for (char32_t c : code_points) {
    std::uint8_t buf[U8_MAX_LENGTH];
    std::int32_t n = 0;
    UBool error = false;
    U8_APPEND(buf, n, U8_MAX_LENGTH, static_cast<UChar32>(c), error);
    if (error) throw ValidationError("invalid code point " + std::to_string(static_cast<unsigned>(c)));
    out.append(reinterpret_cast<const char*>(buf), static_cast<std::size_t>(n));
  }
  return out;
}

std::string normalize_text(std::string_view text, const NormalizerConfig& cfg) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw RuntimeFailure(std::string("ICU NFC unavailable: ") + u_errorName(status));
  to_code_points(text);  // rejects malformed input with a byte offset
  icu::UnicodeString u = icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<std::int32_t>(text.size())));
  icu::UnicodeString normalized = nfc->normalize(u, status);
  if (U_FAILURE(status)) throw RuntimeFailure(std::string("ICU normalization failed: ") + u_errorName(status));
  if (cfg.lowercase) {
    normalized.toLower(icu::Locale::getRoot());
    // Lowercasing can denormalize (e.g. final sigma contexts); re-apply NFC.
    normalized = nfc->normalize(normalized, status);
  }
  std::string utf8;
  normalized.toUTF8String(utf8);

  std::u32string out;
  bool pending_space = false;
  for (char32_t c : to_code_points(utf8)) {
    if (c == kRightQuote) c = kApostrophe;
    if (cfg.strip_punctuation && is_punctuation(c)) c = U' ';
    if (u_isUWhiteSpace(static_cast<UChar32>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(U' ');
    pending_space = false;
    out.push_back(c);
  }
  return to_utf8(out);
}

Vocab Vocab::build(std::span<const std::string> transcripts, const NormalizerConfig& cfg) {
  std::set<char32_t> support;
  for (const auto& text : transcripts) {
    for (char32_t c : to_code_points(normalize_text(text, cfg))) support.insert(c);
  }
  if (support.empty()) throw ValidationError("build_vocab: corpus contains no characters");
  return from_symbols(std::u32string(support.begin(), support.end()));
}

Vocab Vocab::from_symbols(std::u32string symbols) {
  Vocab v;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i > 0 && symbols[i] <= symbols[i - 1]) {
      throw ValidationError("vocab: symbols must be strictly ascending by code point (entry " +
                            std::to_string(i + kFirstSymbolId) + ")");
    }
    v.index_.emplace(symbols[i], static_cast<TokenId>(i + kFirstSymbolId));
  }
  v.symbols_ = std::move(symbols);
  return v;
}

std::optional<TokenId> Vocab::id_of(char32_t c) const {
  const auto it = index_.find(c);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::optional<char32_t> Vocab::symbol_of(TokenId id) const {
  if (id < kFirstSymbolId || static_cast<std::size_t>(id) >= size()) return std::nullopt;
  return symbols_[static_cast<std::size_t>(id - kFirstSymbolId)];
}

std::string Vocab::serialize() const {
  std::string out;
  for (auto r : kReserved) {
    out += r;
    out += '\n';
  }
  for (char32_t c : symbols_) {
    if (c == U' ') {
      out += "\\s";
    } else if (c == U'\\') {
      out += "\\\\";
    } else {
      out += to_utf8(std::u32string(1, c));
    }
    out += '\n';
  }
  return out;
}

Vocab Vocab::parse(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto end = text.find('\n', pos);
    if (end == std::string_view::npos) {
      lines.push_back(text.substr(pos));
      break;
    }
    lines.push_back(text.substr(pos, end - pos));
    pos = end + 1;
  }
  if (lines.size() < 3) throw ParseError("vocab: missing reserved header (need 3 lines)");
  for (std::size_t i = 0; i < 3; ++i) {
    if (lines[i] != kReserved[i]) {
      throw ParseError("vocab line " + std::to_string(i + 1) + ": expected \"" + std::string(kReserved[i]) + "\"");
    }
  }
  std::u32string symbols;
  for (std::size_t i = 3; i < lines.size(); ++i) {
    const auto line = lines[i];
    const std::string where = "vocab line " + std::to_string(i + 1);
    if (line == "\\s") {
      symbols.push_back(U' ');
      continue;
    }
    if (line == "\\\\") {
      symbols.push_back(U'\\');
      continue;
    }
    const auto cps = to_code_points(line);
    if (cps.size() != 1 || cps[0] == U'\\') throw ParseError(where + ": expected exactly one character");
    symbols.push_back(cps[0]);
  }
  try {
    return from_symbols(std::move(symbols));
  } catch (const ValidationError& e) {
    throw ParseError(e.what());
  }
}

void Vocab::save(const std::filesystem::path& path) const {
  const auto text = serialize();
  io::write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Vocab Vocab::load(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  try {
    return parse(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string Vocab::digest() const { return io::sha256_hex(serialize()); }

TokenSequence encode(std::string_view text, const Vocab& vocab, std::string_view utterance_id) {
  TokenSequence ids;
  for (char32_t c : to_code_points(text)) {
    const auto id = vocab.id_of(c);
    if (!id) {
      throw OovError("character " + describe_char(c) + " not in vocabulary" +
                     (utterance_id.empty() ? std::string() : " (utterance " + std::string(utterance_id) + ")"));
    }
    ids.push_back(*id);
  }
  return ids;
}

std::string decode(std::span<const TokenId> ids, const Vocab& vocab) {
  std::u32string out;
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab.size()) {
      throw ValidationError("decode: id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(vocab.size()));
    }
    if (const auto c = vocab.symbol_of(id)) out.push_back(*c);
  }
  return to_utf8(out);
}

}  // namespace mlma::tokenizer
