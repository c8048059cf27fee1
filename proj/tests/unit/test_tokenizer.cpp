#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <random>

#include "mlma/error.hpp"
#include "mlma/tokenizer.hpp"

namespace mlma::tokenizer {
namespace {

std::vector<std::string> corpus(std::initializer_list<const char*> texts) {
  return {texts.begin(), texts.end()};
}

TEST(Vocab, SortRuleAssignsIds) {
  const auto texts = corpus({"ab", "ba"});
  const auto v = Vocab::build(texts);
  EXPECT_EQ(v.size(), 5u);
  EXPECT_EQ(v.id_of(U'a'), 3);
  EXPECT_EQ(v.id_of(U'b'), 4);
  EXPECT_FALSE(v.symbol_of(kBlankId));
  EXPECT_FALSE(v.symbol_of(kBosId));
  EXPECT_FALSE(v.symbol_of(kEosId));
}

TEST(Vocab, OrderIndependent) {
  auto texts = corpus({"hello world", "ciao mondo", "bonjour", "hallo welt"});
  const auto ref = Vocab::build(texts);
  std::mt19937_64 rng(121);
  for (int i = 0; i < 10; ++i) {
    std::shuffle(texts.begin(), texts.end(), rng);
    EXPECT_EQ(Vocab::build(texts), ref);
    EXPECT_EQ(Vocab::build(texts).digest(), ref.digest());
  }
}

TEST(Vocab, ComposedAndDecomposedMerge) {
  const auto texts = corpus({"caf\u00e9", "cafe\u0301"});
  const auto v = Vocab::build(texts);
  EXPECT_EQ(v.symbols(), U"acf\u00e9");
}

TEST(Vocab, EmptyCorpusIsError) {
  std::vector<std::string> none;
  EXPECT_THROW(Vocab::build(none), ValidationError);
  const auto blank = corpus({"", "  ", "?!"});
  EXPECT_THROW(Vocab::build(blank), ValidationError);
}

TEST(Vocab, FileRoundTripWithEscapes) {
  const auto v = Vocab::from_symbols(U" '\\az\u00df");
  const auto text = v.serialize();
  EXPECT_EQ(text, "<blank>\n<s>\n</s>\n\\s\n'\n\\\\\na\nz\n\u00df\n");
  EXPECT_EQ(Vocab::parse(text), v);
  const auto path = std::filesystem::temp_directory_path() / "mlma_vocab_test.txt";
  v.save(path);
  EXPECT_EQ(Vocab::load(path), v);
  std::filesystem::remove(path);
}

TEST(Vocab, ParseRejectsBadFiles) {
  EXPECT_THROW(Vocab::parse("<blank>\n<s>\n"), ParseError);
  EXPECT_THROW(Vocab::parse("<blank>\n<bos>\n</s>\na\n"), ParseError);
  EXPECT_THROW(Vocab::parse("<blank>\n<s>\n</s>\nb\na\n"), ParseError);
  EXPECT_THROW(Vocab::parse("<blank>\n<s>\n</s>\nab\n"), ParseError);
  EXPECT_THROW(Vocab::parse("<blank>\n<s>\n</s>\na\na\n"), ParseError);
}

TEST(Vocab, DigestIsSha256OfFile) {
  const auto v = Vocab::from_symbols(U"ab");
  EXPECT_EQ(v.digest().size(), 64u);
  EXPECT_NE(v.digest(), Vocab::from_symbols(U"abc").digest());
  // Reference value from coreutils sha256sum over the serialized file.
  EXPECT_EQ(v.digest(), "289f0c3eddce7cee15350283f793be81d26301876b52886aa701f3cddd1dcd74");
}

TEST(Codec, TableLookup) {
  const auto texts = corpus({"ab", "ba"});
  const auto v = Vocab::build(texts);
  EXPECT_EQ(encode("aba", v), (TokenSequence{3, 4, 3}));
  EXPECT_EQ(decode(TokenSequence{3, 4, 3}, v), "aba");
}

TEST(Codec, EmptyRoundTrip) {
  const auto v = Vocab::from_symbols(U"a");
  EXPECT_TRUE(encode("", v).empty());
  EXPECT_EQ(decode(TokenSequence{}, v), "");
}

TEST(Codec, ReservedIdsDecodeToNothing) {
  const auto v = Vocab::from_symbols(U"ab");
  EXPECT_EQ(decode(TokenSequence{kBosId, 3, kBlankId, 4, kEosId}, v), "ab");
  EXPECT_THROW(decode(TokenSequence{5}, v), ValidationError);
}

TEST(Codec, OovNamesCharacterAndUtterance) {
  const auto texts = corpus({"ab", "ba"});
  const auto v = Vocab::build(texts);
  try {
    encode("a\u00df", v, "utt-7");
    FAIL();
  } catch (const OovError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("\u00df"), std::string::npos) << msg;
    EXPECT_NE(msg.find("utt-7"), std::string::npos) << msg;
  }
}

TEST(Codec, RoundTripForEveryBuildTranscript) {
  const auto texts = corpus({"Das ist gut.", "c'est l\u2019homme", "¿Qué tal?", "een twee  drie", "perch\u00e9 no"});
  const auto v = Vocab::build(texts);
  for (const auto& t : texts) {
    const auto n = normalize_text(t);
    EXPECT_EQ(decode(encode(n, v), v), n);
  }
}

TEST(Normalize, Rules) {
  EXPECT_EQ(normalize_text("  Hello,   World!  "), "hello world");
  EXPECT_EQ(normalize_text("l\u2019homme"), "l'homme");
  EXPECT_EQ(normalize_text("porte-monnaie"), "porte monnaie");
  EXPECT_EQ(normalize_text("\u00bfQu\u00e9?"), "qu\u00e9");
  EXPECT_EQ(normalize_text("A\tB\nC"), "a b c");
  EXPECT_EQ(normalize_text("Cafe\u0301"), "caf\u00e9");
  NormalizerConfig keep{false, false};
  EXPECT_EQ(normalize_text("Hi, there", keep), "Hi, there");
}

TEST(Normalize, Idempotent) {
  for (const char* s : {"Ça va?", "  Über  alles ", "ÉCOLE-ÉTÉ", "x"}) {
    const auto once = normalize_text(s);
    EXPECT_EQ(normalize_text(once), once);
  }
}

TEST(Utf8, MalformedInputIsParseError) {
  EXPECT_THROW(to_code_points("ab\xff"), ParseError);
  EXPECT_THROW(normalize_text("\xc3"), ParseError);
  EXPECT_EQ(to_utf8(to_code_points("h\u00e9\u4e16")), "h\u00e9\u4e16");
}

}  // namespace
}  // namespace mlma::tokenizer
