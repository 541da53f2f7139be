#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "ivt/text.hpp"

using namespace ivt;

TEST_CASE("build_vocab keeps reserved ids and lexicographic order") {
  const Vocab v = build_vocab({"a red coat", "a red bag"}, 1);
  CHECK(v.size() == 9);
  CHECK(v.id_of("[CLS]") == kClsId);
  CHECK(v.id_of("[MASK]") == kMaskId);
  CHECK(v.id_of("a") == 5);
  CHECK(v.id_of("bag") == 6);
  CHECK(v.id_of("coat") == 7);
  CHECK(v.id_of("red") == 8);
}

TEST_CASE("build_vocab honors min_count") {
  const Vocab v = build_vocab({"a red coat", "a red bag"}, 2);
  CHECK(v.size() == 7);
  CHECK(v.contains("a"));
  CHECK(v.contains("red"));
  CHECK_FALSE(v.contains("coat"));
}

TEST_CASE("build_vocab rejects an empty corpus") {
  CHECK_THROWS_WITH_AS(build_vocab({}, 1), "empty corpus", ConfigError);
}

TEST_CASE("vocab file round trip") {
  const Vocab v = build_vocab({"a red coat"}, 1);
  const auto path = std::filesystem::temp_directory_path() / "ivt_vocab_test.txt";
  v.save(path.string());
  const Vocab loaded = Vocab::load(path.string());
  CHECK(loaded.tokens() == v.tokens());
  std::filesystem::remove(path);
}

namespace {

Vocab red_coat_vocab() { return Vocab({"[CLS]", "[SEP]", "[PAD]", "[UNK]", "[MASK]", "red", "coat"}); }

}  // namespace

TEST_CASE("tokenize pads empty input") {
  const Vocab v = red_coat_vocab();
  const TokenSequence seq = tokenize("", v, 4);
  CHECK(seq.ids == std::vector<int>{0, 1, 2, 2});
}

TEST_CASE("tokenize maps known and unknown tokens") {
  const Vocab v = red_coat_vocab();
  CHECK(tokenize("red coat", v, 4).ids == std::vector<int>{0, 5, 6, 1});
  CHECK(tokenize("red zzz", v, 4).ids == std::vector<int>{0, 5, 3, 1});
}

TEST_CASE("tokenize truncates and always fills max_len") {
  const Vocab v = red_coat_vocab();
  const TokenSequence seq = tokenize("red coat red coat red", v, 4);
  CHECK(seq.ids == std::vector<int>{0, 5, 6, 1});
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    std::string text;
    const int words = rng.uniform_int(10);
    for (int w = 0; w < words; ++w) {
      text += (rng.uniform() < 0.5 ? "red " : "blah, ");
    }
    const int max_len = 3 + rng.uniform_int(10);
    const TokenSequence seq2 = tokenize(text, v, max_len);
    CHECK(seq2.length() == max_len);
    CHECK(seq2.ids.front() == kClsId);
    CHECK(tokenize(text, v, max_len).ids == seq2.ids);  // deterministic
  }
}

TEST_CASE("tokenize strips punctuation and lowercases") {
  const Vocab v = red_coat_vocab();
  CHECK(tokenize("RED, Coat.", v, 5).ids == std::vector<int>{0, 5, 6, 1, 2});
}

TEST_CASE("tokenize requires max_len >= 3") {
  CHECK_THROWS_AS(tokenize("x", red_coat_vocab(), 2), ConfigError);
}

TEST_CASE("real_count ignores wrappers and padding") {
  const Vocab v = red_coat_vocab();
  CHECK(tokenize("red coat", v, 8).real_count() == 2);
  CHECK(tokenize("", v, 8).real_count() == 0);
}

TEST_CASE("split_levels splits phrases on periods and commas") {
  const PosLexicon lex = PosLexicon::builtin();
  const TextLevels levels = split_levels("The woman wears an orange coat, black pants.", lex);
  REQUIRE(levels.sentence.size() == 1);
  CHECK(levels.phrase == std::vector<std::string>{"The woman wears an orange coat", "black pants"});
  CHECK(levels.word == std::vector<std::string>{"woman", "orange", "coat", "black", "pants"});
}

TEST_CASE("split_levels degenerate single word") {
  const PosLexicon lex = PosLexicon::builtin();
  const TextLevels levels = split_levels("red", lex);
  CHECK(levels.sentence == std::vector<std::string>{"red"});
  CHECK(levels.phrase == std::vector<std::string>{"red"});
  CHECK(levels.word == std::vector<std::string>{"red"});
}

TEST_CASE("split_levels word level falls back to phrases") {
  const PosLexicon lex;  // empty: everything untagged
  const TextLevels levels = split_levels("a b", lex);
  CHECK(levels.word == std::vector<std::string>{"a b"});
}

TEST_CASE("split_levels phrase fallback when only separators") {
  const PosLexicon lex = PosLexicon::builtin();
  const TextLevels levels = split_levels(",,;", lex);
  CHECK(levels.phrase == std::vector<std::string>{",,;"});
}

TEST_CASE("split_levels properties on generated captions") {
  const PosLexicon lex = PosLexicon::builtin();
  Rng rng(11);
  const std::vector<std::string> nouns = {"hair", "top", "pants", "shoes", "bag"};
  const std::vector<std::string> adjs = {"red", "blue", "green", "white"};
  for (int trial = 0; trial < 40; ++trial) {
    std::string caption = "a person with";
    const int parts = 1 + rng.uniform_int(4);
    for (int p = 0; p < parts; ++p) {
      caption += " " + adjs[static_cast<std::size_t>(rng.uniform_int(4))] + " " +
                 nouns[static_cast<std::size_t>(rng.uniform_int(5))];
      caption += (p + 1 < parts) ? "," : ".";
    }
    const TextLevels levels = split_levels(caption, lex);

    // Joining phrases recovers the sentence's non-punctuation tokens in order.
    std::string joined;
    for (const auto& phrase : levels.phrase) joined += phrase + " ";
    CHECK(normalize_tokens(joined) == normalize_tokens(caption));

    // Every phrase is a contiguous substring of the sentence.
    for (const auto& phrase : levels.phrase) {
      CHECK(caption.find(phrase) != std::string::npos);
    }

    // Word-level tokens appear in the sentence.
    const auto sentence_tokens = normalize_tokens(caption);
    for (const auto& word : levels.word) {
      CHECK(std::find(sentence_tokens.begin(), sentence_tokens.end(), word) !=
            sentence_tokens.end());
    }
    CHECK_FALSE(levels.sentence.empty());
    CHECK_FALSE(levels.phrase.empty());
    CHECK_FALSE(levels.word.empty());
  }
}
