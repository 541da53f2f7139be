#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "ivt/common.hpp"

namespace ivt {

enum class Modality { kImage, kText };

// Reserved vocabulary ids, fixed for every vocab.
inline constexpr int kClsId = 0;
inline constexpr int kSepId = 1;
inline constexpr int kPadId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kMaskId = 4;
inline constexpr int kNumReservedIds = 5;

class Vocab {
 public:
  Vocab();  // reserved tokens only
  explicit Vocab(const std::vector<std::string>& tokens);  // full token list, reserved first

  int size() const { return static_cast<int>(tokens_.size()); }
  // Returns the id, or kUnkId for unknown tokens.
  int id_of(const std::string& token) const;
  const std::string& token_of(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  bool contains(const std::string& token) const { return token_to_id_.count(token) > 0; }

  // One token per line, line number == id.
  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> token_to_id_;
};

struct TextLevels {
  std::vector<std::string> sentence;
  std::vector<std::string> phrase;
  std::vector<std::string> word;
};

struct TokenSequence {
  std::vector<int> ids;  // [CLS] tok... [SEP] pad...
  Modality modality = Modality::kText;
  int type_id = 1;

  int length() const { return static_cast<int>(ids.size()); }
  // Tokens between CLS and SEP (neither reserved padding nor the wrappers).
  int real_count() const;
  // True where the position is padding (masked out as an attention key).
  std::vector<bool> pad_mask() const;
};

enum class PosTag { kNoun, kAdjective, kOther };

// Deterministic word -> tag lookup. Untagged words report kOther.
class PosLexicon {
 public:
  PosLexicon() = default;
  explicit PosLexicon(std::map<std::string, PosTag> entries) : entries_(std::move(entries)) {}
  PosTag tag_of(const std::string& word) const;
  void add(const std::string& word, PosTag tag) { entries_[word] = tag; }
  // Covers the synthetic attribute corpus vocabulary.
  static PosLexicon builtin();

 private:
  std::map<std::string, PosTag> entries_;
};

// Lowercases, removes punctuation characters, splits on whitespace.
// Tokens that become empty after stripping are dropped.
std::vector<std::string> normalize_tokens(const std::string& text);

// Reserved ids first, then every normalized token occurring >= min_count times
// in lexicographic order. Throws ConfigError on an empty corpus.
Vocab build_vocab(const std::vector<std::string>& corpus, int min_count);

// [CLS] ids [SEP] padded to max_len; unknown tokens map to UNK; input truncated
// to max_len - 2 real tokens. Total and deterministic. Requires max_len >= 3.
TokenSequence tokenize(const std::string& text, const Vocab& vocab, int max_len);

// sentence = the full caption; phrase = '.'/','/';' splits (trimmed, empties
// dropped, falls back to the sentence); word = nouns and adjectives in first-
// occurrence order, duplicates removed, falls back to the phrase list.
TextLevels split_levels(const std::string& text, const PosLexicon& lexicon);

}  // namespace ivt
