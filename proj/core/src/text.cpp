#include "ivt/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace ivt {

namespace {

const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> kReserved = {"[CLS]", "[SEP]", "[PAD]", "[UNK]", "[MASK]"};
  return kReserved;
}

}  // namespace

Vocab::Vocab() : Vocab(reserved_tokens()) {}

Vocab::Vocab(const std::vector<std::string>& tokens) : tokens_(tokens) {
  if (tokens_.size() < kNumReservedIds) {
    throw ConfigError("vocab must contain the five reserved tokens");
  }
  for (int i = 0; i < kNumReservedIds; ++i) {
    if (tokens_[static_cast<std::size_t>(i)] != reserved_tokens()[static_cast<std::size_t>(i)]) {
      throw ConfigError("vocab reserved tokens must be [CLS] [SEP] [PAD] [UNK] [MASK] at ids 0..4");
    }
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    auto [it, inserted] = token_to_id_.emplace(tokens_[i], static_cast<int>(i));
    if (!inserted) throw ConfigError("duplicate vocab token: " + tokens_[i]);
  }
}

int Vocab::id_of(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnkId : it->second;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocab file: " + path);
  for (const auto& t : tokens_) out << t << '\n';
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read vocab file: " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  while (!tokens.empty() && tokens.back().empty()) tokens.pop_back();
  return Vocab(tokens);
}

int TokenSequence::real_count() const {
  int n = 0;
  for (int id : ids) {
    if (id != kClsId && id != kSepId && id != kPadId) ++n;
  }
  return n;
}

std::vector<bool> TokenSequence::pad_mask() const {
  std::vector<bool> mask(ids.size(), false);
  for (std::size_t i = 0; i < ids.size(); ++i) mask[i] = (ids[i] == kPadId);
  return mask;
}

PosTag PosLexicon::tag_of(const std::string& word) const {
  auto it = entries_.find(word);
  return it == entries_.end() ? PosTag::kOther : it->second;
}

std::vector<std::string> normalize_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::string current;
  for (char raw : text) {
    const unsigned char c = static_cast<unsigned char>(raw);
    if (std::isspace(c)) {
      if (!current.empty()) {
        out.push_back(current);
        current.clear();
      }
    } else if (!std::ispunct(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!current.empty()) out.push_back(current);
  return out;
}

Vocab build_vocab(const std::vector<std::string>& corpus, int min_count) {
  if (corpus.empty()) throw ConfigError("empty corpus");
  std::map<std::string, int> counts;
  for (const auto& text : corpus) {
    for (const auto& tok : normalize_tokens(text)) ++counts[tok];
  }
  std::vector<std::string> tokens = {"[CLS]", "[SEP]", "[PAD]", "[UNK]", "[MASK]"};
  for (const auto& [tok, count] : counts) {
    if (count >= min_count) tokens.push_back(tok);  // std::map keeps lexicographic order
  }
  return Vocab(tokens);
}

TokenSequence tokenize(const std::string& text, const Vocab& vocab, int max_len) {
  if (max_len < 3) throw ConfigError("tokenize: max_len must be >= 3");
  TokenSequence seq;
  seq.modality = Modality::kText;
  seq.type_id = 1;
  seq.ids.reserve(static_cast<std::size_t>(max_len));
  seq.ids.push_back(kClsId);
  const auto words = normalize_tokens(text);
  const int budget = max_len - 2;
  for (int i = 0; i < static_cast<int>(words.size()) && i < budget; ++i) {
    seq.ids.push_back(vocab.id_of(words[static_cast<std::size_t>(i)]));
  }
  seq.ids.push_back(kSepId);
  while (static_cast<int>(seq.ids.size()) < max_len) seq.ids.push_back(kPadId);
  return seq;
}

TextLevels split_levels(const std::string& text, const PosLexicon& lexicon) {
  TextLevels levels;
  levels.sentence.push_back(text);

  std::string segment;
  auto flush_segment = [&]() {
    const std::size_t begin = segment.find_first_not_of(" \t\r\n");
    if (begin != std::string::npos) {
      const std::size_t end = segment.find_last_not_of(" \t\r\n");
      levels.phrase.push_back(segment.substr(begin, end - begin + 1));
    }
    segment.clear();
  };
  for (char c : text) {
    if (c == '.' || c == ',' || c == ';') {
      flush_segment();
    } else {
      segment.push_back(c);
    }
  }
  flush_segment();
  if (levels.phrase.empty()) levels.phrase = levels.sentence;

  for (const auto& tok : normalize_tokens(text)) {
    const PosTag tag = lexicon.tag_of(tok);
    if (tag == PosTag::kNoun || tag == PosTag::kAdjective) {
      if (std::find(levels.word.begin(), levels.word.end(), tok) == levels.word.end()) {
        levels.word.push_back(tok);
      }
    }
  }
  if (levels.word.empty()) levels.word = levels.phrase;
  return levels;
}

PosLexicon PosLexicon::builtin() {
  std::map<std::string, PosTag> entries;
  for (const char* adj : {"black", "blue", "green", "grey", "orange", "purple", "red", "white",
                          "yellow", "brown", "pink", "dark", "light", "striped", "plain"}) {
    entries[adj] = PosTag::kAdjective;
  }
  for (const char* noun : {"hair", "top", "coat", "shirt", "pants", "trousers", "shorts", "shoes",
                           "sneakers", "bag", "backpack", "person", "woman", "man", "lady", "jacket",
                           "skirt", "dress", "hat", "scarf"}) {
    entries[noun] = PosTag::kNoun;
  }
  return PosLexicon(std::move(entries));
}

}  // namespace ivt
