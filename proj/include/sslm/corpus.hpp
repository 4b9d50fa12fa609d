#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace sslm {

// Reserved code point standing in for the end-of-text symbol when it has to
// travel inside a character sequence (finetuning targets). It is a Unicode
// noncharacter, so it cannot occur in well-formed input text.
constexpr char32_t kEotChar = 0xFFFF;

// Word separators: Unicode whitespace plus the end-of-text sentinel. Each
// separator character forms a word of its own.
bool is_word_separator(char32_t c);

// Immutable character sequence with a word-extent map. Positions are
// 1-based to match the lattice recurrences; word_start(k) is the position
// of the first character of the word containing position k.
class Document {
 public:
  Document() = default;

  // extra_word_starts lists 1-based positions that begin a new word in
  // addition to the separator-derived boundaries (used to end a prompt
  // context at its '=' marker).
  static Document make(std::u32string chars,
                       const std::vector<int>& extra_word_starts = {});

  int size() const { return static_cast<int>(chars_.size()); }
  char32_t char_at(int pos) const { return chars_[pos - 1]; }        // 1-based
  int word_start(int pos) const { return word_start_[pos - 1]; }     // 1-based
  int word_end(int pos) const { return word_end_[pos - 1]; }         // 1-based
  const std::u32string& chars() const { return chars_; }
  std::u32string span(int j, int k) const {  // inclusive, 1-based
    return chars_.substr(j - 1, k - j + 1);
  }
  std::string span_utf8(int j, int k) const;

 private:
  std::u32string chars_;
  std::vector<int> word_start_;
  std::vector<int> word_end_;
};

// Character-level vocabulary with reserved ids for sequence start (BOS),
// end of segment (EOS), unknown character (UNK) and end of text (EOT).
class CharVocab {
 public:
  static constexpr int kBos = 0;
  static constexpr int kEoseg = 1;
  static constexpr int kUnk = 2;
  static constexpr int kEot = 3;
  static constexpr int kNumSpecials = 4;

  static CharVocab build(const std::vector<Document>& docs);

  int size() const { return kNumSpecials + static_cast<int>(chars_.size()); }
  int id_of(char32_t c) const;
  // Returns the character for a regular id; specials have no character.
  std::optional<char32_t> char_of(int id) const;
  bool is_special(int id) const { return id >= 0 && id < kNumSpecials; }

  void save(const std::filesystem::path& path) const;
  static CharVocab load(const std::filesystem::path& path);

  std::vector<int> encode(const std::u32string& chars) const;

 private:
  std::vector<char32_t> chars_;              // sorted by code point
  std::unordered_map<char32_t, int> id_of_;  // char -> id (offset by specials)
};

// Fixed inventory of the most frequent within-word character n-grams.
class SubwordLexicon {
 public:
  static SubwordLexicon build(const std::vector<Document>& docs, int size,
                              int max_len);

  int size() const { return static_cast<int>(entries_.size()); }
  int max_len() const { return max_len_; }
  // -1 when the string is not an entry.
  int id_of(const std::u32string& s) const;
  const std::u32string& entry(int id) const { return entries_[id]; }
  bool contains(const std::u32string& s) const { return id_of(s) >= 0; }

  void save(const std::filesystem::path& path) const;
  static SubwordLexicon load(const std::filesystem::path& path);

 private:
  std::vector<std::u32string> entries_;  // rank order == id order
  std::map<std::u32string, int> index_;
  int max_len_ = 0;
};

struct LoadResult {
  std::vector<Document> documents;
  CharVocab vocab;
  int skipped_blank_lines = 0;
};

// Reads a UTF-8 corpus, one document per line. Lines that are empty or all
// whitespace are skipped (counted). When a vocabulary is supplied it is
// reused; otherwise one is built from the corpus.
LoadResult load_corpus(const std::filesystem::path& path,
                       const std::optional<CharVocab>& vocab = std::nullopt);

// Splits documents into training sequences of at most max_seq_len
// characters, breaking only at word boundaries. A single separator
// character landing on a chunk boundary is dropped.
std::vector<Document> batchify(const std::vector<Document>& docs,
                               int max_seq_len);

}  // namespace sslm
