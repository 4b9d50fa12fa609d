#include "sslm/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "sslm/utf8.hpp"

namespace sslm {

bool is_word_separator(char32_t c) {
  return c == kEotChar || utf8::is_space(c);
}

Document Document::make(std::u32string chars,
                        const std::vector<int>& extra_word_starts) {
  Document doc;
  const int n = static_cast<int>(chars.size());
  std::set<int> extra(extra_word_starts.begin(), extra_word_starts.end());
  for (int p : extra) {
    if (p < 1 || p > n)
      throw std::invalid_argument("extra word start out of range: " + std::to_string(p));
  }
  doc.chars_ = std::move(chars);
  doc.word_start_.resize(n);
  doc.word_end_.resize(n);
  for (int i = 1; i <= n; ++i) {
    const char32_t c = doc.chars_[i - 1];
    if (is_word_separator(c)) {
      doc.word_start_[i - 1] = i;  // a separator is its own word
    } else if (i == 1 || is_word_separator(doc.chars_[i - 2]) || extra.count(i)) {
      doc.word_start_[i - 1] = i;
    } else {
      doc.word_start_[i - 1] = doc.word_start_[i - 2];
    }
  }
  for (int i = n; i >= 1; --i) {
    if (i == n || doc.word_start_[i] != doc.word_start_[i - 1]) {
      doc.word_end_[i - 1] = i;  // position i+1 starts a new word (or end)
    } else {
      doc.word_end_[i - 1] = doc.word_end_[i];
    }
  }
  return doc;
}

std::string Document::span_utf8(int j, int k) const {
  return utf8::encode(std::u32string_view(chars_).substr(j - 1, k - j + 1));
}

CharVocab CharVocab::build(const std::vector<Document>& docs) {
  std::set<char32_t> seen;
  for (const auto& doc : docs) {
    for (char32_t c : doc.chars()) {
      if (c != kEotChar) seen.insert(c);
    }
  }
  CharVocab v;
  v.chars_.assign(seen.begin(), seen.end());
  for (size_t i = 0; i < v.chars_.size(); ++i)
    v.id_of_[v.chars_[i]] = kNumSpecials + static_cast<int>(i);
  return v;
}

int CharVocab::id_of(char32_t c) const {
  if (c == kEotChar) return kEot;
  auto it = id_of_.find(c);
  return it == id_of_.end() ? kUnk : it->second;
}

std::optional<char32_t> CharVocab::char_of(int id) const {
  if (id == kEot) return kEotChar;
  if (id < kNumSpecials || id >= size()) return std::nullopt;
  return chars_[id - kNumSpecials];
}

std::vector<int> CharVocab::encode(const std::u32string& chars) const {
  std::vector<int> ids;
  ids.reserve(chars.size());
  for (char32_t c : chars) ids.push_back(id_of(c));
  return ids;
}

namespace {
const char* kSpecialNames[] = {"<bos>", "<eos>", "<unk>", "<eot>"};
}

void CharVocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write char vocab: " + path.string());
  for (const char* name : kSpecialNames) out << name << '\n';
  for (char32_t c : chars_) out << utf8::encode(std::u32string(1, c)) << '\n';
}

CharVocab CharVocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read char vocab: " + path.string());
  std::string line;
  for (const char* name : kSpecialNames) {
    if (!std::getline(in, line) || line != name)
      throw std::runtime_error("char vocab file " + path.string() +
                               ": missing special entry " + name);
  }
  CharVocab v;
  int lineno = kNumSpecials;
  while (std::getline(in, line)) {
    ++lineno;
    std::u32string cs = utf8::decode(line);
    if (cs.size() != 1)
      throw std::runtime_error("char vocab file " + path.string() + " line " +
                               std::to_string(lineno) + ": expected one character");
    v.chars_.push_back(cs[0]);
  }
  for (size_t i = 0; i < v.chars_.size(); ++i)
    v.id_of_[v.chars_[i]] = kNumSpecials + static_cast<int>(i);
  return v;
}

SubwordLexicon SubwordLexicon::build(const std::vector<Document>& docs,
                                     int size, int max_len) {
  if (size < 1) throw std::invalid_argument("lexicon size must be positive");
  if (max_len < 1) throw std::invalid_argument("lexicon max_len must be positive");
  std::map<std::u32string, long long> counts;
  for (const auto& doc : docs) {
    int p = 1;
    while (p <= doc.size()) {
      const int we = doc.word_end(p);
      if (!is_word_separator(doc.char_at(p))) {
        for (int j = p; j <= we; ++j) {
          for (int k = j; k <= std::min(we, j + max_len - 1); ++k) {
            ++counts[doc.span(j, k)];
          }
        }
      }
      p = we + 1;
    }
  }
  int distinct_singles = 0;
  for (const auto& [s, c] : counts) {
    if (s.size() == 1) ++distinct_singles;
  }
  if (size < distinct_singles) {
    throw std::invalid_argument(
        "lexicon size " + std::to_string(size) + " is smaller than the " +
        std::to_string(distinct_singles) + " distinct characters in the corpus");
  }

  struct Ranked {
    long long count;
    std::u32string s;
  };
  std::vector<Ranked> ranked;
  ranked.reserve(counts.size());
  for (const auto& [s, c] : counts) ranked.push_back({c, s});
  auto rank_less = [](const Ranked& a, const Ranked& b) {
    if (a.count != b.count) return a.count > b.count;
    if (a.s.size() != b.s.size()) return a.s.size() < b.s.size();
    return a.s < b.s;
  };
  std::sort(ranked.begin(), ranked.end(), rank_less);

  // Top-`size` by rank, with every single character forced in: out-of-rank
  // singles displace the lowest-ranked multi-character entries.
  const size_t take = std::min(static_cast<size_t>(size), ranked.size());
  std::vector<Ranked> chosen(ranked.begin(), ranked.begin() + take);
  std::vector<Ranked> missing_singles;
  for (size_t i = take; i < ranked.size(); ++i) {
    if (ranked[i].s.size() == 1) missing_singles.push_back(ranked[i]);
  }
  for (const auto& single : missing_singles) {
    for (auto it = chosen.rbegin(); it != chosen.rend(); ++it) {
      if (it->s.size() > 1) {
        *it = single;
        break;
      }
    }
  }
  std::sort(chosen.begin(), chosen.end(), rank_less);

  SubwordLexicon lex;
  lex.max_len_ = max_len;
  for (const auto& r : chosen) {
    lex.index_[r.s] = static_cast<int>(lex.entries_.size());
    lex.entries_.push_back(r.s);
  }
  return lex;
}

int SubwordLexicon::id_of(const std::u32string& s) const {
  auto it = index_.find(s);
  return it == index_.end() ? -1 : it->second;
}

void SubwordLexicon::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write lexicon: " + path.string());
  out << "# max_len=" << max_len_ << '\n';
  for (const auto& e : entries_) out << utf8::encode(e) << '\n';
}

SubwordLexicon SubwordLexicon::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read lexicon: " + path.string());
  std::string line;
  SubwordLexicon lex;
  if (!std::getline(in, line) || line.rfind("# max_len=", 0) != 0)
    throw std::runtime_error("lexicon file " + path.string() +
                             ": missing '# max_len=' header");
  lex.max_len_ = std::stoi(line.substr(10));
  while (std::getline(in, line)) {
    std::u32string e = utf8::decode(line);
    if (e.empty())
      throw std::runtime_error("lexicon file " + path.string() + ": empty entry");
    lex.index_[e] = static_cast<int>(lex.entries_.size());
    lex.entries_.push_back(std::move(e));
  }
  return lex;
}

LoadResult load_corpus(const std::filesystem::path& path,
                       const std::optional<CharVocab>& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read corpus: " + path.string());
  LoadResult result;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::u32string chars = utf8::decode(line);
    bool blank = true;
    for (char32_t c : chars) {
      if (!is_word_separator(c)) {
        blank = false;
        break;
      }
    }
    if (blank) {
      ++result.skipped_blank_lines;
      continue;
    }
    result.documents.push_back(Document::make(std::move(chars)));
  }
  if (result.documents.empty())
    throw std::runtime_error("empty corpus: " + path.string());
  result.vocab = vocab ? *vocab : CharVocab::build(result.documents);
  return result;
}

std::vector<Document> batchify(const std::vector<Document>& docs,
                               int max_seq_len) {
  if (max_seq_len < 2) throw std::invalid_argument("max_seq_len must be >= 2");
  std::vector<Document> chunks;
  std::u32string current;
  auto flush = [&] {
    if (!current.empty()) {
      chunks.push_back(Document::make(current));
      current.clear();
    }
  };
  auto feed_word = [&](const std::u32string& word) {
    const bool separator = word.size() == 1 && is_word_separator(word[0]);
    if (!separator && static_cast<int>(word.size()) > max_seq_len) {
      throw std::runtime_error("word longer than max_seq_len (" +
                               std::to_string(max_seq_len) +
                               "): " + utf8::encode(word));
    }
    if (current.size() + word.size() > static_cast<size_t>(max_seq_len)) {
      flush();
      if (separator) return;  // separators are dropped at chunk boundaries
    }
    if (current.empty() && separator) return;
    current += word;
  };
  bool first_doc = true;
  for (const auto& doc : docs) {
    if (!first_doc) feed_word(U" ");
    first_doc = false;
    int p = 1;
    while (p <= doc.size()) {
      const int we = doc.word_end(p);
      feed_word(doc.span(p, we));
      p = we + 1;
    }
  }
  flush();
  return chunks;
}

}  // namespace sslm
