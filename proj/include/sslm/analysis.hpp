#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sslm/corpus.hpp"
#include "sslm/lattice.hpp"

namespace sslm::analysis {

// One word occurrence: its surface form and the ordered subwords of its
// segmentation. Separator characters never appear here.
struct SegmentedWord {
  std::u32string surface;
  std::vector<std::u32string> subwords;
};

// Per-document word segmentations plus a tag naming their origin
// (checkpoint id or external tokenizer name).
struct SegmentedCorpus {
  std::string source;
  std::vector<std::vector<SegmentedWord>> documents;

  size_t word_count() const;
};

SegmentedCorpus segmented_from_viterbi(const Document& doc,
                                       const lattice::Segmentation& seg,
                                       const std::string& source);
void append_from_viterbi(SegmentedCorpus& corpus, const Document& doc,
                         const lattice::Segmentation& seg);

// Pipe format: words separated by whitespace, subwords joined by '|'.
SegmentedCorpus load_pipe_format(const std::filesystem::path& path,
                                 const std::string& source);
SegmentedCorpus parse_pipe_format(const std::string& text,
                                  const std::string& source);

// map word -> ordered morpheme strings; morphemes concatenate to the word.
struct GoldMorphology {
  std::map<std::u32string, std::vector<std::u32string>> words;

  static GoldMorphology load_tsv(const std::filesystem::path& path);
};

// Average number of subwords per word, counted over word tokens.
double fertility(const SegmentedCorpus& seg);

// Number of distinct word types whose segmentation contains `subword` as a
// unit.
int productivity(const SegmentedCorpus& seg, const std::u32string& subword);

// Mean corpus token frequency of the word types containing `subword`.
double idiosyncrasy(const SegmentedCorpus& seg, const std::u32string& subword);

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Micro-averaged boundary identification scores over all word occurrences
// whose surface form has a gold segmentation. Boundaries are internal split
// offsets; word-initial/final positions do not count.
Prf morph_boundary_prf(const SegmentedCorpus& seg, const GoldMorphology& gold);

struct TrajectoryRow {
  std::string checkpoint;
  bool ok = false;
  double fertility = 0.0;
  double mean_productivity = 0.0;
  double mean_idiosyncrasy = 0.0;
  Prf morph;
  std::map<int, long long> fertility_histogram;  // subwords per word -> count
};

struct TrajectoryReport {
  std::vector<TrajectoryRow> rows;

  // checkpoint,fertility,mean_productivity,mean_idiosyncrasy,morph_p,morph_r,morph_f1
  std::string to_csv() const;
  // checkpoint,subwords_per_word,count
  std::string histogram_csv() const;
};

// Mean productivity/idiosyncrasy over the distinct subword vocabulary
// produced on the corpus (type-level mean), plus fertility, boundary
// scores, and the subwords-per-word histogram.
TrajectoryRow analyze_corpus(const SegmentedCorpus& seg,
                             const GoldMorphology& gold,
                             const std::string& checkpoint_id);

// Runs Viterbi segmentation of eval_docs under each checkpoint and scores
// it. A checkpoint that fails to load yields a row with ok == false (its
// metric cells are written as nan) and the run continues.
TrajectoryReport build_trajectory(const std::vector<std::filesystem::path>& checkpoints,
                                  const std::vector<Document>& eval_docs,
                                  const GoldMorphology& gold);

}  // namespace sslm::analysis
