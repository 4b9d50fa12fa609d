#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sslm/autodiff.hpp"
#include "sslm/corpus.hpp"
#include "sslm/model.hpp"

namespace sslm::lattice {

// An ordered list of (start, end) spans, 1-based inclusive, partitioning a
// document contiguously.
struct Segmentation {
  std::vector<std::pair<int, int>> spans;

  // Internal split positions per word are derived downstream; here we only
  // offer the raw boundary set: the end positions of all spans except the
  // final one.
  std::vector<int> boundary_positions() const;
  bool partitions(int n) const;
};

struct Lattice {
  std::vector<double> log_alpha;  // size n + 1, log_alpha[0] == 0
};

// Scoring interface consumed by the dynamic programs. The neural model's
// DocScorer satisfies it; tests substitute stubs.
class SegmentScorer {
 public:
  virtual ~SegmentScorer() = default;
  virtual int size() const = 0;             // document length n
  virtual int max_segment_len() const = 0;  // L
  virtual int word_start(int pos) const = 0;
  // Log-probability node for segment [start, end]; must be valid per the
  // length and word-boundary constraints.
  virtual ad::TensorPtr segment_score(int start, int end) = 0;
  virtual double segment_score_value(int start, int end) {
    return segment_score(start, end)->scalar();
  }
};

// Adapter exposing a DocScorer as a SegmentScorer.
class ModelScorer : public SegmentScorer {
 public:
  explicit ModelScorer(DocScorer& scorer) : scorer_(scorer) {}
  int size() const override { return scorer_.doc().size(); }
  int max_segment_len() const override { return scorer_.max_segment_len(); }
  int word_start(int pos) const override { return scorer_.doc().word_start(pos); }
  ad::TensorPtr segment_score(int start, int end) override {
    return scorer_.segment_log_prob(start, end);
  }

 private:
  DocScorer& scorer_;
};

// Stub assigning the same probability to every valid segment (testing).
class ConstantScorer : public SegmentScorer {
 public:
  ConstantScorer(const Document& doc, int max_segment_len, double prob);
  int size() const override { return doc_.size(); }
  int max_segment_len() const override { return max_len_; }
  int word_start(int pos) const override { return doc_.word_start(pos); }
  ad::TensorPtr segment_score(int start, int end) override;

 private:
  const Document& doc_;
  int max_len_;
  double log_prob_;
};

struct MarginalResult {
  ad::TensorPtr log_marginal;  // node for log p(D); value == lattice.log_alpha[n]
  Lattice lattice;
};

// Forward algorithm: log_alpha[k] = logsumexp over valid (j, k) segments of
// log_alpha[j-1] + segment score, with the backbone encoded once per
// document. Terms are combined left to right (ascending j).
MarginalResult forward_marginal(SegmentScorer& scorer);

struct ConditionalResult {
  ad::TensorPtr log_conditional;  // log p(O | C) = log_alpha[n] - log_alpha[|C|]
  Lattice lattice;
};

// Conditional completion likelihood from a single forward pass. context_len
// must lie on a word boundary (the next position starts a word).
ConditionalResult conditional_log_likelihood(SegmentScorer& scorer,
                                             int context_len);

struct ViterbiResult {
  Segmentation segmentation;
  double log_prob;
};

// Probability-maximising segmentation; ties prefer the longer final segment
// at each position.
ViterbiResult viterbi(SegmentScorer& scorer);

struct ScoredSegmentation {
  Segmentation segmentation;
  double log_prob;
};

// Exhaustive enumeration of all valid segmentations with their chain-rule
// log-probabilities. Restricted to documents of at most 14 characters.
std::vector<ScoredSegmentation> enumerate_oracle(SegmentScorer& scorer);

// Pipe format: segments joined by '|' within words, separator characters
// written through verbatim (e.g. "ndi|ya|bulela ka|khulu").
std::string to_pipe_format(const Document& doc, const Segmentation& seg);

}  // namespace sslm::lattice
