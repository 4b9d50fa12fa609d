#include "sslm/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sslm/utf8.hpp"

namespace sslm::lattice {

std::vector<int> Segmentation::boundary_positions() const {
  std::vector<int> b;
  for (size_t i = 0; i + 1 < spans.size(); ++i) b.push_back(spans[i].second);
  return b;
}

bool Segmentation::partitions(int n) const {
  int expect = 1;
  for (const auto& [s, e] : spans) {
    if (s != expect || e < s) return false;
    expect = e + 1;
  }
  return expect == n + 1;
}

ConstantScorer::ConstantScorer(const Document& doc, int max_segment_len,
                               double prob)
    : doc_(doc), max_len_(max_segment_len), log_prob_(std::log(prob)) {}

ad::TensorPtr ConstantScorer::segment_score(int start, int end) {
  if (start < 1 || end > doc_.size() || end < start ||
      end - start + 1 > max_len_ || doc_.word_start(end) > start)
    throw std::invalid_argument("ConstantScorer: invalid span");
  return ad::constant_scalar(log_prob_);
}

namespace {

int first_start(const SegmentScorer& scorer, int k) {
  return std::max(scorer.word_start(k), k - scorer.max_segment_len() + 1);
}

// Shared forward sweep. Terms for each position are combined left to right.
std::vector<ad::TensorPtr> forward_alphas(SegmentScorer& scorer) {
  const int n = scorer.size();
  if (n < 1) throw std::invalid_argument("lattice: empty document");
  std::vector<ad::TensorPtr> alpha(n + 1);
  alpha[0] = ad::constant_scalar(0.0);
  for (int k = 1; k <= n; ++k) {
    std::vector<ad::TensorPtr> terms;
    terms.reserve(scorer.max_segment_len());
    for (int j = first_start(scorer, k); j <= k; ++j) {
      terms.push_back(ad::add(alpha[j - 1], scorer.segment_score(j, k)));
    }
    alpha[k] = ad::logsumexp_scalars(terms);
  }
  return alpha;
}

Lattice to_lattice(const std::vector<ad::TensorPtr>& alpha) {
  Lattice lat;
  lat.log_alpha.resize(alpha.size());
  for (size_t k = 0; k < alpha.size(); ++k) lat.log_alpha[k] = alpha[k]->scalar();
  return lat;
}

}  // namespace

MarginalResult forward_marginal(SegmentScorer& scorer) {
  auto alpha = forward_alphas(scorer);
  return {alpha.back(), to_lattice(alpha)};
}

ConditionalResult conditional_log_likelihood(SegmentScorer& scorer,
                                             int context_len) {
  const int n = scorer.size();
  if (context_len < 0 || context_len > n)
    throw std::invalid_argument("context length out of range: " +
                                std::to_string(context_len));
  if (context_len > 0 && context_len < n &&
      scorer.word_start(context_len + 1) != context_len + 1) {
    throw std::invalid_argument(
        "context must end at a word boundary (position " +
        std::to_string(context_len) + " does not)");
  }
  auto alpha = forward_alphas(scorer);
  ConditionalResult result;
  result.lattice = to_lattice(alpha);
  result.log_conditional = ad::sub(alpha[n], alpha[context_len]);
  return result;
}

ViterbiResult viterbi(SegmentScorer& scorer) {
  const int n = scorer.size();
  if (n < 1) throw std::invalid_argument("viterbi: empty document");
  std::vector<double> best(n + 1, ad::kLogZero);
  std::vector<int> back(n + 1, 0);
  best[0] = 0.0;
  for (int k = 1; k <= n; ++k) {
    // Ascending j visits the longest candidate segment first; strict
    // improvement keeps it on ties.
    bool any = false;
    for (int j = first_start(scorer, k); j <= k; ++j) {
      const double cand = best[j - 1] + scorer.segment_score_value(j, k);
      if (!any || cand > best[k]) {
        best[k] = cand;
        back[k] = j;
        any = true;
      }
    }
  }
  ViterbiResult result;
  result.log_prob = best[n];
  int k = n;
  while (k > 0) {
    const int j = back[k];
    result.segmentation.spans.emplace_back(j, k);
    k = j - 1;
  }
  std::reverse(result.segmentation.spans.begin(), result.segmentation.spans.end());
  return result;
}

std::vector<ScoredSegmentation> enumerate_oracle(SegmentScorer& scorer) {
  const int n = scorer.size();
  if (n > 14)
    throw std::invalid_argument("enumerate_oracle: document longer than 14 characters");
  if (n < 1) throw std::invalid_argument("enumerate_oracle: empty document");
  std::vector<ScoredSegmentation> out;
  std::vector<std::pair<int, int>> spans;
  std::function<void(int, double)> walk = [&](int pos, double score) {
    if (pos > n) {
      out.push_back({Segmentation{spans}, score});
      return;
    }
    int word_end = pos;
    while (word_end + 1 <= n && scorer.word_start(word_end + 1) <= pos) ++word_end;
    const int max_end = std::min({n, pos + scorer.max_segment_len() - 1, word_end});
    for (int end = pos; end <= max_end; ++end) {
      spans.emplace_back(pos, end);
      walk(end + 1, score + scorer.segment_score_value(pos, end));
      spans.pop_back();
    }
  };
  walk(1, 0.0);
  return out;
}

std::string to_pipe_format(const Document& doc, const Segmentation& seg) {
  std::string out;
  for (size_t i = 0; i < seg.spans.size(); ++i) {
    const auto& [s, e] = seg.spans[i];
    if (is_word_separator(doc.char_at(s))) {
      if (doc.char_at(s) != kEotChar) out += doc.span_utf8(s, e);
      continue;
    }
    if (i > 0 && doc.word_start(s) != s) out += '|';
    out += doc.span_utf8(s, e);
  }
  return out;
}

}  // namespace sslm::lattice
