#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sslm/autodiff.hpp"
#include "sslm/corpus.hpp"
#include "sslm/kvconfig.hpp"

namespace sslm {

struct ModelConfig {
  int layers = 6;
  int heads = 8;
  int embed_dim = 512;
  int max_seq_len = 512;
  int lexicon_size = 10000;
  int max_segment_len = 5;
  double dropout = 0.1;

  void validate() const;
  KvConfig to_kv() const;
  static ModelConfig from_kv(const KvConfig& kv);
};

// Hidden states h_0..h_n of the character backbone; h_j summarises the
// sequence-start symbol plus characters 1..j.
struct ContextEncoding {
  ad::TensorPtr hidden;  // (n+1) x embed_dim
  int length = 0;        // n
};

// Character-level causal Transformer with a lexicon head, a segment-level
// character head and a mixture-coefficient head, all conditioned on the
// hidden state preceding a candidate segment.
class SegmentalModel {
 public:
  SegmentalModel(ModelConfig config, CharVocab vocab, SubwordLexicon lexicon,
                 uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const CharVocab& vocab() const { return vocab_; }
  const SubwordLexicon& lexicon() const { return lexicon_; }

  // Named parameters in a fixed order (checkpoint layout order).
  const std::vector<std::pair<std::string, ad::TensorPtr>>& parameters() const {
    return params_;
  }
  ad::TensorPtr parameter(const std::string& name) const;
  size_t parameter_count() const;
  void zero_grad();

  ContextEncoding encode(const std::vector<int>& char_ids, bool training = false,
                         std::mt19937_64* rng = nullptr) const;

  // Mixture log-probability of the single segment [start, end] of doc.
  // Convenience wrapper over DocScorer for one-off queries.
  double segment_log_prob(const Document& doc, int start, int end) const;

  void save(const std::filesystem::path& dir) const;
  static std::unique_ptr<SegmentalModel> load(const std::filesystem::path& dir);

 private:
  friend class DocScorer;
  ad::TensorPtr p(const std::string& name) const;

  ModelConfig config_;
  CharVocab vocab_;
  SubwordLexicon lexicon_;
  std::vector<std::pair<std::string, ad::TensorPtr>> params_;
};

// Combines the two mixture branches in log space. Branches whose component
// values are at or below ad::kLogZero are treated as probability zero and
// dropped; if nothing remains the sentinel is returned.
ad::TensorPtr mixture_log_prob(const ad::TensorPtr& log_phi,
                               const ad::TensorPtr& log_one_minus_phi,
                               const ad::TensorPtr& char_log_prob,
                               const ad::TensorPtr& lex_log_prob_or_null);

// Lazy per-document scorer: encodes the backbone once and serves mixture
// log-probabilities for any valid segment, reusing per-start head tables
// across the O(n * L) segment queries of the lattice.
class DocScorer {
 public:
  DocScorer(const SegmentalModel& model, const Document& doc,
            bool training = false, std::mt19937_64* rng = nullptr);

  const Document& doc() const { return doc_; }
  const ContextEncoding& encoding() const { return enc_; }
  int max_segment_len() const { return model_.config().max_segment_len; }

  // Throws std::invalid_argument if the span is out of range, longer than
  // the maximum segment length, or crosses a word boundary.
  void validate_span(int start, int end) const;
  bool span_allowed(int start, int end) const;

  ad::TensorPtr segment_log_prob(int start, int end);
  double segment_log_prob_value(int start, int end) {
    return segment_log_prob(start, end)->scalar();
  }

  // Introspection used by tests and by the decoder. Starts run 1..n+1; the
  // n+1 start conditions on h_n and has no in-segment characters yet.
  std::vector<double> lex_log_probs(int start);
  // Distribution over the character vocabulary after consuming `offset`
  // in-segment characters (row `offset` of the per-start table).
  std::vector<double> char_step_log_probs(int start, int offset);
  double phi(int start);
  ad::TensorPtr char_prefix_log_prob(int start, int len);  // sum of len steps
  ad::TensorPtr char_step(int start, int offset, int char_id);
  ad::TensorPtr log_phi_node(int start);
  ad::TensorPtr log_one_minus_phi_node(int start);
  ad::TensorPtr lex_log_prob_node(int start, int lex_id);

 private:
  struct StartTables {
    ad::TensorPtr char_logp;               // (len+1) x vocab
    std::vector<ad::TensorPtr> char_cums;  // cumulative in-segment char terms
    ad::TensorPtr lex_logp;                // 1 x V
    ad::TensorPtr log_phi;
    ad::TensorPtr log_one_minus_phi;
    int len = -1;
  };
  StartTables& tables(int start);
  void ensure_char_table(int start);
  void ensure_lex_row(int start);
  void ensure_phi(int start);

  const SegmentalModel& model_;
  const Document& doc_;
  std::vector<int> ids_;
  ContextEncoding enc_;
  std::vector<StartTables> starts_;
  ad::TensorPtr bos_mask_;
};

}  // namespace sslm
