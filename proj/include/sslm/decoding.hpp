#pragma once

#include <string>
#include <vector>

#include "sslm/model.hpp"

namespace sslm::decode {

struct DecodeConfig {
  int beam_size = 5;
  int max_new_chars = 200;

  void validate() const;
};

struct DecodeResult {
  std::string text;    // generated completion (UTF-8, end-of-text excluded)
  double score = 0.0;  // total log-probability of the returned hypothesis
  bool ended_by_eot = false;
  bool empty_beam = false;
  // Committed segments over the completion, 1-based inclusive character
  // spans. Concatenating them reproduces `text` (plus the end-of-text
  // symbol when ended_by_eot).
  std::vector<std::pair<int, int>> segments;
};

// Character-at-a-time beam search over the mixture model. Each hypothesis
// either continues its open segment (scored provisionally by the character
// head) or closes it -- replacing the provisional score with the full
// mixture score -- and starts a new one. Separator characters close
// segments by force. Hypotheses are compared on total log-probability.
DecodeResult dynamic_decode(const SegmentalModel& model,
                            const std::string& prompt_utf8,
                            const DecodeConfig& cfg);

// Pipe-format rendering of the generated segments ("se|gment s").
std::string segment_annotated(const DecodeResult& result);

struct DegenerationConfig {
  int min_repeats = 3;      // a word occurring this often flags the text
  int max_word_chars = 30;  // a longer word flags the text
};

struct DegenerationVerdict {
  bool degenerate = false;
  std::string reason;
};

DegenerationVerdict detect_degeneration(const std::string& text);
DegenerationVerdict detect_degeneration(const std::string& text,
                                        const DegenerationConfig& cfg);

}  // namespace sslm::decode
