#include "sslm/decoding.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>
#include <utility>

#include "sslm/utf8.hpp"

namespace sslm::decode {

void DecodeConfig::validate() const {
  if (beam_size < 1) throw std::invalid_argument("beam_size must be >= 1");
  if (max_new_chars < 1) throw std::invalid_argument("max_new_chars must be >= 1");
}

namespace {

struct Hypothesis {
  std::u32string text;   // generated characters
  int seg_start = 0;     // 1-based start of the open segment in the full doc
  double committed = 0.0;
  double provisional = 0.0;  // character-head score of the open segment
  std::vector<std::pair<int, int>> segments;  // committed, full-doc positions
  bool is_eot = false;

  double score() const { return committed + provisional; }
};

bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.score() != b.score()) return a.score() > b.score();
  if (a.text != b.text) return a.text < b.text;
  return a.segments < b.segments;
}

Document hyp_document(const std::u32string& prompt, const Hypothesis& h) {
  std::u32string chars = prompt + h.text;
  std::vector<int> extra;
  if (!h.text.empty() && !prompt.empty())
    extra.push_back(static_cast<int>(prompt.size()) + 1);
  return Document::make(std::move(chars), extra);
}

// Closes the open segment (if any) with the full mixture score, using a
// scorer built over the hypothesis's own document.
void force_close(const SegmentalModel& model, const std::u32string& prompt,
                 Hypothesis& h) {
  if (h.seg_start == 0) return;
  Document doc = hyp_document(prompt, h);
  DocScorer scorer(model, doc);
  const int n = doc.size();
  h.committed += scorer.segment_log_prob_value(h.seg_start, n);
  h.segments.emplace_back(h.seg_start, n);
  h.seg_start = 0;
  h.provisional = 0.0;
}

}  // namespace

DecodeResult dynamic_decode(const SegmentalModel& model,
                            const std::string& prompt_utf8,
                            const DecodeConfig& cfg) {
  cfg.validate();
  ad::NoGradGuard ng;
  const std::u32string prompt = utf8::decode(prompt_utf8);
  const int prompt_len = static_cast<int>(prompt.size());
  const int max_len = model.config().max_seq_len;
  if (prompt_len >= max_len)
    throw std::invalid_argument("prompt of " + std::to_string(prompt_len) +
                                " characters leaves no room in the context window of " +
                                std::to_string(max_len));

  const CharVocab& vocab = model.vocab();
  const int max_seg = model.config().max_segment_len;

  std::vector<Hypothesis> live{Hypothesis{}};
  std::vector<Hypothesis> finished;

  for (int step = 0; step < cfg.max_new_chars && !live.empty(); ++step) {
    std::vector<Hypothesis> candidates;
    for (Hypothesis& hyp : live) {
      const int n = prompt_len + static_cast<int>(hyp.text.size());
      if (n >= max_len) {  // context window exhausted; finalise as-is
        force_close(model, prompt, hyp);
        finished.push_back(hyp);
        continue;
      }
      Document doc = hyp_document(prompt, hyp);
      DocScorer scorer(model, doc);
      const int open_len = hyp.seg_start > 0 ? n - hyp.seg_start + 1 : 0;
      const bool open_extendable =
          open_len >= 1 && open_len < max_seg &&
          !is_word_separator(doc.char_at(hyp.seg_start));
      const auto continue_row =
          open_extendable ? scorer.char_step_log_probs(hyp.seg_start, open_len)
                          : std::vector<double>();
      const auto fresh_row = scorer.char_step_log_probs(n + 1, 0);
      const double close_lp =
          open_len >= 1 ? scorer.segment_log_prob_value(hyp.seg_start, n)
                        : 0.0;

      for (int c = 0; c < vocab.size(); ++c) {
        if (c == CharVocab::kBos || c == CharVocab::kEoseg) continue;
        const bool separator = c == CharVocab::kEot ||
                               (vocab.char_of(c) &&
                                is_word_separator(*vocab.char_of(c)));
        // (a) continue the open segment (within-word characters only)
        if (open_extendable && !separator) {
          Hypothesis child = hyp;
          child.text.push_back(*vocab.char_of(c));
          child.provisional += continue_row[c];
          child.is_eot = false;
          candidates.push_back(std::move(child));
        }
        // (b) close the open segment, then start a new one with c
        Hypothesis child = hyp;
        if (open_len >= 1) {
          child.committed += close_lp;
          child.segments.emplace_back(hyp.seg_start, n);
        }
        child.text.push_back(c == CharVocab::kEot ? kEotChar : *vocab.char_of(c));
        child.seg_start = n + 1;
        child.provisional = fresh_row[c];
        child.is_eot = c == CharVocab::kEot;
        candidates.push_back(std::move(child));
      }
    }
    if (candidates.empty()) break;
    std::sort(candidates.begin(), candidates.end(), better);
    if (static_cast<int>(candidates.size()) > cfg.beam_size)
      candidates.resize(cfg.beam_size);
    live.clear();
    for (Hypothesis& cand : candidates) {
      if (cand.is_eot) {
        force_close(model, prompt, cand);
        finished.push_back(std::move(cand));
      } else {
        live.push_back(std::move(cand));
      }
    }
  }
  for (Hypothesis& hyp : live) {
    force_close(model, prompt, hyp);
    finished.push_back(std::move(hyp));
  }

  DecodeResult result;
  if (finished.empty()) {
    result.empty_beam = true;
    return result;
  }
  const Hypothesis& best =
      *std::min_element(finished.begin(), finished.end(), better);
  std::u32string text = best.text;
  result.ended_by_eot = !text.empty() && text.back() == kEotChar;
  if (result.ended_by_eot) text.pop_back();
  result.text = utf8::encode(text);
  result.score = best.committed;  // everything is closed by now
  for (const auto& [s, e] : best.segments) {
    if (result.ended_by_eot && s - prompt_len > static_cast<int>(text.size()))
      continue;  // the end-of-text symbol's own segment
    result.segments.emplace_back(s - prompt_len, e - prompt_len);
  }
  return result;
}

std::string segment_annotated(const DecodeResult& result) {
  const std::u32string text = utf8::decode(result.text);
  std::string out;
  bool prev_was_word = false;
  for (const auto& [s, e] : result.segments) {
    const std::u32string piece = text.substr(s - 1, e - s + 1);
    const bool is_word = !piece.empty() && !is_word_separator(piece[0]);
    if (is_word && prev_was_word) out += '|';
    out += utf8::encode(piece);
    prev_was_word = is_word;
  }
  return out;
}

DegenerationVerdict detect_degeneration(const std::string& text) {
  return detect_degeneration(text, DegenerationConfig{});
}

DegenerationVerdict detect_degeneration(const std::string& text,
                                        const DegenerationConfig& cfg) {
  const std::u32string chars = utf8::decode(text);
  std::map<std::u32string, int> counts;
  std::u32string word;
  std::vector<std::u32string> words;
  for (char32_t c : chars) {
    if (utf8::is_space(c)) {
      if (!word.empty()) words.push_back(std::exchange(word, {}));
    } else {
      word.push_back(c);
    }
  }
  if (!word.empty()) words.push_back(word);

  for (const auto& w : words) {
    if (static_cast<int>(w.size()) > cfg.max_word_chars) {
      return {true, "word '" + utf8::encode(w) + "' has " +
                        std::to_string(w.size()) + " characters (limit " +
                        std::to_string(cfg.max_word_chars) + ")"};
    }
  }
  for (const auto& w : words) {
    if (++counts[w] >= cfg.min_repeats) {
      return {true, "word '" + utf8::encode(w) + "' occurs at least " +
                        std::to_string(cfg.min_repeats) + " times"};
    }
  }
  return {false, ""};
}

}  // namespace sslm::decode
