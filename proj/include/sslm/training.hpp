#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sslm/corpus.hpp"
#include "sslm/kvconfig.hpp"
#include "sslm/model.hpp"

namespace sslm::train {

struct TrainConfig {
  double learning_rate = 5e-4;
  int warmup_steps = 4000;
  int batch_size = 256;
  int epochs = 40;
  uint64_t seed = 0;
  std::filesystem::path checkpoint_dir;
  double grad_clip = 1.0;

  void validate() const;
};

// Finetuning defaults differ from pretraining.
TrainConfig finetune_defaults();

// Inverse-square-root learning-rate schedule with linear warmup; step is
// 1-based. A warmup of zero decays from the first step.
double scheduled_lr(const TrainConfig& cfg, long long step);

// Checkpoint schedule: the first-epoch step, the final step, and the seven
// interior 1/8 points, sorted and deduplicated.
std::vector<long long> make_schedule(long long total_steps,
                                     long long steps_per_epoch);

// (context, completion) pair rendered as `C ++ " # # =" ++ O` for
// completion-only objectives.
struct PromptExample {
  std::string context;
  std::string completion;
};

inline constexpr const char* kPromptMarker = " # # =";

std::string render_prompt(const PromptExample& ex);
// Document over the rendered characters plus a trailing end-of-text symbol;
// the '=' marker closes the context word so the completion starts a word.
// Returns the context length (|C|) through context_len.
Document render_prompt_document(const PromptExample& ex, int* context_len);

std::vector<PromptExample> load_prompt_tsv(const std::filesystem::path& path);

struct PretrainResult {
  std::vector<std::filesystem::path> checkpoints;
  std::vector<double> epoch_losses;  // mean per-character loss per epoch
  long long total_steps = 0;
};

// Minimises the mean per-character negative log marginal with Adam under
// the configured schedule, saving checkpoints at the scheduled steps and a
// step,epoch,loss,lr CSV log. Throws TrainingDiverged on a non-finite
// loss; checkpoints already written stay on disk.
PretrainResult pretrain(SegmentalModel& model,
                        const std::vector<Document>& sequences,
                        const TrainConfig& cfg,
                        const std::filesystem::path& log_csv);

struct FinetuneResult {
  std::filesystem::path best_checkpoint;
  std::vector<double> valid_losses;  // one per epoch
  double best_valid_loss = 0.0;
  int skipped_empty = 0;
  int skipped_too_long = 0;
};

// Minimises the mean per-completion-character negative conditional
// log-likelihood; the checkpoint with the best validation loss is kept.
FinetuneResult finetune(SegmentalModel& model,
                        const std::vector<PromptExample>& train_examples,
                        const std::vector<PromptExample>& valid_examples,
                        const TrainConfig& cfg,
                        const std::filesystem::path& log_csv);

class TrainingDiverged : public std::runtime_error {
 public:
  explicit TrainingDiverged(const std::string& what) : std::runtime_error(what) {}
};

// Evaluation-mode mean per-character loss over fixed sequences (used by the
// checkpoint round-trip contract).
double eval_loss(const SegmentalModel& model, const std::vector<Document>& docs);

}  // namespace sslm::train
