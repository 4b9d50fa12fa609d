#include "sslm/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <unordered_set>

#include "sslm/lattice.hpp"
#include "sslm/utf8.hpp"

namespace sslm::train {

void TrainConfig::validate() const {
  if (learning_rate <= 0.0) throw std::invalid_argument("learning_rate must be > 0");
  if (warmup_steps < 0) throw std::invalid_argument("warmup_steps must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
}

TrainConfig finetune_defaults() {
  TrainConfig cfg;
  cfg.learning_rate = 1e-4;
  cfg.warmup_steps = 500;
  cfg.batch_size = 16;
  cfg.epochs = 20;
  return cfg;
}

double scheduled_lr(const TrainConfig& cfg, long long step) {
  const double w = std::max(cfg.warmup_steps, 1);
  const double s = static_cast<double>(step);
  return cfg.learning_rate * std::min(s / w, std::sqrt(w / s));
}

std::vector<long long> make_schedule(long long total_steps,
                                     long long steps_per_epoch) {
  if (steps_per_epoch < 1 || total_steps < steps_per_epoch)
    throw std::invalid_argument("schedule requires total_steps >= steps_per_epoch >= 1");
  std::set<long long> steps{steps_per_epoch, total_steps};
  for (int i = 1; i <= 7; ++i) {
    steps.insert(std::max<long long>(
        1, std::llround(static_cast<double>(i) * total_steps / 8.0)));
  }
  return {steps.begin(), steps.end()};
}

std::string render_prompt(const PromptExample& ex) {
  return ex.context + kPromptMarker + ex.completion;
}

Document render_prompt_document(const PromptExample& ex, int* context_len) {
  const std::string rendered = render_prompt(ex);
  const size_t first = rendered.find(kPromptMarker);
  if (rendered.find(kPromptMarker, first + 1) != std::string::npos)
    throw std::invalid_argument("prompt marker appears more than once: " + rendered);
  std::u32string chars = utf8::decode(rendered);
  const int ctx = static_cast<int>(utf8::decode(ex.context).size()) + 6;
  chars.push_back(kEotChar);
  if (context_len != nullptr) *context_len = ctx;
  // The '=' marker ends the context word, so the completion starts a word.
  return Document::make(std::move(chars), {ctx + 1});
}

std::vector<PromptExample> load_prompt_tsv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read prompt file: " + path.string());
  std::vector<PromptExample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error(path.string() + " line " + std::to_string(lineno) +
                               ": expected context<TAB>completion");
    out.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  return out;
}

namespace {

class Adam {
 public:
  explicit Adam(SegmentalModel& model) : model_(model) {
    for (const auto& [name, t] : model.parameters()) {
      m_.emplace_back(t->size(), 0.0);
      v_.emplace_back(t->size(), 0.0);
    }
  }

  void clip_global_norm(double max_norm) {
    double sq = 0.0;
    for (const auto& [name, t] : model_.parameters())
      for (double g : t->grad) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
      const double s = max_norm / norm;
      for (const auto& [name, t] : model_.parameters())
        for (double& g : t->grad) g *= s;
    }
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, t_);
    const double bc2 = 1.0 - std::pow(kBeta2, t_);
    size_t pi = 0;
    for (const auto& [name, t] : model_.parameters()) {
      auto& m = m_[pi];
      auto& v = v_[pi];
      ++pi;
      for (size_t i = 0; i < t->size(); ++i) {
        const double g = t->grad[i];
        m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g;
        v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g * g;
        t->data[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + kEps);
      }
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  SegmentalModel& model_;
  std::vector<std::vector<double>> m_, v_;
  long long t_ = 0;
};

void check_vocab_coverage(const SegmentalModel& model,
                          const std::vector<Document>& docs) {
  const CharVocab& vocab = model.vocab();
  for (const auto& doc : docs) {
    for (char32_t c : doc.chars()) {
      if (c != kEotChar && vocab.id_of(c) == CharVocab::kUnk) {
        throw std::invalid_argument(
            "corpus/vocab mismatch: training corpus contains a character "
            "missing from the model vocabulary: " +
            utf8::encode(std::u32string(1, c)));
      }
    }
  }
}

struct CsvLog {
  std::ofstream out;
  explicit CsvLog(const std::filesystem::path& path) {
    if (path.empty()) return;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out.open(path);
    if (!out) throw std::runtime_error("cannot write training log: " + path.string());
    out << "step,epoch,loss,lr\n";
  }
  void row(long long step, int epoch, double loss, double lr) {
    if (!out.is_open()) return;
    out.precision(17);
    out << step << ',' << epoch << ',' << loss << ',' << lr << '\n';
    out.flush();
  }
};

}  // namespace

PretrainResult pretrain(SegmentalModel& model,
                        const std::vector<Document>& sequences,
                        const TrainConfig& cfg,
                        const std::filesystem::path& log_csv) {
  cfg.validate();
  if (sequences.empty()) throw std::invalid_argument("pretrain: empty corpus");
  check_vocab_coverage(model, sequences);
  if (cfg.checkpoint_dir.empty())
    throw std::invalid_argument("pretrain: checkpoint_dir not set");
  std::filesystem::create_directories(cfg.checkpoint_dir);

  const long long n_seq = static_cast<long long>(sequences.size());
  const long long steps_per_epoch = (n_seq + cfg.batch_size - 1) / cfg.batch_size;
  const long long total_steps = steps_per_epoch * cfg.epochs;
  const auto schedule = make_schedule(total_steps, steps_per_epoch);
  const std::unordered_set<long long> save_at(schedule.begin(), schedule.end());

  Adam adam(model);
  CsvLog log(log_csv);
  std::mt19937_64 rng(cfg.seed);
  std::vector<size_t> order(sequences.size());
  std::iota(order.begin(), order.end(), 0);

  PretrainResult result;
  long long step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    long long epoch_batches = 0;
    for (size_t off = 0; off < order.size(); off += cfg.batch_size) {
      const size_t batch_end = std::min(order.size(), off + cfg.batch_size);
      const double batch_n = static_cast<double>(batch_end - off);
      model.zero_grad();
      double batch_loss = 0.0;
      for (size_t bi = off; bi < batch_end; ++bi) {
        const Document& doc = sequences[order[bi]];
        DocScorer scorer(model, doc, true, &rng);
        lattice::ModelScorer ms(scorer);
        auto fwd = lattice::forward_marginal(ms);
        const double doc_loss = -fwd.log_marginal->scalar() / doc.size();
        batch_loss += doc_loss / batch_n;
        ad::backward(fwd.log_marginal, -1.0 / (batch_n * doc.size()));
      }
      if (!std::isfinite(batch_loss)) {
        throw TrainingDiverged("non-finite loss at step " +
                               std::to_string(step + 1) +
                               "; last saved checkpoint retained");
      }
      adam.clip_global_norm(cfg.grad_clip);
      ++step;
      const double lr = scheduled_lr(cfg, step);
      adam.step(lr);
      log.row(step, epoch, batch_loss, lr);
      epoch_loss += batch_loss;
      ++epoch_batches;
      if (save_at.count(step)) {
        const auto dir = cfg.checkpoint_dir / ("step_" + std::to_string(step));
        model.save(dir);
        result.checkpoints.push_back(dir);
      }
    }
    result.epoch_losses.push_back(epoch_loss / epoch_batches);
  }
  result.total_steps = step;
  return result;
}

namespace {

struct PreparedPrompt {
  Document doc;
  int context_len = 0;
  int completion_chars = 0;
};

std::vector<PreparedPrompt> prepare_prompts(const SegmentalModel& model,
                                            const std::vector<PromptExample>& examples,
                                            int* skipped_empty,
                                            int* skipped_too_long) {
  std::vector<PreparedPrompt> out;
  for (const auto& ex : examples) {
    if (utf8::decode(ex.completion).empty()) {
      ++*skipped_empty;
      continue;
    }
    PreparedPrompt p;
    p.doc = render_prompt_document(ex, &p.context_len);
    if (p.doc.size() > model.config().max_seq_len) {
      ++*skipped_too_long;
      continue;
    }
    p.completion_chars = p.doc.size() - p.context_len;
    out.push_back(std::move(p));
  }
  return out;
}

double conditional_loss(const SegmentalModel& model, const PreparedPrompt& p) {
  ad::NoGradGuard ng;
  DocScorer scorer(model, p.doc);
  lattice::ModelScorer ms(scorer);
  auto cond = lattice::conditional_log_likelihood(ms, p.context_len);
  return -cond.log_conditional->scalar() / p.completion_chars;
}

}  // namespace

FinetuneResult finetune(SegmentalModel& model,
                        const std::vector<PromptExample>& train_examples,
                        const std::vector<PromptExample>& valid_examples,
                        const TrainConfig& cfg,
                        const std::filesystem::path& log_csv) {
  cfg.validate();
  if (cfg.checkpoint_dir.empty())
    throw std::invalid_argument("finetune: checkpoint_dir not set");
  std::filesystem::create_directories(cfg.checkpoint_dir);

  FinetuneResult result;
  auto train = prepare_prompts(model, train_examples, &result.skipped_empty,
                               &result.skipped_too_long);
  int v_empty = 0, v_long = 0;
  auto valid = prepare_prompts(model, valid_examples, &v_empty, &v_long);
  if (train.empty()) throw std::invalid_argument("finetune: no usable training examples");
  if (valid.empty()) throw std::invalid_argument("finetune: no usable validation examples");

  Adam adam(model);
  CsvLog log(log_csv);
  std::mt19937_64 rng(cfg.seed);
  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  const auto best_dir = cfg.checkpoint_dir / "best";
  result.best_valid_loss = std::numeric_limits<double>::infinity();
  long long step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t off = 0; off < order.size(); off += cfg.batch_size) {
      const size_t batch_end = std::min(order.size(), off + cfg.batch_size);
      const double batch_n = static_cast<double>(batch_end - off);
      model.zero_grad();
      double batch_loss = 0.0;
      for (size_t bi = off; bi < batch_end; ++bi) {
        const PreparedPrompt& p = train[order[bi]];
        DocScorer scorer(model, p.doc, true, &rng);
        lattice::ModelScorer ms(scorer);
        auto cond = lattice::conditional_log_likelihood(ms, p.context_len);
        batch_loss += -cond.log_conditional->scalar() / p.completion_chars / batch_n;
        ad::backward(cond.log_conditional, -1.0 / (batch_n * p.completion_chars));
      }
      if (!std::isfinite(batch_loss)) {
        throw TrainingDiverged("non-finite loss at step " + std::to_string(step + 1) +
                               "; last saved checkpoint retained");
      }
      adam.clip_global_norm(cfg.grad_clip);
      ++step;
      const double lr = scheduled_lr(cfg, step);
      adam.step(lr);
      log.row(step, epoch, batch_loss, lr);
    }
    double valid_loss = 0.0;
    for (const auto& p : valid) valid_loss += conditional_loss(model, p) / valid.size();
    result.valid_losses.push_back(valid_loss);
    if (valid_loss < result.best_valid_loss) {
      result.best_valid_loss = valid_loss;
      model.save(best_dir);
    }
  }
  result.best_checkpoint = best_dir;
  return result;
}

double eval_loss(const SegmentalModel& model, const std::vector<Document>& docs) {
  ad::NoGradGuard ng;
  double total = 0.0;
  for (const auto& doc : docs) {
    DocScorer scorer(model, doc);
    lattice::ModelScorer ms(scorer);
    auto fwd = lattice::forward_marginal(ms);
    total += -fwd.log_marginal->scalar() / doc.size();
  }
  return total / docs.size();
}

}  // namespace sslm::train
