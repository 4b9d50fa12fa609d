#include "sslm/model.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace sslm {

namespace {

constexpr char kParamsMagic[8] = {'S', 'S', 'L', 'M', 'P', 'R', '0', '1'};
constexpr double kMaskedLogit = -1e30;

void init_normal(const ad::TensorPtr& t, std::mt19937_64& rng, double std_dev) {
  std::normal_distribution<double> dist(0.0, std_dev);
  for (double& v : t->data) v = dist(rng);
}

}  // namespace

void ModelConfig::validate() const {
  if (layers < 1) throw std::invalid_argument("layers must be >= 1");
  if (heads < 1) throw std::invalid_argument("heads must be >= 1");
  if (embed_dim < 1 || embed_dim % heads != 0)
    throw std::invalid_argument("embed_dim must be positive and divisible by heads");
  if (max_seq_len < 1) throw std::invalid_argument("max_seq_len must be >= 1");
  if (lexicon_size < 1) throw std::invalid_argument("lexicon_size must be >= 1");
  if (max_segment_len < 1) throw std::invalid_argument("max_segment_len must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0)
    throw std::invalid_argument("dropout must be in [0, 1)");
}

KvConfig ModelConfig::to_kv() const {
  KvConfig kv;
  kv.set("layers", std::to_string(layers));
  kv.set("heads", std::to_string(heads));
  kv.set("embed_dim", std::to_string(embed_dim));
  kv.set("max_seq_len", std::to_string(max_seq_len));
  kv.set("lexicon_size", std::to_string(lexicon_size));
  kv.set("max_segment_len", std::to_string(max_segment_len));
  kv.set("dropout", std::to_string(dropout));
  return kv;
}

ModelConfig ModelConfig::from_kv(const KvConfig& kv) {
  ModelConfig c;
  c.layers = static_cast<int>(kv.get_int("layers", c.layers));
  c.heads = static_cast<int>(kv.get_int("heads", c.heads));
  c.embed_dim = static_cast<int>(kv.get_int("embed_dim", c.embed_dim));
  c.max_seq_len = static_cast<int>(kv.get_int("max_seq_len", c.max_seq_len));
  c.lexicon_size = static_cast<int>(kv.get_int("lexicon_size", c.lexicon_size));
  c.max_segment_len = static_cast<int>(kv.get_int("max_segment_len", c.max_segment_len));
  c.dropout = kv.get_double("dropout", c.dropout);
  c.validate();
  return c;
}

SegmentalModel::SegmentalModel(ModelConfig config, CharVocab vocab,
                               SubwordLexicon lexicon, uint64_t seed)
    : config_(std::move(config)),
      vocab_(std::move(vocab)),
      lexicon_(std::move(lexicon)) {
  config_.validate();
  if (config_.lexicon_size != lexicon_.size()) {
    throw std::invalid_argument(
        "config lexicon_size (" + std::to_string(config_.lexicon_size) +
        ") does not match lexicon entry count (" +
        std::to_string(lexicon_.size()) + ")");
  }
  const int d = config_.embed_dim;
  const int vc = vocab_.size();
  const int v = config_.lexicon_size;
  const int l = config_.max_segment_len;

  auto reg = [&](const std::string& name, int rows, int cols) {
    auto t = ad::param(rows, cols);
    params_.emplace_back(name, t);
    return t;
  };
  reg("wte", vc, d);
  reg("wpe", config_.max_seq_len + 1, d);
  for (int i = 0; i < config_.layers; ++i) {
    const std::string pre = "layer" + std::to_string(i) + ".";
    reg(pre + "ln1_g", 1, d);
    reg(pre + "ln1_b", 1, d);
    reg(pre + "attn_wqkv", d, 3 * d);
    reg(pre + "attn_bqkv", 1, 3 * d);
    reg(pre + "attn_wo", d, d);
    reg(pre + "attn_bo", 1, d);
    reg(pre + "ln2_g", 1, d);
    reg(pre + "ln2_b", 1, d);
    reg(pre + "mlp_w1", d, 4 * d);
    reg(pre + "mlp_b1", 1, 4 * d);
    reg(pre + "mlp_w2", 4 * d, d);
    reg(pre + "mlp_b2", 1, d);
  }
  reg("lnf_g", 1, d);
  reg("lnf_b", 1, d);
  reg("lex_w", d, v);
  reg("lex_b", 1, v);
  reg("mix_w", d, 1);
  reg("mix_b", 1, 1);
  reg("seg_ctx_w", d, d);
  reg("seg_ctx_b", 1, d);
  reg("seg_emb", vc, d);
  reg("seg_pos", l, d);
  reg("seg_w1", d, d);
  reg("seg_b1", 1, d);
  reg("seg_w2", d, vc);
  reg("seg_b2", 1, vc);

  std::mt19937_64 rng(seed);
  const double base_std = 0.02;
  const double resid_std = base_std / std::sqrt(2.0 * config_.layers);
  for (auto& [name, t] : params_) {
    const bool is_bias = name.find("_b") != std::string::npos &&
                         name.find("attn_wqkv") == std::string::npos;
    if (name.find("ln") != std::string::npos && name.ends_with("_g")) {
      std::fill(t->data.begin(), t->data.end(), 1.0);
    } else if (is_bias || name.ends_with("ln1_b") || name.ends_with("ln2_b")) {
      std::fill(t->data.begin(), t->data.end(), 0.0);
    } else if (name.ends_with("attn_wo") || name.ends_with("mlp_w2")) {
      init_normal(t, rng, resid_std);
    } else {
      init_normal(t, rng, base_std);
    }
  }
}

ad::TensorPtr SegmentalModel::p(const std::string& name) const {
  for (const auto& [n, t] : params_) {
    if (n == name) return t;
  }
  throw std::logic_error("unknown parameter: " + name);
}

ad::TensorPtr SegmentalModel::parameter(const std::string& name) const {
  return p(name);
}

size_t SegmentalModel::parameter_count() const {
  size_t total = 0;
  for (const auto& [n, t] : params_) total += t->size();
  return total;
}

void SegmentalModel::zero_grad() {
  for (auto& [n, t] : params_) std::fill(t->grad.begin(), t->grad.end(), 0.0);
}

ContextEncoding SegmentalModel::encode(const std::vector<int>& char_ids,
                                       bool training,
                                       std::mt19937_64* rng) const {
  const int n = static_cast<int>(char_ids.size());
  if (n > config_.max_seq_len) {
    throw std::invalid_argument("sequence of length " + std::to_string(n) +
                                " exceeds max_seq_len " +
                                std::to_string(config_.max_seq_len));
  }
  if (training && rng == nullptr)
    throw std::invalid_argument("training-mode encode requires an RNG");
  const int d = config_.embed_dim;
  const int heads = config_.heads;
  const int hd = d / heads;
  const double drop = training ? config_.dropout : 0.0;

  std::vector<int> ids;
  ids.reserve(n + 1);
  ids.push_back(CharVocab::kBos);
  ids.insert(ids.end(), char_ids.begin(), char_ids.end());
  for (int id : ids) {
    if (id < 0 || id >= vocab_.size())
      throw std::invalid_argument("character id out of range: " + std::to_string(id));
  }

  auto x = ad::add(ad::gather_rows(p("wte"), ids),
                   ad::slice_rows(p("wpe"), 0, n + 1));
  if (drop > 0.0) x = ad::dropout(x, drop, *rng);

  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
  for (int i = 0; i < config_.layers; ++i) {
    const std::string pre = "layer" + std::to_string(i) + ".";
    auto ln1 = ad::layer_norm(x, p(pre + "ln1_g"), p(pre + "ln1_b"));
    auto qkv = ad::add_rowvec(ad::matmul(ln1, p(pre + "attn_wqkv")),
                              p(pre + "attn_bqkv"));
    std::vector<ad::TensorPtr> head_outs;
    head_outs.reserve(heads);
    for (int h = 0; h < heads; ++h) {
      auto q = ad::slice_cols(qkv, h * hd, hd);
      auto k = ad::slice_cols(qkv, d + h * hd, hd);
      auto v = ad::slice_cols(qkv, 2 * d + h * hd, hd);
      auto scores = ad::scale(ad::matmul(q, k, false, true), inv_sqrt_hd);
      auto probs = ad::causal_softmax_rows(scores);
      if (drop > 0.0) probs = ad::dropout(probs, drop, *rng);
      head_outs.push_back(ad::matmul(probs, v));
    }
    auto attn = ad::add_rowvec(ad::matmul(ad::concat_cols(head_outs),
                                          p(pre + "attn_wo")),
                               p(pre + "attn_bo"));
    if (drop > 0.0) attn = ad::dropout(attn, drop, *rng);
    x = ad::add(x, attn);

    auto ln2 = ad::layer_norm(x, p(pre + "ln2_g"), p(pre + "ln2_b"));
    auto hid = ad::gelu(ad::add_rowvec(ad::matmul(ln2, p(pre + "mlp_w1")),
                                       p(pre + "mlp_b1")));
    auto mlp = ad::add_rowvec(ad::matmul(hid, p(pre + "mlp_w2")),
                              p(pre + "mlp_b2"));
    if (drop > 0.0) mlp = ad::dropout(mlp, drop, *rng);
    x = ad::add(x, mlp);
  }
  ContextEncoding enc;
  enc.hidden = ad::layer_norm(x, p("lnf_g"), p("lnf_b"));
  enc.length = n;
  return enc;
}

double SegmentalModel::segment_log_prob(const Document& doc, int start,
                                        int end) const {
  ad::NoGradGuard ng;
  DocScorer scorer(*this, doc);
  return scorer.segment_log_prob_value(start, end);
}

ad::TensorPtr mixture_log_prob(const ad::TensorPtr& log_phi,
                               const ad::TensorPtr& log_one_minus_phi,
                               const ad::TensorPtr& char_log_prob,
                               const ad::TensorPtr& lex_log_prob_or_null) {
  std::vector<ad::TensorPtr> branches;
  if (log_phi->scalar() > ad::kLogZero && char_log_prob->scalar() > ad::kLogZero)
    branches.push_back(ad::add(log_phi, char_log_prob));
  if (lex_log_prob_or_null && log_one_minus_phi->scalar() > ad::kLogZero &&
      lex_log_prob_or_null->scalar() > ad::kLogZero) {
    branches.push_back(ad::add(log_one_minus_phi, lex_log_prob_or_null));
  }
  return ad::logsumexp_scalars(branches);
}

DocScorer::DocScorer(const SegmentalModel& model, const Document& doc,
                     bool training, std::mt19937_64* rng)
    : model_(model), doc_(doc) {
  ids_ = model.vocab().encode(doc.chars());
  enc_ = model.encode(ids_, training, rng);
  starts_.resize(doc.size() + 2);
  const int vc = model.vocab().size();
  bos_mask_ = ad::constant(1, vc, 0.0);
  bos_mask_->data[CharVocab::kBos] = kMaskedLogit;
}

bool DocScorer::span_allowed(int start, int end) const {
  if (start < 1 || end < start || end > doc_.size()) return false;
  if (end - start + 1 > model_.config().max_segment_len) return false;
  return doc_.word_start(end) <= start;
}

void DocScorer::validate_span(int start, int end) const {
  if (start < 1 || end < start || end > doc_.size())
    throw std::invalid_argument("segment span [" + std::to_string(start) + "," +
                                std::to_string(end) + "] out of range");
  if (end - start + 1 > model_.config().max_segment_len)
    throw std::invalid_argument("segment longer than max_segment_len");
  if (doc_.word_start(end) > start)
    throw std::invalid_argument("segment crosses a word boundary");
}

DocScorer::StartTables& DocScorer::tables(int start) {
  if (start < 1 || start > doc_.size() + 1)
    throw std::invalid_argument("segment start out of range: " + std::to_string(start));
  return starts_[start];
}

void DocScorer::ensure_char_table(int start) {
  StartTables& t = tables(start);
  if (t.char_logp) return;
  const int n = doc_.size();
  const int len = start <= n
                      ? std::min(model_.config().max_segment_len,
                                 doc_.word_end(start) - start + 1)
                      : 0;
  t.len = len;
  auto h_prev = ad::slice_rows(enc_.hidden, start - 1, 1);
  auto ctx = ad::add_rowvec(ad::matmul(h_prev, model_.p("seg_ctx_w")),
                            model_.p("seg_ctx_b"));
  std::vector<int> seg_ids(ids_.begin() + (start - 1), ids_.begin() + (start - 1) + len);
  auto emb = ad::add(ad::gather_rows(model_.p("seg_emb"), seg_ids),
                     ad::slice_rows(model_.p("seg_pos"), 0, len));
  auto states = ad::add(ad::broadcast_row(ctx, len + 1),
                        ad::prefix_rowsum_exclusive(emb));
  auto hid = ad::gelu(ad::add_rowvec(ad::matmul(states, model_.p("seg_w1")),
                                     model_.p("seg_b1")));
  auto logits = ad::add_rowvec(ad::add_rowvec(ad::matmul(hid, model_.p("seg_w2")),
                                              model_.p("seg_b2")),
                               bos_mask_);
  t.char_logp = ad::log_softmax_rows(logits);
  t.char_cums.resize(len);
  for (int m = 0; m < len; ++m) {
    auto step = ad::pick(t.char_logp, m, ids_[start - 1 + m]);
    t.char_cums[m] = m == 0 ? step : ad::add(t.char_cums[m - 1], step);
  }
}

void DocScorer::ensure_lex_row(int start) {
  StartTables& t = tables(start);
  if (t.lex_logp) return;
  auto h_prev = ad::slice_rows(enc_.hidden, start - 1, 1);
  t.lex_logp = ad::log_softmax_rows(
      ad::add_rowvec(ad::matmul(h_prev, model_.p("lex_w")), model_.p("lex_b")));
}

void DocScorer::ensure_phi(int start) {
  StartTables& t = tables(start);
  if (t.log_phi) return;
  auto h_prev = ad::slice_rows(enc_.hidden, start - 1, 1);
  auto logit = ad::pick(ad::add_rowvec(ad::matmul(h_prev, model_.p("mix_w")),
                                       model_.p("mix_b")),
                        0, 0);
  t.log_phi = ad::log_sigmoid(logit, false);
  t.log_one_minus_phi = ad::log_sigmoid(logit, true);
}

ad::TensorPtr DocScorer::segment_log_prob(int start, int end) {
  validate_span(start, end);
  ensure_char_table(start);
  ensure_lex_row(start);
  ensure_phi(start);
  StartTables& t = tables(start);
  const int m = end - start;  // characters after the first
  auto char_lp = ad::add(t.char_cums[m],
                         ad::pick(t.char_logp, m + 1, CharVocab::kEoseg));
  ad::TensorPtr lex_lp;
  const int lex_id = model_.lexicon().id_of(doc_.span(start, end));
  if (lex_id >= 0) lex_lp = ad::pick(t.lex_logp, 0, lex_id);
  return mixture_log_prob(t.log_phi, t.log_one_minus_phi, char_lp, lex_lp);
}

std::vector<double> DocScorer::lex_log_probs(int start) {
  ensure_lex_row(start);
  return tables(start).lex_logp->data;
}

std::vector<double> DocScorer::char_step_log_probs(int start, int offset) {
  ensure_char_table(start);
  StartTables& t = tables(start);
  if (offset < 0 || offset > t.len)
    throw std::invalid_argument("char step offset out of range");
  const int vc = model_.vocab().size();
  const double* row = t.char_logp->data.data() + static_cast<size_t>(offset) * vc;
  return std::vector<double>(row, row + vc);
}

double DocScorer::phi(int start) {
  ensure_phi(start);
  return std::exp(tables(start).log_phi->scalar());
}

ad::TensorPtr DocScorer::char_prefix_log_prob(int start, int len) {
  ensure_char_table(start);
  StartTables& t = tables(start);
  if (len < 1 || len > t.len)
    throw std::invalid_argument("char prefix length out of range");
  return t.char_cums[len - 1];
}

ad::TensorPtr DocScorer::char_step(int start, int offset, int char_id) {
  ensure_char_table(start);
  StartTables& t = tables(start);
  if (offset < 0 || offset > t.len)
    throw std::invalid_argument("char step offset out of range");
  return ad::pick(t.char_logp, offset, char_id);
}

ad::TensorPtr DocScorer::log_phi_node(int start) {
  ensure_phi(start);
  return tables(start).log_phi;
}

ad::TensorPtr DocScorer::log_one_minus_phi_node(int start) {
  ensure_phi(start);
  return tables(start).log_one_minus_phi;
}

ad::TensorPtr DocScorer::lex_log_prob_node(int start, int lex_id) {
  ensure_lex_row(start);
  return ad::pick(tables(start).lex_logp, 0, lex_id);
}

namespace {

void write_u32(std::ofstream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::ifstream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw std::runtime_error("truncated parameter file");
  return v;
}

}  // namespace

void SegmentalModel::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  config_.to_kv().save(dir / "config.txt");
  vocab_.save(dir / "charvocab.txt");
  lexicon_.save(dir / "lexicon.txt");

  // Flat binary layout: 8-byte magic, u64 tensor count, then per tensor
  // u32 name length, name bytes, u32 rows, u32 cols, row-major float64.
  std::ofstream out(dir / "params.bin", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + (dir / "params.bin").string());
  out.write(kParamsMagic, sizeof(kParamsMagic));
  const uint64_t count = params_.size();
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (const auto& [name, t] : params_) {
    write_u32(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<uint32_t>(t->rows()));
    write_u32(out, static_cast<uint32_t>(t->cols()));
    out.write(reinterpret_cast<const char*>(t->data.data()),
              static_cast<std::streamsize>(t->data.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("failed writing " + (dir / "params.bin").string());
}

std::unique_ptr<SegmentalModel> SegmentalModel::load(
    const std::filesystem::path& dir) {
  ModelConfig config = ModelConfig::from_kv(KvConfig::load(dir / "config.txt"));
  CharVocab vocab = CharVocab::load(dir / "charvocab.txt");
  SubwordLexicon lexicon = SubwordLexicon::load(dir / "lexicon.txt");
  auto model = std::make_unique<SegmentalModel>(config, std::move(vocab),
                                                std::move(lexicon), 0);

  std::ifstream in(dir / "params.bin", std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + (dir / "params.bin").string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kParamsMagic, sizeof(magic)) != 0)
    throw std::runtime_error("bad parameter file magic in " + dir.string());
  uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  if (count != model->params_.size())
    throw std::runtime_error("parameter count mismatch in " + dir.string());
  for (uint64_t i = 0; i < count; ++i) {
    const uint32_t name_len = read_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const uint32_t rows = read_u32(in);
    const uint32_t cols = read_u32(in);
    auto t = model->p(name);
    if (static_cast<uint32_t>(t->rows()) != rows ||
        static_cast<uint32_t>(t->cols()) != cols)
      throw std::runtime_error("shape mismatch for parameter " + name);
    in.read(reinterpret_cast<char*>(t->data.data()),
            static_cast<std::streamsize>(t->data.size() * sizeof(double)));
    if (!in) throw std::runtime_error("truncated parameter data for " + name);
  }
  return model;
}

}  // namespace sslm
