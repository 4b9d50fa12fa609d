#pragma once

#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace sslm::ad {

// Log-probability sentinel standing in for -inf so that log-sum-exp and
// downstream arithmetic never produce NaN.
constexpr double kLogZero = -1e9;

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense row-major matrix of doubles acting as a node in a reverse-mode
// autodiff DAG. Scalars are 1x1 tensors. Gradients are accumulated into
// `grad` by backward(); graphs are built only while grad mode is enabled.
class Tensor {
 public:
  Tensor(int rows, int cols, bool requires_grad);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  size_t size() const { return data.size(); }

  double& at(int r, int c) { return data[static_cast<size_t>(r) * cols_ + c]; }
  double at(int r, int c) const { return data[static_cast<size_t>(r) * cols_ + c]; }
  double scalar() const { return data[0]; }

  std::vector<double> data;
  std::vector<double> grad;  // same size as data iff requires_grad
  bool requires_grad = false;

  std::vector<TensorPtr> parents;
  std::function<void(Tensor&)> backward_fn;

  // scratch used by backward()'s topological sweep
  int visit_mark = 0;

 private:
  int rows_ = 0;
  int cols_ = 0;
};

bool grad_enabled();

// RAII switch disabling graph construction (evaluation-mode forward passes).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

TensorPtr constant(int rows, int cols, double value);
TensorPtr constant_scalar(double value);
TensorPtr from_data(int rows, int cols, std::vector<double> values);
TensorPtr param(int rows, int cols);  // leaf with requires_grad = true

// Accumulates seed into root->grad and runs the reverse topological sweep.
// root must be a 1x1 tensor.
void backward(const TensorPtr& root, double seed = 1.0);

// C = op_a(A) . op_b(B) where op transposes when the flag is set.
TensorPtr matmul(const TensorPtr& a, const TensorPtr& b, bool trans_a = false,
                 bool trans_b = false);
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr add_rowvec(const TensorPtr& a, const TensorPtr& v);  // v is 1 x cols
TensorPtr scale(const TensorPtr& a, double c);
TensorPtr gelu(const TensorPtr& a);
TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gamma,
                     const TensorPtr& beta, double eps = 1e-5);
// Row i is softmaxed over columns 0..i; columns above the diagonal are 0.
TensorPtr causal_softmax_rows(const TensorPtr& scores);
TensorPtr log_softmax_rows(const TensorPtr& logits);
TensorPtr dropout(const TensorPtr& a, double p, std::mt19937_64& rng);
TensorPtr gather_rows(const TensorPtr& table, const std::vector<int>& ids);
TensorPtr slice_rows(const TensorPtr& a, int r0, int len);
TensorPtr slice_cols(const TensorPtr& a, int c0, int len);
TensorPtr concat_cols(const std::vector<TensorPtr>& parts);
TensorPtr broadcast_row(const TensorPtr& v, int m);  // v is 1 x d -> m x d
// out has one more row than x: out[i] = sum of x rows 0..i-1 (out[0] = 0).
TensorPtr prefix_rowsum_exclusive(const TensorPtr& x);
TensorPtr pick(const TensorPtr& a, int r, int c);  // 1x1 element extraction
// log(sum exp(items)) over scalar nodes, summed left to right. Items valued
// at or below kLogZero contribute nothing; an empty list yields kLogZero.
TensorPtr logsumexp_scalars(const std::vector<TensorPtr>& items);
// log(sigmoid(x)) or log(1 - sigmoid(x)) of a scalar node, computed stably.
TensorPtr log_sigmoid(const TensorPtr& x, bool of_complement = false);

// Numeric helper matching logsumexp_scalars on raw values.
double logsumexp(const std::vector<double>& values);

}  // namespace sslm::ad
