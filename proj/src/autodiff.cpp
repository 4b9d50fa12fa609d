#include "sslm/autodiff.hpp"

#include <atomic>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>

namespace sslm::ad {

namespace {

thread_local bool g_grad_enabled = true;
std::atomic<int> g_backward_epoch{0};

void check(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// C (m x n) = op_a(A) . op_b(B), transposing the physical argument when the
// corresponding flag is set. Accumulates into C when acc is true.
void mm(const double* a, const double* b, double* c, int m, int k, int n,
        bool ta, bool tb, bool acc) {
  if (!acc) std::fill(c, c + static_cast<size_t>(m) * n, 0.0);
  if (!ta && !tb) {
    for (int i = 0; i < m; ++i) {
      const double* arow = a + static_cast<size_t>(i) * k;
      double* crow = c + static_cast<size_t>(i) * n;
      for (int p = 0; p < k; ++p) {
        const double av = arow[p];
        if (av == 0.0) continue;
        const double* brow = b + static_cast<size_t>(p) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else if (!ta && tb) {
    for (int i = 0; i < m; ++i) {
      const double* arow = a + static_cast<size_t>(i) * k;
      double* crow = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        const double* brow = b + static_cast<size_t>(j) * k;
        double s = 0.0;
        for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
        crow[j] += s;
      }
    }
  } else if (ta && !tb) {
    for (int p = 0; p < k; ++p) {
      const double* arow = a + static_cast<size_t>(p) * m;  // A is k x m
      const double* brow = b + static_cast<size_t>(p) * n;
      for (int i = 0; i < m; ++i) {
        const double av = arow[i];
        if (av == 0.0) continue;
        double* crow = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else {
    for (int i = 0; i < m; ++i) {
      double* crow = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        const double* brow = b + static_cast<size_t>(j) * k;  // B is n x k
        double s = 0.0;
        for (int p = 0; p < k; ++p) s += a[static_cast<size_t>(p) * m + i] * brow[p];
        crow[j] += s;
      }
    }
  }
}

TensorPtr make_node(int rows, int cols, std::vector<TensorPtr> inputs) {
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : inputs) {
      if (p && p->requires_grad) {
        needs = true;
        break;
      }
    }
  }
  auto t = std::make_shared<Tensor>(rows, cols, needs);
  if (needs) {
    for (auto& p : inputs) {
      if (p && p->requires_grad) t->parents.push_back(p);
    }
  }
  return t;
}

double stable_log_sigmoid(double x) {
  return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

double stable_sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                  : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

Tensor::Tensor(int rows, int cols, bool rg)
    : data(static_cast<size_t>(rows) * cols, 0.0),
      requires_grad(rg),
      rows_(rows),
      cols_(cols) {
  if (rg) grad.assign(data.size(), 0.0);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

TensorPtr constant(int rows, int cols, double value) {
  auto t = std::make_shared<Tensor>(rows, cols, false);
  std::fill(t->data.begin(), t->data.end(), value);
  return t;
}

TensorPtr constant_scalar(double value) { return constant(1, 1, value); }

TensorPtr from_data(int rows, int cols, std::vector<double> values) {
  check(static_cast<size_t>(rows) * cols == values.size(), "from_data: size mismatch");
  auto t = std::make_shared<Tensor>(rows, cols, false);
  t->data = std::move(values);
  return t;
}

TensorPtr param(int rows, int cols) {
  return std::make_shared<Tensor>(rows, cols, true);
}

void backward(const TensorPtr& root, double seed) {
  check(root != nullptr && root->rows() == 1 && root->cols() == 1,
        "backward: root must be a scalar node");
  if (!root->requires_grad) return;
  const int epoch = ++g_backward_epoch;
  std::vector<Tensor*> topo;
  std::vector<std::pair<Tensor*, size_t>> stack;
  root->visit_mark = epoch;
  stack.emplace_back(root.get(), 0);
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Tensor* p = node->parents[idx++].get();
      if (p->visit_mark != epoch) {
        p->visit_mark = epoch;
        stack.emplace_back(p, 0);
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }
  root->grad[0] += seed;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b, bool ta, bool tb) {
  const int m = ta ? a->cols() : a->rows();
  const int k = ta ? a->rows() : a->cols();
  const int kb = tb ? b->cols() : b->rows();
  const int n = tb ? b->rows() : b->cols();
  check(k == kb, "matmul: inner dimensions differ");
  auto out = make_node(m, n, {a, b});
  mm(a->data.data(), b->data.data(), out->data.data(), m, k, n, ta, tb, false);
  if (out->requires_grad) {
    out->backward_fn = [a, b, m, k, n, ta, tb](Tensor& self) {
      if (a->requires_grad) {
        if (!ta) {
          mm(self.grad.data(), b->data.data(), a->grad.data(), m, n, k, false,
             !tb, true);
        } else {
          mm(b->data.data(), self.grad.data(), a->grad.data(), k, n, m, tb,
             true, true);
        }
      }
      if (b->requires_grad) {
        if (!tb) {
          mm(a->data.data(), self.grad.data(), b->grad.data(), k, m, n, !ta,
             false, true);
        } else {
          mm(self.grad.data(), a->data.data(), b->grad.data(), n, m, k, true,
             ta, true);
        }
      }
    };
  }
  return out;
}

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
  check(a->rows() == b->rows() && a->cols() == b->cols(), "add: shape mismatch");
  auto out = make_node(a->rows(), a->cols(), {a, b});
  for (size_t i = 0; i < out->size(); ++i) out->data[i] = a->data[i] + b->data[i];
  if (out->requires_grad) {
    out->backward_fn = [a, b](Tensor& self) {
      if (a->requires_grad)
        for (size_t i = 0; i < self.size(); ++i) a->grad[i] += self.grad[i];
      if (b->requires_grad)
        for (size_t i = 0; i < self.size(); ++i) b->grad[i] += self.grad[i];
    };
  }
  return out;
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
  check(a->rows() == b->rows() && a->cols() == b->cols(), "sub: shape mismatch");
  auto out = make_node(a->rows(), a->cols(), {a, b});
  for (size_t i = 0; i < out->size(); ++i) out->data[i] = a->data[i] - b->data[i];
  if (out->requires_grad) {
    out->backward_fn = [a, b](Tensor& self) {
      if (a->requires_grad)
        for (size_t i = 0; i < self.size(); ++i) a->grad[i] += self.grad[i];
      if (b->requires_grad)
        for (size_t i = 0; i < self.size(); ++i) b->grad[i] -= self.grad[i];
    };
  }
  return out;
}

TensorPtr add_rowvec(const TensorPtr& a, const TensorPtr& v) {
  check(v->rows() == 1 && v->cols() == a->cols(), "add_rowvec: shape mismatch");
  auto out = make_node(a->rows(), a->cols(), {a, v});
  const int n = a->cols();
  for (int i = 0; i < a->rows(); ++i)
    for (int j = 0; j < n; ++j) out->at(i, j) = a->at(i, j) + v->data[j];
  if (out->requires_grad) {
    out->backward_fn = [a, v, n](Tensor& self) {
      if (a->requires_grad)
        for (size_t i = 0; i < self.size(); ++i) a->grad[i] += self.grad[i];
      if (v->requires_grad) {
        for (int i = 0; i < self.rows(); ++i)
          for (int j = 0; j < n; ++j) v->grad[j] += self.grad[static_cast<size_t>(i) * n + j];
      }
    };
  }
  return out;
}

TensorPtr scale(const TensorPtr& a, double c) {
  auto out = make_node(a->rows(), a->cols(), {a});
  for (size_t i = 0; i < out->size(); ++i) out->data[i] = a->data[i] * c;
  if (out->requires_grad) {
    out->backward_fn = [a, c](Tensor& self) {
      for (size_t i = 0; i < self.size(); ++i) a->grad[i] += c * self.grad[i];
    };
  }
  return out;
}

TensorPtr gelu(const TensorPtr& a) {
  auto out = make_node(a->rows(), a->cols(), {a});
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  for (size_t i = 0; i < out->size(); ++i) {
    const double x = a->data[i];
    out->data[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  }
  if (out->requires_grad) {
    out->backward_fn = [a](Tensor& self) {
      for (size_t i = 0; i < self.size(); ++i) {
        const double x = a->data[i];
        const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        a->grad[i] += self.grad[i] * (cdf + x * pdf);
      }
    };
  }
  return out;
}

TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gamma,
                     const TensorPtr& beta, double eps) {
  const int n = x->cols();
  check(gamma->rows() == 1 && gamma->cols() == n, "layer_norm: gamma shape");
  check(beta->rows() == 1 && beta->cols() == n, "layer_norm: beta shape");
  auto out = make_node(x->rows(), n, {x, gamma, beta});
  auto xhat = std::make_shared<std::vector<double>>(x->size());
  auto istd = std::make_shared<std::vector<double>>(x->rows());
  for (int i = 0; i < x->rows(); ++i) {
    const double* row = x->data.data() + static_cast<size_t>(i) * n;
    double mean = 0.0;
    for (int j = 0; j < n; ++j) mean += row[j];
    mean /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= n;
    const double is = 1.0 / std::sqrt(var + eps);
    (*istd)[i] = is;
    for (int j = 0; j < n; ++j) {
      const double xh = (row[j] - mean) * is;
      (*xhat)[static_cast<size_t>(i) * n + j] = xh;
      out->at(i, j) = gamma->data[j] * xh + beta->data[j];
    }
  }
  if (out->requires_grad) {
    out->backward_fn = [x, gamma, beta, xhat, istd, n](Tensor& self) {
      for (int i = 0; i < self.rows(); ++i) {
        const double* dy = self.grad.data() + static_cast<size_t>(i) * n;
        const double* xh = xhat->data() + static_cast<size_t>(i) * n;
        if (gamma->requires_grad)
          for (int j = 0; j < n; ++j) gamma->grad[j] += dy[j] * xh[j];
        if (beta->requires_grad)
          for (int j = 0; j < n; ++j) beta->grad[j] += dy[j];
        if (x->requires_grad) {
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (int j = 0; j < n; ++j) {
            const double dxh = dy[j] * gamma->data[j];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xh[j];
          }
          const double is = (*istd)[i];
          double* dx = x->grad.data() + static_cast<size_t>(i) * n;
          for (int j = 0; j < n; ++j) {
            const double dxh = dy[j] * gamma->data[j];
            dx[j] += is * (dxh - sum_dxhat / n - xh[j] * sum_dxhat_xhat / n);
          }
        }
      }
    };
  }
  return out;
}

TensorPtr causal_softmax_rows(const TensorPtr& scores) {
  check(scores->rows() == scores->cols(), "causal_softmax_rows: square input");
  const int n = scores->rows();
  auto out = make_node(n, n, {scores});
  for (int i = 0; i < n; ++i) {
    const double* row = scores->data.data() + static_cast<size_t>(i) * n;
    double mx = row[0];
    for (int j = 1; j <= i; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j <= i; ++j) z += std::exp(row[j] - mx);
    for (int j = 0; j <= i; ++j) out->at(i, j) = std::exp(row[j] - mx) / z;
  }
  if (out->requires_grad) {
    out->backward_fn = [scores, n](Tensor& self) {
      for (int i = 0; i < n; ++i) {
        const double* p = self.data.data() + static_cast<size_t>(i) * n;
        const double* dp = self.grad.data() + static_cast<size_t>(i) * n;
        double dot = 0.0;
        for (int j = 0; j <= i; ++j) dot += dp[j] * p[j];
        double* ds = scores->grad.data() + static_cast<size_t>(i) * n;
        for (int j = 0; j <= i; ++j) ds[j] += p[j] * (dp[j] - dot);
      }
    };
  }
  return out;
}

TensorPtr log_softmax_rows(const TensorPtr& logits) {
  const int n = logits->cols();
  auto out = make_node(logits->rows(), n, {logits});
  for (int i = 0; i < logits->rows(); ++i) {
    const double* row = logits->data.data() + static_cast<size_t>(i) * n;
    double mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < n; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (int j = 0; j < n; ++j) out->at(i, j) = row[j] - lse;
  }
  if (out->requires_grad) {
    out->backward_fn = [logits, n](Tensor& self) {
      for (int i = 0; i < self.rows(); ++i) {
        const double* y = self.data.data() + static_cast<size_t>(i) * n;
        const double* dy = self.grad.data() + static_cast<size_t>(i) * n;
        double gsum = 0.0;
        for (int j = 0; j < n; ++j) gsum += dy[j];
        double* dx = logits->grad.data() + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) dx[j] += dy[j] - std::exp(y[j]) * gsum;
      }
    };
  }
  return out;
}

TensorPtr dropout(const TensorPtr& a, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return a;
  check(p < 1.0, "dropout: p must be < 1");
  auto out = make_node(a->rows(), a->cols(), {a});
  auto mask = std::make_shared<std::vector<double>>(a->size());
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double keep_scale = 1.0 / (1.0 - p);
  for (size_t i = 0; i < a->size(); ++i) {
    (*mask)[i] = uni(rng) < p ? 0.0 : keep_scale;
    out->data[i] = a->data[i] * (*mask)[i];
  }
  if (out->requires_grad) {
    out->backward_fn = [a, mask](Tensor& self) {
      for (size_t i = 0; i < self.size(); ++i)
        a->grad[i] += self.grad[i] * (*mask)[i];
    };
  }
  return out;
}

TensorPtr gather_rows(const TensorPtr& table, const std::vector<int>& ids) {
  const int n = table->cols();
  auto out = make_node(static_cast<int>(ids.size()), n, {table});
  for (size_t r = 0; r < ids.size(); ++r) {
    check(ids[r] >= 0 && ids[r] < table->rows(), "gather_rows: id out of range");
    const double* src = table->data.data() + static_cast<size_t>(ids[r]) * n;
    std::copy(src, src + n, out->data.data() + r * n);
  }
  if (out->requires_grad) {
    out->backward_fn = [table, ids, n](Tensor& self) {
      for (size_t r = 0; r < ids.size(); ++r) {
        double* dst = table->grad.data() + static_cast<size_t>(ids[r]) * n;
        const double* g = self.grad.data() + r * n;
        for (int j = 0; j < n; ++j) dst[j] += g[j];
      }
    };
  }
  return out;
}

TensorPtr slice_rows(const TensorPtr& a, int r0, int len) {
  check(r0 >= 0 && len >= 0 && r0 + len <= a->rows(), "slice_rows: out of range");
  const int n = a->cols();
  auto out = make_node(len, n, {a});
  std::copy(a->data.begin() + static_cast<size_t>(r0) * n,
            a->data.begin() + static_cast<size_t>(r0 + len) * n,
            out->data.begin());
  if (out->requires_grad) {
    out->backward_fn = [a, r0, n](Tensor& self) {
      double* dst = a->grad.data() + static_cast<size_t>(r0) * n;
      for (size_t i = 0; i < self.size(); ++i) dst[i] += self.grad[i];
    };
  }
  return out;
}

TensorPtr slice_cols(const TensorPtr& a, int c0, int len) {
  check(c0 >= 0 && len >= 0 && c0 + len <= a->cols(), "slice_cols: out of range");
  auto out = make_node(a->rows(), len, {a});
  for (int i = 0; i < a->rows(); ++i)
    for (int j = 0; j < len; ++j) out->at(i, j) = a->at(i, c0 + j);
  if (out->requires_grad) {
    out->backward_fn = [a, c0, len](Tensor& self) {
      const int ac = a->cols();
      for (int i = 0; i < self.rows(); ++i)
        for (int j = 0; j < len; ++j)
          a->grad[static_cast<size_t>(i) * ac + c0 + j] +=
              self.grad[static_cast<size_t>(i) * len + j];
    };
  }
  return out;
}

TensorPtr concat_cols(const std::vector<TensorPtr>& parts) {
  check(!parts.empty(), "concat_cols: empty input");
  const int rows = parts[0]->rows();
  int total = 0;
  for (const auto& p : parts) {
    check(p->rows() == rows, "concat_cols: row mismatch");
    total += p->cols();
  }
  auto out = make_node(rows, total, parts);
  int off = 0;
  for (const auto& p : parts) {
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < p->cols(); ++j) out->at(i, off + j) = p->at(i, j);
    off += p->cols();
  }
  if (out->requires_grad) {
    out->backward_fn = [parts, rows, total](Tensor& self) {
      int off2 = 0;
      for (const auto& p : parts) {
        if (p->requires_grad) {
          for (int i = 0; i < rows; ++i)
            for (int j = 0; j < p->cols(); ++j)
              p->grad[static_cast<size_t>(i) * p->cols() + j] +=
                  self.grad[static_cast<size_t>(i) * total + off2 + j];
        }
        off2 += p->cols();
      }
    };
  }
  return out;
}

TensorPtr broadcast_row(const TensorPtr& v, int m) {
  check(v->rows() == 1, "broadcast_row: input must be 1 x d");
  const int n = v->cols();
  auto out = make_node(m, n, {v});
  for (int i = 0; i < m; ++i)
    std::copy(v->data.begin(), v->data.end(),
              out->data.begin() + static_cast<size_t>(i) * n);
  if (out->requires_grad) {
    out->backward_fn = [v, m, n](Tensor& self) {
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          v->grad[j] += self.grad[static_cast<size_t>(i) * n + j];
    };
  }
  return out;
}

TensorPtr prefix_rowsum_exclusive(const TensorPtr& x) {
  const int m = x->rows();
  const int n = x->cols();
  auto out = make_node(m + 1, n, {x});
  for (int j = 0; j < n; ++j) out->at(0, j) = 0.0;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out->at(i + 1, j) = out->at(i, j) + x->at(i, j);
  if (out->requires_grad) {
    out->backward_fn = [x, m, n](Tensor& self) {
      std::vector<double> running(n, 0.0);
      for (int i = m; i >= 1; --i) {
        for (int j = 0; j < n; ++j) {
          running[j] += self.grad[static_cast<size_t>(i) * n + j];
          x->grad[static_cast<size_t>(i - 1) * n + j] += running[j];
        }
      }
    };
  }
  return out;
}

TensorPtr pick(const TensorPtr& a, int r, int c) {
  check(r >= 0 && r < a->rows() && c >= 0 && c < a->cols(), "pick: out of range");
  auto out = make_node(1, 1, {a});
  out->data[0] = a->at(r, c);
  if (out->requires_grad) {
    out->backward_fn = [a, r, c](Tensor& self) {
      a->grad[static_cast<size_t>(r) * a->cols() + c] += self.grad[0];
    };
  }
  return out;
}

TensorPtr logsumexp_scalars(const std::vector<TensorPtr>& items) {
  if (items.empty()) return constant_scalar(kLogZero);
  double mx = items[0]->scalar();
  for (const auto& t : items) mx = std::max(mx, t->scalar());
  if (mx <= kLogZero) return constant_scalar(kLogZero);
  auto out = make_node(1, 1, items);
  double s = 0.0;
  for (const auto& t : items) s += std::exp(t->scalar() - mx);
  out->data[0] = mx + std::log(s);
  if (out->requires_grad) {
    out->backward_fn = [items](Tensor& self) {
      const double g = self.grad[0];
      const double y = self.data[0];
      for (const auto& t : items) {
        if (t->requires_grad) t->grad[0] += g * std::exp(t->scalar() - y);
      }
    };
  }
  return out;
}

TensorPtr log_sigmoid(const TensorPtr& x, bool of_complement) {
  check(x->rows() == 1 && x->cols() == 1, "log_sigmoid: scalar input expected");
  auto out = make_node(1, 1, {x});
  const double v = x->scalar();
  out->data[0] = of_complement ? stable_log_sigmoid(-v) : stable_log_sigmoid(v);
  if (out->requires_grad) {
    out->backward_fn = [x, of_complement](Tensor& self) {
      const double v2 = x->scalar();
      const double d = of_complement ? -stable_sigmoid(v2) : stable_sigmoid(-v2);
      x->grad[0] += self.grad[0] * d;
    };
  }
  return out;
}

double logsumexp(const std::vector<double>& values) {
  if (values.empty()) return kLogZero;
  double mx = values[0];
  for (double v : values) mx = std::max(mx, v);
  if (mx <= kLogZero) return kLogZero;
  double s = 0.0;
  for (double v : values) s += std::exp(v - mx);
  return mx + std::log(s);
}

}  // namespace sslm::ad
