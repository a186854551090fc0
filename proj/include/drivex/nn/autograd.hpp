#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// Every Var wraps a node holding its value, an accumulated gradient and a
// closure that pushes the node's gradient into its parents. Graphs are built
// eagerly; a node records a backward closure only when some parent requires
// a gradient, so forward passes over frozen parameters allocate no tape.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace drivex::nn {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
struct Node {
  Matrix<T> value;
  Matrix<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Matrix<T>& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Matrix<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Matrix<T>& value() const { return node_->value; }
  Matrix<T>& mutable_value() { return node_->value; }
  const Matrix<T>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }
  void zero_grad() { node_->grad.resize(0, 0); }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  T scalar() const { return node_->value(0, 0); }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

  void accumulate(const Matrix<T>& g) const {
    if (node_->requires_grad) node_->accumulate(g);
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables tape recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

template <typename T, typename F>
Var<T> make_node(Matrix<T> value, std::initializer_list<Var<T>> parents, F&& backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (grad_mode()) {
    for (const auto& p : parents) {
      if (p.requires_grad()) node->requires_grad = true;
    }
  }
  if (node->requires_grad) {
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::forward<F>(backward);
  }
  return Var<T>(std::move(node));
}

template <typename T, typename F>
Var<T> make_node(Matrix<T> value, const std::vector<Var<T>>& parents, F&& backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (grad_mode()) {
    for (const auto& p : parents) {
      if (p.requires_grad()) node->requires_grad = true;
    }
  }
  if (node->requires_grad) {
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::forward<F>(backward);
  }
  return Var<T>(std::move(node));
}

inline void check(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace detail

/// Runs reverse accumulation from a 1x1 root. Leaf gradients accumulate
/// across calls until zeroed.
template <typename T>
void backward(const Var<T>& root) {
  detail::check(root.rows() == 1 && root.cols() == 1, "backward: root must be a scalar");
  if (!root.requires_grad()) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node<T>* p = n->parents[i++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root.node()->accumulate(Matrix<T>::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
  // Release the tape: interior nodes drop their parents and closures.
  for (Node<T>* n : order) {
    if (n->backward) {
      n->backward = nullptr;
      n->parents.clear();
      n->grad.resize(0, 0);
    }
  }
}

template <typename T>
Var<T> constant(Matrix<T> value) {
  return Var<T>(std::move(value), false);
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  detail::check(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Matrix<T> out;
  out.noalias() = a.value() * b.value();
  return detail::make_node<T>(std::move(out), {a, b}, [a, b](Node<T>& self) {
    if (a.requires_grad()) a.accumulate(self.grad * b.value().transpose());
    if (b.requires_grad()) b.accumulate(a.value().transpose() * self.grad);
  });
}

/// a * b^T
template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  detail::check(a.cols() == b.cols(), "matmul_nt: inner dimensions differ");
  Matrix<T> out;
  out.noalias() = a.value() * b.value().transpose();
  return detail::make_node<T>(std::move(out), {a, b}, [a, b](Node<T>& self) {
    if (a.requires_grad()) a.accumulate(self.grad * b.value());
    if (b.requires_grad()) b.accumulate(self.grad.transpose() * a.value());
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  return detail::make_node<T>(a.value() + b.value(), {a, b}, [a, b](Node<T>& self) {
    a.accumulate(self.grad);
    b.accumulate(self.grad);
  });
}

/// Adds a 1 x C row to every row of a.
template <typename T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
  detail::check(row.rows() == 1 && row.cols() == a.cols(), "add_row: shape mismatch");
  Matrix<T> out = a.value();
  out.rowwise() += row.value().row(0);
  return detail::make_node<T>(std::move(out), {a, row}, [a, row](Node<T>& self) {
    a.accumulate(self.grad);
    if (row.requires_grad()) row.accumulate(self.grad.colwise().sum());
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  return detail::make_node<T>(a.value() * s, {a},
                              [a, s](Node<T>& self) { a.accumulate(self.grad * s); });
}

/// tanh approximation of GELU.
template <typename T>
Var<T> gelu(const Var<T>& a) {
  constexpr T k0 = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T k1 = T(0.044715);
  const auto& x = a.value();
  Matrix<T> out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const T v = x.data()[i];
    out.data()[i] = T(0.5) * v * (T(1) + std::tanh(k0 * (v + k1 * v * v * v)));
  }
  return detail::make_node<T>(std::move(out), {a}, [a](Node<T>& self) {
    const auto& x = a.value();
    Matrix<T> g(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const T v = x.data()[i];
      const T u = k0 * (v + k1 * v * v * v);
      const T t = std::tanh(u);
      const T du = k0 * (T(1) + T(3) * k1 * v * v);
      g.data()[i] = self.grad.data()[i] *
                    (T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * du);
    }
    a.accumulate(g);
  });
}

/// Row-wise layer normalisation with learned gain and bias rows.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  detail::check(gamma.cols() == d && beta.cols() == d, "layer_norm: parameter width mismatch");
  auto xhat = std::make_shared<Matrix<T>>(n, d);
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(n));
  Matrix<T> out(n, d);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto row = x.value().row(r);
    const T mean = row.mean();
    const T var = (row.array() - mean).square().mean();
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[static_cast<size_t>(r)] = is;
    xhat->row(r) = (row.array() - mean) * is;
    out.row(r) = xhat->row(r).cwiseProduct(gamma.value().row(0)) + beta.value().row(0);
  }
  return detail::make_node<T>(std::move(out), {x, gamma, beta},
                              [x, gamma, beta, xhat, inv_std](Node<T>& self) {
    const Eigen::Index n = xhat->rows();
    const Eigen::Index d = xhat->cols();
    if (gamma.requires_grad()) {
      gamma.accumulate((self.grad.cwiseProduct(*xhat)).colwise().sum());
    }
    if (beta.requires_grad()) beta.accumulate(self.grad.colwise().sum());
    if (x.requires_grad()) {
      Matrix<T> gx(n, d);
      for (Eigen::Index r = 0; r < n; ++r) {
        const RowVector<T> gh = self.grad.row(r).cwiseProduct(gamma.value().row(0));
        const T mean_gh = gh.mean();
        const T mean_ghx = gh.cwiseProduct(xhat->row(r)).mean();
        gx.row(r) = ((gh.array() - mean_gh) - xhat->row(r).array() * mean_ghx) *
                    (*inv_std)[static_cast<size_t>(r)];
      }
      x.accumulate(gx);
    }
  });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  return detail::make_node<T>(a.value().transpose(), {a},
                              [a](Node<T>& self) { a.accumulate(self.grad.transpose()); });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  detail::check(!parts.empty(), "concat_rows: no inputs");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    detail::check(p.cols() == cols, "concat_rows: ragged inputs");
    rows += p.rows();
  }
  Matrix<T> out(rows, cols);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return detail::make_node<T>(std::move(out), parts, [parts](Node<T>& self) {
    Eigen::Index r = 0;
    for (const auto& p : parts) {
      if (p.requires_grad()) p.accumulate(self.grad.middleRows(r, p.rows()));
      r += p.rows();
    }
  });
}

template <typename T>
Var<T> slice_rows(const Var<T>& a, Eigen::Index start, Eigen::Index count) {
  detail::check(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows: out of range");
  return detail::make_node<T>(a.value().middleRows(start, count), {a},
                              [a, start, count](Node<T>& self) {
    Matrix<T> g = Matrix<T>::Zero(a.rows(), a.cols());
    g.middleRows(start, count) = self.grad;
    a.accumulate(g);
  });
}

template <typename T>
Var<T> mean_rows(const Var<T>& a) {
  const T inv = T(1) / static_cast<T>(a.rows());
  return detail::make_node<T>(a.value().colwise().mean(), {a}, [a, inv](Node<T>& self) {
    Matrix<T> g = self.grad.replicate(a.rows(), 1) * inv;
    a.accumulate(g);
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  Matrix<T> out(1, 1);
  out(0, 0) = a.value().sum();
  return detail::make_node<T>(std::move(out), {a}, [a](Node<T>& self) {
    a.accumulate(Matrix<T>::Constant(a.rows(), a.cols(), self.grad(0, 0)));
  });
}

/// Embedding lookup: row i of the output is table.row(ids[i]).
template <typename T>
Var<T> gather_rows(const Var<T>& table, std::vector<int> ids) {
  Matrix<T> out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    detail::check(ids[i] >= 0 && ids[i] < table.rows(), "gather_rows: id out of range");
    out.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
  }
  return detail::make_node<T>(std::move(out), {table}, [table, ids](Node<T>& self) {
    Matrix<T> g = Matrix<T>::Zero(table.rows(), table.cols());
    for (size_t i = 0; i < ids.size(); ++i) g.row(ids[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    table.accumulate(g);
  });
}

/// Row-wise softmax over the allowed columns of each row. Excluded entries
/// are exactly zero. `allowed(r, c)` decides membership.
template <typename T, typename Allowed>
Matrix<T> masked_softmax_rows(const Matrix<T>& logits, Allowed&& allowed) {
  Matrix<T> p = Matrix<T>::Zero(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    T mx = -std::numeric_limits<T>::infinity();
    int allowed_count = 0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      if (allowed(r, c)) {
        mx = std::max(mx, logits(r, c));
        ++allowed_count;
      }
    }
    if (allowed_count == 0) throw std::invalid_argument("softmax over an empty set");
    T total = 0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      if (allowed(r, c)) {
        p(r, c) = std::exp(logits(r, c) - mx);
        total += p(r, c);
      }
    }
    p.row(r) /= total;
  }
  return p;
}

template <typename T>
Matrix<T> softmax_rows(const Matrix<T>& logits) {
  return masked_softmax_rows(logits, [](Eigen::Index, Eigen::Index) { return true; });
}

/// Key positions excluded from attention; empty span = nothing excluded.
using KeyMask = std::span<const unsigned char>;

/// Multi-head scaled dot-product attention on pre-projected Q (Lq x d),
/// K and V (Lk x d). Heads split the columns. Masked keys and, when
/// `causal`, keys after the query position receive zero weight.
/// When `probs_out` is given it receives one Lq x Lk matrix per head.
template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads,
                 KeyMask key_mask = {}, bool causal = false,
                 std::vector<Matrix<T>>* probs_out = nullptr) {
  const Eigen::Index lq = q.rows();
  const Eigen::Index lk = k.rows();
  const Eigen::Index d = q.cols();
  detail::check(k.cols() == d && v.cols() == d && v.rows() == lk, "attention: shape mismatch");
  detail::check(heads > 0 && d % heads == 0, "attention: width not divisible by heads");
  detail::check(key_mask.empty() || static_cast<Eigen::Index>(key_mask.size()) == lk,
                "attention: key mask length mismatch");
  const Eigen::Index dh = d / heads;
  const T s = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<unsigned char> mask(key_mask.begin(), key_mask.end());
  auto allowed = [&mask, causal](Eigen::Index r, Eigen::Index c) {
    if (causal && c > r) return false;
    return mask.empty() || mask[static_cast<size_t>(c)] == 0;
  };

  auto probs = std::make_shared<std::vector<Matrix<T>>>();
  probs->reserve(static_cast<size_t>(heads));
  Matrix<T> out(lq, d);
  for (int h = 0; h < heads; ++h) {
    Matrix<T> logits;
    logits.noalias() = q.value().middleCols(h * dh, dh) * k.value().middleCols(h * dh, dh).transpose();
    logits *= s;
    probs->push_back(masked_softmax_rows(logits, allowed));
    out.middleCols(h * dh, dh).noalias() = probs->back() * v.value().middleCols(h * dh, dh);
  }
  if (probs_out) *probs_out = *probs;
  return detail::make_node<T>(std::move(out), {q, k, v}, [q, k, v, probs, heads, dh, s](Node<T>& self) {
    Matrix<T> gq = Matrix<T>::Zero(q.rows(), q.cols());
    Matrix<T> gk = Matrix<T>::Zero(k.rows(), k.cols());
    Matrix<T> gv = Matrix<T>::Zero(v.rows(), v.cols());
    for (int h = 0; h < heads; ++h) {
      const Matrix<T>& p = (*probs)[static_cast<size_t>(h)];
      const auto go = self.grad.middleCols(h * dh, dh);
      gv.middleCols(h * dh, dh).noalias() += p.transpose() * go;
      Matrix<T> gp;
      gp.noalias() = go * v.value().middleCols(h * dh, dh).transpose();
      Matrix<T> gs = p.cwiseProduct(gp);
      const Eigen::Matrix<T, Eigen::Dynamic, 1> row_dot = gs.rowwise().sum();
      gs -= p.cwiseProduct(row_dot.replicate(1, p.cols()));
      gs *= s;
      gq.middleCols(h * dh, dh).noalias() += gs * k.value().middleCols(h * dh, dh);
      gk.middleCols(h * dh, dh).noalias() += gs.transpose() * q.value().middleCols(h * dh, dh);
    }
    q.accumulate(gq);
    k.accumulate(gk);
    v.accumulate(gv);
  });
}

/// Mean over rows of -log softmax(logits)[target]. Rows whose target is
/// negative are ignored. Returns 1x1.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<int>& targets) {
  detail::check(static_cast<Eigen::Index>(targets.size()) == logits.rows(),
                "cross_entropy: target count mismatch");
  const Matrix<T> p = softmax_rows(logits.value());
  T total = 0;
  int counted = 0;
  for (size_t r = 0; r < targets.size(); ++r) {
    if (targets[r] < 0) continue;
    detail::check(targets[r] < logits.cols(), "cross_entropy: target out of range");
    const auto row = logits.value().row(static_cast<Eigen::Index>(r));
    const T mx = row.maxCoeff();
    const T lse = mx + std::log((row.array() - mx).exp().sum());
    total += lse - row(targets[r]);
    ++counted;
  }
  detail::check(counted > 0, "cross_entropy: no counted rows");
  Matrix<T> out(1, 1);
  out(0, 0) = total / static_cast<T>(counted);
  return detail::make_node<T>(std::move(out), {logits}, [logits, targets, p, counted](Node<T>& self) {
    Matrix<T> g = p;
    for (size_t r = 0; r < targets.size(); ++r) {
      if (targets[r] < 0) {
        g.row(static_cast<Eigen::Index>(r)).setZero();
      } else {
        g(static_cast<Eigen::Index>(r), targets[r]) -= T(1);
      }
    }
    logits.accumulate(g * (self.grad(0, 0) / static_cast<T>(counted)));
  });
}

/// -sum_i w_i log softmax(scores)_i for a 1 x n score row. Returns 1x1.
template <typename T>
Var<T> weighted_neg_log_softmax(const Var<T>& scores, const std::vector<T>& weights) {
  detail::check(scores.rows() == 1 && static_cast<Eigen::Index>(weights.size()) == scores.cols(),
                "weighted_neg_log_softmax: shape mismatch");
  const auto row = scores.value().row(0);
  const T mx = row.maxCoeff();
  const T lse = mx + std::log((row.array() - mx).exp().sum());
  T total = 0;
  T wsum = 0;
  for (size_t i = 0; i < weights.size(); ++i) {
    total -= weights[i] * (row(static_cast<Eigen::Index>(i)) - lse);
    wsum += weights[i];
  }
  Matrix<T> p = softmax_rows(scores.value());
  Matrix<T> out(1, 1);
  out(0, 0) = total;
  return detail::make_node<T>(std::move(out), {scores}, [scores, weights, p, wsum](Node<T>& self) {
    Matrix<T> g = p * wsum;
    for (size_t i = 0; i < weights.size(); ++i) g(0, static_cast<Eigen::Index>(i)) -= weights[i];
    scores.accumulate(g * self.grad(0, 0));
  });
}

}  // namespace drivex::nn
