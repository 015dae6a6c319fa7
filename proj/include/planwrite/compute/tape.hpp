#pragma once

// Reverse-mode automatic differentiation over dense Eigen matrices.
//
// A Tape is an append-only arena of nodes. Every operation records its
// result and a backward closure; Tape::backward walks the nodes in reverse
// creation order, so any value built from existing Vars is a valid DAG.
// Column vectors are (n, 1) matrices throughout.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace planwrite::compute {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
class Tape;

// Cheap handle to a tape node; valid until the owning tape is reset.
template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Mat<Scalar>& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

template <typename Scalar>
class Tape {
 public:
  using M = Mat<Scalar>;
  using BackwardFn = std::function<void(Tape&, int self)>;

  // Constant node: participates in the graph but receives no gradient.
  Var<Scalar> constant(M value) {
    return emit(std::move(value), nullptr, /*needs_grad=*/false);
  }

  Var<Scalar> constant_scalar(Scalar v) {
    M m(1, 1);
    m(0, 0) = v;
    return constant(std::move(m));
  }

  // Leaf node viewing externally owned storage. Gradients accumulate into
  // *grad, which must outlive the tape and be pre-sized and zeroed.
  Var<Scalar> parameter(const M* value, M* grad) {
    Node n;
    n.external_value = value;
    n.external_grad = grad;
    n.needs_grad = true;
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  const M& value(int id) const {
    const Node& n = nodes_[id];
    return n.external_value ? *n.external_value : n.value;
  }

  // Gradient buffer of a node, allocated and zeroed on first access.
  M& grad(int id) {
    Node& n = nodes_[id];
    if (n.external_grad != nullptr) return *n.external_grad;
    if (n.grad.size() == 0) n.grad.setZero(value(id).rows(), value(id).cols());
    return n.grad;
  }

  bool grad_present(int id) const {
    const Node& n = nodes_[id];
    return n.external_grad != nullptr || n.grad.size() != 0;
  }

  // Backpropagates d(loss)/d(node) into every reachable node; parameter
  // leaves accumulate into their external buffers.
  void backward(Var<Scalar> loss) {
    if (backward_done_) {
      throw std::runtime_error("tape: backward called twice without reset");
    }
    if (value(loss.id).size() != 1) {
      throw std::invalid_argument("tape: backward expects a scalar node");
    }
    backward_done_ = true;
    grad(loss.id).setConstant(Scalar(1));
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.backward && grad_present(i)) n.backward(*this, i);
    }
  }

  void reset() {
    nodes_.clear();
    backward_done_ = false;
  }

  std::size_t size() const { return nodes_.size(); }
  void reserve(std::size_t n) { nodes_.reserve(n); }

  Var<Scalar> emit(M value, BackwardFn backward, bool needs_grad = true) {
    Node n;
    n.value = std::move(value);
    n.backward = std::move(backward);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  bool needs_grad(int id) const { return nodes_[id].needs_grad; }

 private:
  struct Node {
    M value;
    M grad;
    const M* external_value = nullptr;
    M* external_grad = nullptr;
    BackwardFn backward;
    bool needs_grad = true;
  };

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

template <typename Scalar>
const Mat<Scalar>& Var<Scalar>::value() const {
  return tape->value(id);
}

namespace detail {

inline void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(std::string("tape: ") + msg);
}

template <typename Scalar>
void add_grad(Tape<Scalar>& t, int id, const Mat<Scalar>& g) {
  if (t.needs_grad(id)) t.grad(id) += g;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and linear-algebra operations.

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  detail::require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Tape<Scalar>& t = *a.tape;
  Mat<Scalar> y = a.value() * b.value();
  return t.emit(std::move(y), [a, b](Tape<Scalar>& t, int self) {
    const Mat<Scalar>& g = t.grad(self);
    if (t.needs_grad(a.id)) t.grad(a.id).noalias() += g * t.value(b.id).transpose();
    if (t.needs_grad(b.id)) t.grad(b.id).noalias() += t.value(a.id).transpose() * g;
  });
}

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Tape<Scalar>& t = *a.tape;
  return t.emit(a.value() + b.value(), [a, b](Tape<Scalar>& t, int self) {
    const Mat<Scalar>& g = t.grad(self);
    detail::add_grad(t, a.id, g);
    detail::add_grad(t, b.id, g);
  });
}

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b, Var<Scalar> c) {
  return add(add(a, b), c);
}

template <typename Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  Tape<Scalar>& t = *a.tape;
  return t.emit(a.value() - b.value(), [a, b](Tape<Scalar>& t, int self) {
    const Mat<Scalar>& g = t.grad(self);
    detail::add_grad(t, a.id, g);
    if (t.needs_grad(b.id)) t.grad(b.id) -= g;
  });
}

template <typename Scalar>
Var<Scalar> cwise_mul(Var<Scalar> a, Var<Scalar> b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "cwise_mul: shape mismatch");
  Tape<Scalar>& t = *a.tape;
  return t.emit(a.value().cwiseProduct(b.value()), [a, b](Tape<Scalar>& t, int self) {
    const Mat<Scalar>& g = t.grad(self);
    if (t.needs_grad(a.id)) t.grad(a.id) += g.cwiseProduct(t.value(b.id));
    if (t.needs_grad(b.id)) t.grad(b.id) += g.cwiseProduct(t.value(a.id));
  });
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar s) {
  Tape<Scalar>& t = *a.tape;
  return t.emit(a.value() * s, [a, s](Tape<Scalar>& t, int self) {
    detail::add_grad(t, a.id, Mat<Scalar>(t.grad(self) * s));
  });
}

template <typename Scalar>
Var<Scalar> neg(Var<Scalar> a) {
  return scale(a, Scalar(-1));
}

template <typename Scalar>
Var<Scalar> add_scalar(Var<Scalar> a, Scalar s) {
  Tape<Scalar>& t = *a.tape;
  return t.emit(Mat<Scalar>(a.value().array() + s), [a](Tape<Scalar>& t, int self) {
    detail::add_grad(t, a.id, t.grad(self));
  });
}

template <typename Scalar>
Var<Scalar> sigmoid(Var<Scalar> a) {
  Tape<Scalar>& t = *a.tape;
  Mat<Scalar> y = a.value().unaryExpr([](Scalar x) {
    return x >= Scalar(0) ? Scalar(1) / (Scalar(1) + std::exp(-x))
                          : std::exp(x) / (Scalar(1) + std::exp(x));
  });
  return t.emit(std::move(y), [a](Tape<Scalar>& t, int self) {
    const Mat<Scalar>& y = t.value(self);
    Mat<Scalar> d = t.grad(self).cwiseProduct(
        (y.array() * (Scalar(1) - y.array())).matrix());
    detail::add_grad(t, a.id, d);
  });
}

template <typename Scalar>
Var<Scalar> tanh_(Var<Scalar> a) {
  Tape<Scalar>& t = *a.tape;
  Mat<Scalar> y = a.value().array().tanh();
  return t.emit(std::move(y), [a](Tape<Scalar>& t, int self) {
    const Mat<Scalar>& y = t.value(self);
    Mat<Scalar> d = t.grad(self).cwiseProduct((Scalar(1) - y.array().square()).matrix());
    detail::add_grad(t, a.id, d);
  });
}

template <typename Scalar>
Var<Scalar> exp_(Var<Scalar> a) {
  Tape<Scalar>& t = *a.tape;
  Mat<Scalar> y = a.value().array().exp();
  return t.emit(std::move(y), [a](Tape<Scalar>& t, int self) {
    detail::add_grad(t, a.id, Mat<Scalar>(t.grad(self).cwiseProduct(t.value(self))));
  });
}

// log(max(x, floor)); gradient is zero below the floor. The floor matches
// the probability clamp used in all loss terms.
template <typename Scalar>
Var<Scalar> log_clamped(Var<Scalar> a, Scalar floor = Scalar(1e-12)) {
  Tape<Scalar>& t = *a.tape;
  Mat<Scalar> y = a.value().unaryExpr([floor](Scalar x) {
    return std::log(x < floor ? floor : x);
  });
  return t.emit(std::move(y), [a, floor](Tape<Scalar>& t, int self) {
    const Mat<Scalar>& x = t.value(a.id);
    Mat<Scalar> d = t.grad(self).binaryExpr(x, [floor](Scalar g, Scalar xv) {
      return xv < floor ? Scalar(0) : g / xv;
    });
    detail::add_grad(t, a.id, d);
  });
}

// ---------------------------------------------------------------------------
// Structural operations.

template <typename Scalar>
Var<Scalar> concat_rows(std::span<const Var<Scalar>> parts) {
  detail::require(!parts.empty(), "concat_rows: empty input");
  Tape<Scalar>& t = *parts[0].tape;
  Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    detail::require(p.cols() == cols, "concat_rows: column mismatch");
    rows += p.rows();
  }
  Mat<Scalar> y(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    y.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  std::vector<Var<Scalar>> owned(parts.begin(), parts.end());
  return t.emit(std::move(y), [owned](Tape<Scalar>& t, int self) {
    const Mat<Scalar>& g = t.grad(self);
    Eigen::Index at = 0;
    for (const auto& p : owned) {
      Eigen::Index n = t.value(p.id).rows();
      if (t.needs_grad(p.id)) t.grad(p.id) += g.middleRows(at, n);
      at += n;
    }
  });
}

template <typename Scalar>
Var<Scalar> concat_rows(std::initializer_list<Var<Scalar>> parts) {
  std::vector<Var<Scalar>> v(parts);
  return concat_rows(std::span<const Var<Scalar>>(v));
}

template <typename Scalar>
Var<Scalar> concat_cols(std::span<const Var<Scalar>> parts) {
  detail::require(!parts.empty(), "concat_cols: empty input");
  Tape<Scalar>& t = *parts[0].tape;
  Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    detail::require(p.rows() == rows, "concat_cols: row mismatch");
    cols += p.cols();
  }
  Mat<Scalar> y(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    y.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  std::vector<Var<Scalar>> owned(parts.begin(), parts.end());
  return t.emit(std::move(y), [owned](Tape<Scalar>& t, int self) {
    const Mat<Scalar>& g = t.grad(self);
    Eigen::Index at = 0;
    for (const auto& p : owned) {
      Eigen::Index n = t.value(p.id).cols();
      if (t.needs_grad(p.id)) t.grad(p.id) += g.middleCols(at, n);
      at += n;
    }
  });
}

template <typename Scalar>
Var<Scalar> slice_rows(Var<Scalar> a, Eigen::Index first, Eigen::Index count) {
  detail::require(first >= 0 && count >= 1 && first + count <= a.rows(),
                  "slice_rows: range out of bounds");
  Tape<Scalar>& t = *a.tape;
  Mat<Scalar> y = a.value().middleRows(first, count);
  return t.emit(std::move(y), [a, first, count](Tape<Scalar>& t, int self) {
    if (t.needs_grad(a.id)) t.grad(a.id).middleRows(first, count) += t.grad(self);
  });
}

// Embedding lookup: row `index` of `table` as a column vector.
template <typename Scalar>
Var<Scalar> embedding_col(Var<Scalar> table, Eigen::Index index) {
  detail::require(index >= 0 && index < table.rows(), "embedding_col: index out of range");
  Tape<Scalar>& t = *table.tape;
  Mat<Scalar> y = table.value().row(index).transpose();
  return t.emit(std::move(y), [table, index](Tape<Scalar>& t, int self) {
    if (t.needs_grad(table.id)) {
      t.grad(table.id).row(index) += t.grad(self).transpose();
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions and losses.

template <typename Scalar>
Var<Scalar> sum_all(Var<Scalar> a) {
  Tape<Scalar>& t = *a.tape;
  Mat<Scalar> y(1, 1);
  y(0, 0) = a.value().sum();
  return t.emit(std::move(y), [a](Tape<Scalar>& t, int self) {
    if (t.needs_grad(a.id)) {
      t.grad(a.id).array() += t.grad(self)(0, 0);
    }
  });
}

template <typename Scalar>
Var<Scalar> dot(Var<Scalar> a, Var<Scalar> b) {
  detail::require(a.rows() == b.rows() && a.cols() == 1 && b.cols() == 1,
                  "dot: expects equal-length column vectors");
  Tape<Scalar>& t = *a.tape;
  Mat<Scalar> y(1, 1);
  y(0, 0) = a.value().col(0).dot(b.value().col(0));
  return t.emit(std::move(y), [a, b](Tape<Scalar>& t, int self) {
    Scalar g = t.grad(self)(0, 0);
    if (t.needs_grad(a.id)) t.grad(a.id) += g * t.value(b.id);
    if (t.needs_grad(b.id)) t.grad(b.id) += g * t.value(a.id);
  });
}

// Softmax over a column vector; shift-stabilized.
template <typename Scalar>
Var<Scalar> softmax_col(Var<Scalar> a) {
  detail::require(a.cols() == 1, "softmax_col: expects a column vector");
  Tape<Scalar>& t = *a.tape;
  Vec<Scalar> x = a.value().col(0);
  Scalar m = x.maxCoeff();
  Vec<Scalar> e = (x.array() - m).exp();
  Mat<Scalar> y = e / e.sum();
  return t.emit(std::move(y), [a](Tape<Scalar>& t, int self) {
    const Mat<Scalar>& y = t.value(self);
    const Mat<Scalar>& g = t.grad(self);
    Scalar gy = y.col(0).dot(g.col(0));
    Mat<Scalar> d = y.cwiseProduct((g.array() - gy).matrix());
    detail::add_grad(t, a.id, d);
  });
}

// -log softmax(logits)[target]; numerically stable fused form.
template <typename Scalar>
Var<Scalar> cross_entropy_logits(Var<Scalar> logits, Eigen::Index target) {
  detail::require(logits.cols() == 1, "cross_entropy_logits: expects a column vector");
  detail::require(target >= 0 && target < logits.rows(),
                  "cross_entropy_logits: target out of range");
  Tape<Scalar>& t = *logits.tape;
  Vec<Scalar> x = logits.value().col(0);
  Scalar m = x.maxCoeff();
  Scalar lse = m + std::log((x.array() - m).exp().sum());
  Mat<Scalar> y(1, 1);
  y(0, 0) = lse - x(target);
  return t.emit(std::move(y), [logits, target, lse](Tape<Scalar>& t, int self) {
    if (!t.needs_grad(logits.id)) return;
    Scalar g = t.grad(self)(0, 0);
    const Mat<Scalar>& x = t.value(logits.id);
    Mat<Scalar> p = (x.array() - lse).exp();
    p(target, 0) -= Scalar(1);
    t.grad(logits.id) += g * p;
  });
}

// Sum of cross-entropies of several targets against one logit vector:
// K * logsumexp(logits) - sum_k logits[target_k].
template <typename Scalar>
Var<Scalar> bag_cross_entropy_logits(Var<Scalar> logits, std::span<const int> targets) {
  detail::require(logits.cols() == 1, "bag_cross_entropy_logits: expects a column vector");
  detail::require(!targets.empty(), "bag_cross_entropy_logits: no targets");
  Tape<Scalar>& t = *logits.tape;
  Vec<Scalar> x = logits.value().col(0);
  Scalar m = x.maxCoeff();
  Scalar lse = m + std::log((x.array() - m).exp().sum());
  Scalar acc = 0;
  for (int id : targets) {
    detail::require(id >= 0 && id < x.size(), "bag_cross_entropy_logits: target out of range");
    acc += x(id);
  }
  Mat<Scalar> y(1, 1);
  y(0, 0) = Scalar(targets.size()) * lse - acc;
  std::vector<int> owned(targets.begin(), targets.end());
  return t.emit(std::move(y), [logits, owned, lse](Tape<Scalar>& t, int self) {
    if (!t.needs_grad(logits.id)) return;
    Scalar g = t.grad(self)(0, 0);
    const Mat<Scalar>& x = t.value(logits.id);
    Mat<Scalar> p = Scalar(owned.size()) * (x.array() - lse).exp();
    for (int id : owned) p(id, 0) -= Scalar(1);
    t.grad(logits.id) += g * p;
  });
}

// GRU state blend: h_prev + z .* (h_cand - h_prev).
template <typename Scalar>
Var<Scalar> gru_blend(Var<Scalar> update, Var<Scalar> h_prev, Var<Scalar> h_cand) {
  detail::require(update.rows() == h_prev.rows() && h_prev.rows() == h_cand.rows(),
                  "gru_blend: shape mismatch");
  Tape<Scalar>& t = *update.tape;
  Mat<Scalar> y = h_prev.value() +
                  update.value().cwiseProduct(h_cand.value() - h_prev.value());
  return t.emit(std::move(y), [update, h_prev, h_cand](Tape<Scalar>& t, int self) {
    const Mat<Scalar>& g = t.grad(self);
    const Mat<Scalar>& z = t.value(update.id);
    if (t.needs_grad(update.id)) {
      t.grad(update.id) += g.cwiseProduct(t.value(h_cand.id) - t.value(h_prev.id));
    }
    if (t.needs_grad(h_prev.id)) {
      t.grad(h_prev.id) += g.cwiseProduct((Scalar(1) - z.array()).matrix());
    }
    if (t.needs_grad(h_cand.id)) t.grad(h_cand.id) += g.cwiseProduct(z);
  });
}

template <typename Scalar>
Scalar scalar_value(Var<Scalar> v) {
  detail::require(v.value().size() == 1, "scalar_value: node is not scalar");
  return v.value()(0, 0);
}

// Mean of a set of equally shaped vectors (average pooling).
template <typename Scalar>
Var<Scalar> average(std::span<const Var<Scalar>> parts) {
  detail::require(!parts.empty(), "average: empty input");
  Var<Scalar> acc = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) acc = add(acc, parts[i]);
  return scale(acc, Scalar(1) / Scalar(parts.size()));
}

}  // namespace planwrite::compute
