#pragma once

// Named trainable parameters, Adam, and gradient clipping.
//
// Parameters are registered once at model construction in a fixed order;
// that order defines optimizer-state alignment and checkpoint layout.

#include "planwrite/compute/rng.hpp"
#include "planwrite/compute/tape.hpp"

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace planwrite::compute {

template <typename Scalar>
class ParameterStore {
 public:
  struct Parameter {
    std::string name;
    Mat<Scalar> value;
    Mat<Scalar> grad;
  };

  // Weight matrices start uniform in (-init_range, init_range).
  int add_weight(const std::string& name, Eigen::Index rows, Eigen::Index cols, Rng& rng,
                 double init_range = 0.08) {
    int id = add(name, rows, cols);
    Mat<Scalar>& v = params_[id].value;
    for (Eigen::Index c = 0; c < cols; ++c) {
      for (Eigen::Index r = 0; r < rows; ++r) {
        v(r, c) = static_cast<Scalar>(rng.uniform_range(-init_range, init_range));
      }
    }
    return id;
  }

  // Biases start at zero.
  int add_bias(const std::string& name, Eigen::Index rows) { return add(name, rows, 1); }

  Eigen::Index count() const { return static_cast<Eigen::Index>(params_.size()); }

  const Parameter& at(int id) const { return params_[id]; }
  Mat<Scalar>& value(int id) { return params_[id].value; }
  const Mat<Scalar>& value(int id) const { return params_[id].value; }
  Mat<Scalar>& grad(int id) { return params_[id].grad; }
  const std::string& name(int id) const { return params_[id].name; }

  int find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero();
  }

  void scale_grads(Scalar s) {
    for (auto& p : params_) p.grad *= s;
  }

  double grad_norm() const {
    double sq = 0;
    for (const auto& p : params_) sq += static_cast<double>(p.grad.squaredNorm());
    return std::sqrt(sq);
  }

  Eigen::Index total_size() const {
    Eigen::Index n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  std::vector<Mat<Scalar>> snapshot_values() const {
    std::vector<Mat<Scalar>> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.value);
    return out;
  }

  void restore_values(const std::vector<Mat<Scalar>>& values) {
    if (values.size() != params_.size()) {
      throw std::invalid_argument("parameter store: snapshot size mismatch");
    }
    for (std::size_t i = 0; i < values.size(); ++i) params_[i].value = values[i];
  }

  // Binds every parameter as a leaf Var; index-aligned with parameter ids.
  Var<Scalar> on_tape(Tape<Scalar>& tape, int id) {
    return tape.parameter(&params_[id].value, &params_[id].grad);
  }

 private:
  int add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    if (index_.count(name)) {
      throw std::invalid_argument("parameter store: duplicate name " + name);
    }
    Parameter p;
    p.name = name;
    p.value.setZero(rows, cols);
    p.grad.setZero(rows, cols);
    params_.push_back(std::move(p));
    int id = static_cast<int>(params_.size()) - 1;
    index_[name] = id;
    return id;
  }

  std::vector<Parameter> params_;
  std::unordered_map<std::string, int> index_;
};

// If the global gradient L2 norm exceeds `threshold`, rescale all gradients
// to that norm. Returns the pre-clip norm.
template <typename Scalar>
double clip_gradients(ParameterStore<Scalar>& store, double threshold) {
  double norm = store.grad_norm();
  if (norm > threshold && norm > 0) {
    store.scale_grads(static_cast<Scalar>(threshold / norm));
  }
  return norm;
}

template <typename Scalar>
struct AdamState {
  std::vector<Mat<Scalar>> m;
  std::vector<Mat<Scalar>> v;
  long step = 0;

  explicit AdamState(const ParameterStore<Scalar>& store) {
    m.reserve(store.count());
    v.reserve(store.count());
    for (int i = 0; i < store.count(); ++i) {
      const auto& val = store.value(i);
      m.emplace_back(Mat<Scalar>::Zero(val.rows(), val.cols()));
      v.emplace_back(Mat<Scalar>::Zero(val.rows(), val.cols()));
    }
  }
};

template <typename Scalar>
void adam_step(ParameterStore<Scalar>& store, AdamState<Scalar>& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
  state.step += 1;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (int i = 0; i < store.count(); ++i) {
    const Mat<Scalar>& g = store.grad(i);
    Mat<Scalar>& m = state.m[i];
    Mat<Scalar>& v = state.v[i];
    m = Scalar(beta1) * m + Scalar(1 - beta1) * g;
    v = Scalar(beta2) * v + Scalar(1 - beta2) * g.cwiseProduct(g);
    Mat<Scalar> m_hat = m / Scalar(bc1);
    Mat<Scalar> v_hat = v / Scalar(bc2);
    store.value(i) -=
        (Scalar(lr) * m_hat.array() / (v_hat.array().sqrt() + Scalar(eps))).matrix();
  }
}

}  // namespace planwrite::compute
