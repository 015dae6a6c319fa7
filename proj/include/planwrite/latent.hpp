#pragma once

// Diagonal-Gaussian latent machinery: MLP-parameterized distributions,
// reparameterized sampling, closed-form KL, and the linear KL anneal.

#include "planwrite/compute/rng.hpp"
#include "planwrite/compute/rnn.hpp"
#include "planwrite/compute/tape.hpp"

#include <algorithm>
#include <span>
#include <vector>

namespace planwrite::latent {

using compute::Mat;
using compute::Var;
using compute::Vec;

template <typename Scalar>
struct DiagonalGaussian {
  Var<Scalar> mu;
  Var<Scalar> log_var;

  Eigen::Index dim() const { return mu.rows(); }
};

enum class LatentSource { prior, posterior };

template <typename Scalar>
struct LatentSample {
  Var<Scalar> z;
  Vec<Scalar> eps;
  LatentSource source = LatentSource::prior;
};

// Concatenates the conditioning inputs, applies a tanh MLP, and splits the
// linear output into [mu; log_var].
template <typename Scalar>
DiagonalGaussian<Scalar> gaussian_from(std::span<const Var<Scalar>> inputs,
                                       const compute::MlpWeights<Scalar>& mlp) {
  compute::detail::require(!inputs.empty(), "gaussian_from: no inputs");
  Var<Scalar> joined = inputs.size() == 1 ? inputs[0] : compute::concat_rows(inputs);
  Var<Scalar> out = compute::mlp_tanh(joined, mlp);
  compute::detail::require(out.rows() % 2 == 0, "gaussian_from: odd output width");
  Eigen::Index d = out.rows() / 2;
  return {compute::slice_rows(out, 0, d), compute::slice_rows(out, d, d)};
}

template <typename Scalar>
DiagonalGaussian<Scalar> gaussian_from(std::initializer_list<Var<Scalar>> inputs,
                                       const compute::MlpWeights<Scalar>& mlp) {
  std::vector<Var<Scalar>> v(inputs);
  return gaussian_from(std::span<const Var<Scalar>>(v), mlp);
}

// Reparameterized draw with explicit noise: z = mu + exp(0.5 log_var) .* eps.
// Gradient flows into mu and log_var; eps is a constant.
template <typename Scalar>
LatentSample<Scalar> sample_with_eps(const DiagonalGaussian<Scalar>& dist,
                                     const Vec<Scalar>& eps, LatentSource source) {
  compute::detail::require(eps.rows() == dist.dim(), "sample: eps dimension mismatch");
  compute::Tape<Scalar>& tape = *dist.mu.tape;
  Var<Scalar> std_dev = compute::exp_(compute::scale(dist.log_var, Scalar(0.5)));
  Var<Scalar> noise = tape.constant(Mat<Scalar>(eps));
  Var<Scalar> z = compute::add(dist.mu, compute::cwise_mul(std_dev, noise));
  return {z, eps, source};
}

template <typename Scalar>
LatentSample<Scalar> sample(const DiagonalGaussian<Scalar>& dist, compute::Rng& rng,
                            LatentSource source) {
  return sample_with_eps(dist, rng.template gaussian_vector<Scalar>(dist.dim()), source);
}

// KL(q || p) for diagonal Gaussians, summed over dimensions:
//   0.5 * sum_i [ log s2p/s2q + (s2q + (mq - mp)^2) / s2p - 1 ]
template <typename Scalar>
Var<Scalar> kl(const DiagonalGaussian<Scalar>& q, const DiagonalGaussian<Scalar>& p) {
  compute::detail::require(q.dim() == p.dim(), "kl: dimension mismatch");
  Var<Scalar> diff = compute::sub(q.mu, p.mu);
  Var<Scalar> var_q = compute::exp_(q.log_var);
  Var<Scalar> inv_var_p = compute::exp_(compute::neg(p.log_var));
  Var<Scalar> ratio =
      compute::cwise_mul(compute::add(var_q, compute::cwise_mul(diff, diff)), inv_var_p);
  Var<Scalar> inner = compute::add(compute::sub(p.log_var, q.log_var), ratio);
  Var<Scalar> summed = compute::sum_all(inner);
  return compute::scale(compute::add_scalar(summed, -Scalar(q.dim())), Scalar(0.5));
}

struct AnnealSchedule {
  long total_anneal_steps = 1;
};

// Linear ramp from 0 to 1 over total_anneal_steps, clamped at 1.
inline double anneal_weight(long step, const AnnealSchedule& schedule) {
  if (step < 0) throw std::invalid_argument("anneal_weight: negative step");
  if (schedule.total_anneal_steps < 1) {
    throw std::invalid_argument("anneal_weight: schedule needs >= 1 step");
  }
  return std::min(1.0, static_cast<double>(step) /
                           static_cast<double>(schedule.total_anneal_steps));
}

}  // namespace planwrite::latent
