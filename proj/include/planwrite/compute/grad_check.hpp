#pragma once

// Finite-difference gradient verification.
//
// The loss callable must be a deterministic pure function of the parameter
// store (fix any sampling noise before calling). Relative error per
// coordinate is |analytic - numeric| / max(|analytic| + |numeric|, 1e-2);
// the floor keeps finite-difference noise on near-zero coordinates from
// dominating the report while still flagging any structural gradient bug.

#include "planwrite/compute/params.hpp"
#include "planwrite/compute/rng.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>

namespace planwrite::compute {

struct GradCheckReport {
  double max_rel_error = 0;
  long coords_checked = 0;
  std::string worst_param;
};

// `loss(with_grad)` rebuilds the forward graph, returns the loss value, and
// when with_grad is set also accumulates analytic gradients into the store.
template <typename Scalar>
GradCheckReport grad_check(ParameterStore<Scalar>& store,
                           const std::function<double(bool with_grad)>& loss,
                           double epsilon, long max_coords_per_param, Rng& rng) {
  static_assert(sizeof(Scalar) == 8, "grad_check requires 64-bit mode");
  store.zero_grad();
  double base = loss(true);
  if (!std::isfinite(base)) {
    throw std::runtime_error("grad_check: non-finite loss");
  }
  std::vector<Mat<Scalar>> analytic;
  analytic.reserve(store.count());
  for (int i = 0; i < store.count(); ++i) analytic.push_back(store.grad(i));

  GradCheckReport report;
  for (int p = 0; p < store.count(); ++p) {
    Mat<Scalar>& value = store.value(p);
    const Eigen::Index n = value.size();
    const long coords = std::min<long>(n, max_coords_per_param);
    for (long k = 0; k < coords; ++k) {
      Eigen::Index idx =
          coords == n ? k : static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
      Scalar saved = value.data()[idx];
      value.data()[idx] = saved + static_cast<Scalar>(epsilon);
      double up = loss(false);
      value.data()[idx] = saved - static_cast<Scalar>(epsilon);
      double down = loss(false);
      value.data()[idx] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw std::runtime_error("grad_check: non-finite loss under perturbation");
      }
      double numeric = (up - down) / (2.0 * epsilon);
      double a = static_cast<double>(analytic[p].data()[idx]);
      double rel = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1e-2);
      report.coords_checked += 1;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = store.name(p);
      }
    }
  }
  return report;
}

}  // namespace planwrite::compute
