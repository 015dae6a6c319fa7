#pragma once

// Plan decoding: conditioned on enc(x) and the global latent, emit a
// sequence of item groups with a stop signal. Training is fully supervised
// against reference plans with teacher forcing.

#include "planwrite/latent.hpp"
#include "planwrite/model.hpp"

#include <algorithm>
#include <vector>

namespace planwrite::planner {

using compute::Mat;
using compute::Var;
using compute::Vec;

struct Group {
  // Ascending indices into the item list; the value N (= item count) is the
  // NONE tag and may only appear as a singleton in reference plans.
  std::vector<int> item_indices;
};

struct Plan {
  std::vector<Group> groups;
  std::vector<double> stop_probs;

  bool operator==(const Plan& other) const {
    if (groups.size() != other.groups.size()) return false;
    for (std::size_t i = 0; i < groups.size(); ++i) {
      if (groups[i].item_indices != other.groups[i].item_indices) return false;
    }
    return true;
  }
};

// Average pooling of the group's item vectors.
template <typename Scalar>
Var<Scalar> bow(const std::vector<Var<Scalar>>& item_reprs,
                const std::vector<int>& group) {
  compute::detail::require(!group.empty(), "bow: empty group");
  std::vector<Var<Scalar>> members;
  members.reserve(group.size());
  for (int idx : group) {
    compute::detail::require(idx >= 0 && idx < static_cast<int>(item_reprs.size()),
                             "bow: index out of range");
    members.push_back(item_reprs[idx]);
  }
  return compute::average<Scalar>(members);
}

// h0 = tanh(W [enc(x); z_p] + b)
template <typename Scalar>
Var<Scalar> init_plan_state(const model::Bound<Scalar>& b, Var<Scalar> enc_x,
                            Var<Scalar> z_p) {
  Var<Scalar> joined = compute::concat_rows<Scalar>({enc_x, z_p});
  return compute::tanh_(compute::add(compute::matmul(b.plan_init_W, joined),
                                     b.plan_init_b));
}

// First-step input: the latent in its slot, zero in the group slot.
template <typename Scalar>
Var<Scalar> first_plan_input(compute::Tape<Scalar>& tape, Var<Scalar> z_p,
                             const model::ModelDims& dims) {
  Var<Scalar> zero = tape.constant(Mat<Scalar>::Zero(dims.item_repr(), 1));
  return compute::concat_rows<Scalar>({z_p, zero});
}

// Later-step input: zero in the latent slot, bow(g) in the group slot.
template <typename Scalar>
Var<Scalar> group_plan_input(compute::Tape<Scalar>& tape, Var<Scalar> group_bow,
                             const model::ModelDims& dims) {
  Var<Scalar> zero = tape.constant(Mat<Scalar>::Zero(dims.latent, 1));
  return compute::concat_rows<Scalar>({zero, group_bow});
}

template <typename Scalar>
Var<Scalar> plan_step(const model::Bound<Scalar>& b, Var<Scalar> input,
                      Var<Scalar> state) {
  return compute::gru_cell(input, state, b.plan_rnn);
}

// P(d_i in g_t) = sigmoid(v' tanh(W [h_i; h_t] + b)) for every item plus the
// NONE entry; returned stacked as one column.
template <typename Scalar>
Var<Scalar> membership_probs(const model::Bound<Scalar>& b,
                             const std::vector<Var<Scalar>>& item_reprs,
                             Var<Scalar> plan_state) {
  compute::detail::require(!item_reprs.empty(), "membership_probs: no items");
  std::vector<Var<Scalar>> logits;
  logits.reserve(item_reprs.size());
  for (const auto& h : item_reprs) {
    Var<Scalar> joined = compute::concat_rows<Scalar>({h, plan_state});
    Var<Scalar> hidden =
        compute::tanh_(compute::add(compute::matmul(b.memb_W, joined), b.memb_b));
    logits.push_back(compute::dot(b.memb_v, hidden));
  }
  return compute::sigmoid(compute::concat_rows<Scalar>(logits));
}

// Members are entries with probability strictly above 0.5; an empty
// selection falls back to the argmax (ties resolve to the lowest index).
template <typename Scalar>
Group form_group(const Vec<Scalar>& probs) {
  compute::detail::require(probs.size() > 0, "form_group: empty probabilities");
  Group g;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    if (probs(i) > Scalar(0.5)) g.item_indices.push_back(static_cast<int>(i));
  }
  if (g.item_indices.empty()) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < probs.size(); ++i) {
      if (probs(i) > probs(best)) best = i;
    }
    g.item_indices.push_back(static_cast<int>(best));
  }
  return g;
}

// P(stop | h_t) = sigmoid(W h_t + b)
template <typename Scalar>
Var<Scalar> stop_prob(const model::Bound<Scalar>& b, Var<Scalar> plan_state) {
  return compute::sigmoid(compute::add(compute::matmul(b.stop_W, plan_state), b.stop_b));
}

// Greedy plan decoding: membership -> group -> stop test -> feed bow.
// Decoding stops when stop probability exceeds 0.5 or at max_steps; every
// emitted group is non-empty.
template <typename Scalar>
Plan decode_plan(const model::Bound<Scalar>& b, compute::Tape<Scalar>& tape,
                 const model::InputEncoding<Scalar>& enc, Var<Scalar> z_p,
                 const model::ModelDims& dims, int max_steps) {
  compute::detail::require(max_steps >= 1, "decode_plan: max_steps must be >= 1");
  Plan plan;
  Var<Scalar> state = init_plan_state(b, enc.enc_x, z_p);
  Var<Scalar> input = first_plan_input(tape, z_p, dims);
  for (int t = 0; t < max_steps; ++t) {
    state = plan_step(b, input, state);
    Var<Scalar> probs = membership_probs(b, enc.item_reprs, state);
    Group group = form_group<Scalar>(probs.value().col(0));
    Var<Scalar> group_bow = bow(enc.item_reprs, group.item_indices);
    plan.groups.push_back(std::move(group));
    double p_stop = static_cast<double>(compute::scalar_value(stop_prob(b, state)));
    plan.stop_probs.push_back(p_stop);
    if (p_stop > 0.5) break;
    input = group_plan_input(tape, group_bow, dims);
  }
  return plan;
}

// One step of the supervised membership loss:
//   -[ sum_{i in ref} log p_i + sum_{i not in ref} log(1 - p_i) ]
// with probabilities clamped at 1e-12 inside the logs.
template <typename Scalar>
Var<Scalar> membership_nll_step(compute::Tape<Scalar>& tape, Var<Scalar> probs,
                                const std::vector<int>& reference_group) {
  const Eigen::Index n = probs.rows();
  Mat<Scalar> member_mask = Mat<Scalar>::Zero(n, 1);
  for (int idx : reference_group) {
    compute::detail::require(idx >= 0 && idx < n,
                             "membership_nll_step: reference index out of range");
    member_mask(idx, 0) = Scalar(1);
  }
  Mat<Scalar> other_mask = Mat<Scalar>::Ones(n, 1) - member_mask;
  Var<Scalar> log_p = compute::log_clamped(probs);
  Var<Scalar> log_not_p =
      compute::log_clamped(compute::add_scalar(compute::neg(probs), Scalar(1)));
  Var<Scalar> inside = compute::dot(tape.constant(member_mask), log_p);
  Var<Scalar> outside = compute::dot(tape.constant(other_mask), log_not_p);
  return compute::neg(compute::add(inside, outside));
}

// Stop loss over a teacher-forced horizon of T steps: every step but the
// last should continue (low stop probability), the last should stop:
//   -[ sum_{t<T} log(1 - p_t) + log p_T ]
template <typename Scalar>
Var<Scalar> stop_nll(compute::Tape<Scalar>& tape,
                     const std::vector<Var<Scalar>>& stop_probs) {
  compute::detail::require(!stop_probs.empty(), "stop_nll: no steps");
  std::vector<Var<Scalar>> terms;
  terms.reserve(stop_probs.size());
  for (std::size_t t = 0; t < stop_probs.size(); ++t) {
    if (t + 1 == stop_probs.size()) {
      terms.push_back(compute::neg(compute::log_clamped(stop_probs[t])));
    } else {
      terms.push_back(compute::neg(compute::log_clamped(
          compute::add_scalar(compute::neg(stop_probs[t]), Scalar(1)))));
    }
  }
  if (terms.size() == 1) return terms[0];
  return compute::sum_all(
      compute::concat_rows(std::span<const Var<Scalar>>(terms)));
}

template <typename Scalar>
struct TeacherForcedPlan {
  Var<Scalar> membership_nll;
  Var<Scalar> stop_nll;
  std::vector<Var<Scalar>> group_bows;  // bow(reference group t), reused downstream
};

// Runs the plan decoder over the reference plan (teacher forcing) and
// accumulates the two supervised losses:
//   membership: -sum_t [ sum_{i in g~_t} log p_i + sum_{i not in g~_t} log(1-p_i) ]
//   stop:       -[ sum_{t<T} log(1 - p_stop_t) + log p_stop_T ]
template <typename Scalar>
TeacherForcedPlan<Scalar> teacher_forced_plan(const model::Bound<Scalar>& b,
                                              compute::Tape<Scalar>& tape,
                                              const model::InputEncoding<Scalar>& enc,
                                              Var<Scalar> z_p,
                                              const corpus::ReferencePlan& reference,
                                              const model::ModelDims& dims) {
  compute::detail::require(!reference.groups.empty(), "teacher_forced_plan: empty plan");
  const std::size_t horizon = reference.groups.size();

  TeacherForcedPlan<Scalar> out;
  Var<Scalar> state = init_plan_state(b, enc.enc_x, z_p);
  Var<Scalar> input = first_plan_input(tape, z_p, dims);
  std::vector<Var<Scalar>> membership_terms;
  std::vector<Var<Scalar>> step_stop_probs;
  for (std::size_t t = 0; t < horizon; ++t) {
    state = plan_step(b, input, state);
    Var<Scalar> probs = membership_probs(b, enc.item_reprs, state);
    membership_terms.push_back(membership_nll_step(tape, probs, reference.groups[t]));
    step_stop_probs.push_back(stop_prob(b, state));

    Var<Scalar> group_bow = bow(enc.item_reprs, reference.groups[t]);
    out.group_bows.push_back(group_bow);
    if (t + 1 < horizon) input = group_plan_input(tape, group_bow, dims);
  }

  out.membership_nll = membership_terms.size() == 1
                           ? membership_terms[0]
                           : compute::sum_all(compute::concat_rows<Scalar>(
                                 std::span<const Var<Scalar>>(membership_terms)));
  out.stop_nll = stop_nll(tape, step_stop_probs);
  return out;
}

}  // namespace planwrite::planner
