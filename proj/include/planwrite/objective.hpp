#pragma once

// Three-term training objective and the training loop.
//
//   L1 = word reconstruction + plan membership + kl_weight * (global KL + sum of local KLs)
//   L2 = stop-signal loss
//   L3 = per-sentence bag-of-words loss
//
// Training teacher-forces reference groups and reference sentences and draws
// every latent from its posterior; the KL weight follows the linear anneal.

#include "planwrite/latent.hpp"
#include "planwrite/model.hpp"
#include "planwrite/planner.hpp"
#include "planwrite/realizer.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace planwrite::objective {

using compute::Mat;
using compute::Var;

struct LossBreakdown {
  double reconstruction_nll = 0;
  double plan_membership_nll = 0;
  double kl_global = 0;
  double kl_local_sum = 0;
  double stop_nll = 0;   // L2
  double bow_nll = 0;    // L3
  double kl_weight = 0;
  double total = 0;

  double recomputed_total() const {
    return reconstruction_nll + plan_membership_nll +
           kl_weight * (kl_global + kl_local_sum) + stop_nll + bow_nll;
  }

  double elbo_plus_stop() const {
    // validation selection metric: L1 (kl_weight = 1) + L2
    return reconstruction_nll + plan_membership_nll + kl_global + kl_local_sum +
           stop_nll;
  }

  bool finite() const {
    return std::isfinite(total) && std::isfinite(reconstruction_nll) &&
           std::isfinite(plan_membership_nll) && std::isfinite(kl_global) &&
           std::isfinite(kl_local_sum) && std::isfinite(stop_nll) &&
           std::isfinite(bow_nll);
  }
};

template <typename Scalar>
struct LossGraph {
  Var<Scalar> reconstruction, plan_membership, kl_global, kl_local_sum, stop, bow;
  Var<Scalar> total;
  double kl_weight = 0;

  LossBreakdown values() const {
    LossBreakdown b;
    b.reconstruction_nll = static_cast<double>(compute::scalar_value(reconstruction));
    b.plan_membership_nll = static_cast<double>(compute::scalar_value(plan_membership));
    b.kl_global = static_cast<double>(compute::scalar_value(kl_global));
    b.kl_local_sum = static_cast<double>(compute::scalar_value(kl_local_sum));
    b.stop_nll = static_cast<double>(compute::scalar_value(stop));
    b.bow_nll = static_cast<double>(compute::scalar_value(bow));
    b.kl_weight = kl_weight;
    b.total = static_cast<double>(compute::scalar_value(total));
    return b;
  }
};

// Bag-of-words loss for one sentence: an MLP maps [h_s; z_s] to vocabulary
// logits and every reference word is scored against that single vector.
template <typename Scalar>
Var<Scalar> bow_loss(const model::Bound<Scalar>& b, Var<Scalar> sentence_state,
                     Var<Scalar> z_sentence, const std::vector<int>& tokens) {
  compute::detail::require(!tokens.empty(), "bow_loss: empty sentence");
  Var<Scalar> joined = compute::concat_rows<Scalar>({sentence_state, z_sentence});
  Var<Scalar> logits = compute::mlp_tanh(joined, b.bow_mlp);
  return compute::bag_cross_entropy_logits(logits, std::span<const int>(tokens));
}

// Builds the full loss graph for one record. Posterior noise is drawn from
// `rng` in a fixed order: the global latent first, then one draw per
// sentence, so a reseeded rng reproduces the loss exactly.
template <typename Scalar>
LossGraph<Scalar> loss_graph(model::Phvm<Scalar>& phvm, compute::Tape<Scalar>& tape,
                             const corpus::Record& record, double kl_weight,
                             compute::Rng& rng) {
  const model::ModelDims& dims = phvm.dims();
  compute::detail::require(!record.reference_plan.groups.empty(),
                           "loss_graph: record has no reference plan");
  compute::detail::require(
      record.reference_plan.groups.size() == record.sentences.size(),
      "loss_graph: plan length differs from sentence count");

  model::Bound<Scalar> b = phvm.bind(tape);
  model::InputEncoding<Scalar> enc = model::encode_input(b, tape, record, dims);
  Var<Scalar> zero_scalar = tape.constant(Mat<Scalar>::Zero(1, 1));

  // global latent from the posterior q(z_p | x, y)
  Var<Scalar> z_p;
  Var<Scalar> kl_g = zero_scalar;
  if (b.has_global) {
    std::vector<int> full_text;
    for (const auto& s : record.sentences) {
      full_text.insert(full_text.end(), s.begin(), s.end());
    }
    Var<Scalar> y_enc = model::encode_target(b, tape, full_text, dims);
    latent::DiagonalGaussian<Scalar> prior =
        latent::gaussian_from<Scalar>({enc.enc_x}, b.prior_global);
    latent::DiagonalGaussian<Scalar> posterior =
        latent::gaussian_from<Scalar>({enc.enc_x, y_enc}, b.post_global);
    latent::LatentSample<Scalar> s =
        latent::sample(posterior, rng, latent::LatentSource::posterior);
    z_p = s.z;
    kl_g = latent::kl(posterior, prior);
  } else {
    z_p = tape.constant(Mat<Scalar>::Zero(dims.latent, 1));
  }

  // supervised plan losses under teacher forcing
  planner::TeacherForcedPlan<Scalar> plan = planner::teacher_forced_plan(
      b, tape, enc, z_p, record.reference_plan, dims);

  // hierarchical realization over the reference sentences
  Var<Scalar> plan_enc = realizer::encode_plan(b, plan.group_bows);
  Var<Scalar> h_s = realizer::init_sentence_state(b, enc.enc_x, z_p, plan_enc);
  Var<Scalar> prev_z = tape.constant(Mat<Scalar>::Zero(dims.latent, 1));
  Var<Scalar> prev_word_final = tape.constant(Mat<Scalar>::Zero(dims.word_hidden, 1));

  std::vector<Var<Scalar>> recon_terms, kl_local_terms, bow_terms;
  for (std::size_t t = 0; t < record.sentences.size(); ++t) {
    const std::vector<int>& sentence = record.sentences[t];
    compute::detail::require(!sentence.empty(), "loss_graph: empty sentence");
    h_s = realizer::sentence_step(b, prev_z, prev_word_final, h_s);

    Var<Scalar> z_t;
    if (b.has_local) {
      Var<Scalar> s_enc = model::encode_target(b, tape, sentence, dims);
      latent::DiagonalGaussian<Scalar> prior =
          latent::gaussian_from<Scalar>({h_s, plan.group_bows[t]}, b.prior_local);
      latent::DiagonalGaussian<Scalar> posterior = latent::gaussian_from<Scalar>(
          {h_s, plan.group_bows[t], s_enc}, b.post_local);
      latent::LatentSample<Scalar> s =
          latent::sample(posterior, rng, latent::LatentSource::posterior);
      z_t = s.z;
      kl_local_terms.push_back(latent::kl(posterior, prior));
    } else {
      z_t = tape.constant(Mat<Scalar>::Zero(dims.latent, 1));
    }

    realizer::GroupAttention<Scalar> attn = realizer::group_attention(
        b, enc.item_reprs, record.reference_plan.groups[t]);
    realizer::TeacherForcedSentence<Scalar> word_pass =
        realizer::teacher_forced_sentence(b, attn, h_s, z_t, sentence);
    recon_terms.push_back(word_pass.nll);
    bow_terms.push_back(bow_loss(b, h_s, z_t, sentence));
    prev_z = z_t;
    prev_word_final = word_pass.final_state;
  }

  auto sum_terms = [&](std::vector<Var<Scalar>>& terms) -> Var<Scalar> {
    if (terms.empty()) return zero_scalar;
    if (terms.size() == 1) return terms[0];
    return compute::sum_all(
        compute::concat_rows(std::span<const Var<Scalar>>(terms)));
  };

  LossGraph<Scalar> out;
  out.kl_weight = kl_weight;
  out.reconstruction = sum_terms(recon_terms);
  out.plan_membership = plan.membership_nll;
  out.kl_global = kl_g;
  out.kl_local_sum = sum_terms(kl_local_terms);
  out.stop = plan.stop_nll;
  out.bow = sum_terms(bow_terms);
  Var<Scalar> weighted_kl = compute::scale(
      compute::add(out.kl_global, out.kl_local_sum), Scalar(kl_weight));
  out.total = compute::add(
      compute::add(out.reconstruction, out.plan_membership, weighted_kl),
      compute::add(out.stop, out.bow));
  return out;
}

struct TrainConfig {
  int batch_size = 32;
  double learning_rate = 0.001;
  double clip_norm = 5.0;
  long anneal_steps = 0;  // 0 = one epoch's step count
  int epochs = 10;
  std::uint64_t seed = 1;
  std::uint64_t eval_seed = 0xe7a1;
};

struct TrainingError : std::runtime_error {
  long step;
  LossBreakdown breakdown;
  TrainingError(long step_, const LossBreakdown& b, const std::string& what)
      : std::runtime_error(what), step(step_), breakdown(b) {}
};

template <typename Scalar>
struct TrainResult {
  std::vector<Mat<Scalar>> best_values;
  double best_validation = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  double final_validation = std::numeric_limits<double>::infinity();
  long steps = 0;
  std::vector<std::string> log_rows;  // tab-separated, one per optimizer step
};

inline std::string log_header() {
  return "# step\treconstruction_nll\tplan_membership_nll\tkl_global\tkl_local_sum\t"
         "stop_nll\tbow_nll\tkl_weight\ttotal";
}

// Mean validation L1+L2 per record, with kl_weight 1 and noise reseeded per
// record from eval_seed so the metric is stable across epochs.
template <typename Scalar>
double validation_loss(model::Phvm<Scalar>& phvm, const std::vector<corpus::Record>& valid,
                       std::uint64_t eval_seed) {
  if (valid.empty()) return 0;
  compute::Tape<Scalar> tape;
  double sum = 0;
  for (std::size_t i = 0; i < valid.size(); ++i) {
    tape.reset();
    compute::Rng rng(compute::derive_seed(eval_seed, i, 0));
    LossGraph<Scalar> g = loss_graph(phvm, tape, valid[i], 1.0, rng);
    sum += g.values().elbo_plus_stop();
  }
  return sum / static_cast<double>(valid.size());
}

// Minibatch training with KL annealing, gradient clipping, Adam, and
// epoch-level validation; returns the argmin-validation parameter snapshot.
// Throws TrainingError on a non-finite loss.
template <typename Scalar>
TrainResult<Scalar> train(model::Phvm<Scalar>& phvm,
                          const std::vector<corpus::Record>& corpus,
                          const std::vector<corpus::Record>& valid,
                          const TrainConfig& cfg,
                          const std::function<void(int epoch, double val)>& on_epoch = {}) {
  compute::detail::require(!corpus.empty(), "train: empty corpus");
  auto& store = phvm.store();
  compute::AdamState<Scalar> adam(store);
  compute::Rng rng(cfg.seed);

  const long steps_per_epoch =
      (static_cast<long>(corpus.size()) + cfg.batch_size - 1) / cfg.batch_size;
  latent::AnnealSchedule schedule{cfg.anneal_steps > 0 ? cfg.anneal_steps
                                                       : steps_per_epoch};

  TrainResult<Scalar> result;
  result.log_rows.push_back(log_header());
  compute::Tape<Scalar> tape;
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  long step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates shuffle driven by the training rng
    for (std::size_t i = order.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(rng.below(i));
      std::swap(order[i - 1], order[j]);
    }
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      double kl_w = latent::anneal_weight(step, schedule);
      store.zero_grad();
      LossBreakdown mean;
      for (std::size_t i = start; i < end; ++i) {
        tape.reset();
        LossGraph<Scalar> g = loss_graph(phvm, tape, corpus[order[i]], kl_w, rng);
        LossBreakdown values = g.values();
        if (!values.finite()) {
          throw TrainingError(step, values, "train: non-finite loss at step " +
                                                std::to_string(step));
        }
        tape.backward(g.total);
        mean.reconstruction_nll += values.reconstruction_nll;
        mean.plan_membership_nll += values.plan_membership_nll;
        mean.kl_global += values.kl_global;
        mean.kl_local_sum += values.kl_local_sum;
        mean.stop_nll += values.stop_nll;
        mean.bow_nll += values.bow_nll;
        mean.total += values.total;
      }
      double inv = 1.0 / static_cast<double>(end - start);
      mean.reconstruction_nll *= inv;
      mean.plan_membership_nll *= inv;
      mean.kl_global *= inv;
      mean.kl_local_sum *= inv;
      mean.stop_nll *= inv;
      mean.bow_nll *= inv;
      mean.total *= inv;
      mean.kl_weight = kl_w;

      store.scale_grads(static_cast<Scalar>(inv));
      compute::clip_gradients(store, cfg.clip_norm);
      compute::adam_step(store, adam, cfg.learning_rate);

      std::ostringstream row;
      row << step << '\t' << mean.reconstruction_nll << '\t' << mean.plan_membership_nll
          << '\t' << mean.kl_global << '\t' << mean.kl_local_sum << '\t' << mean.stop_nll
          << '\t' << mean.bow_nll << '\t' << mean.kl_weight << '\t' << mean.total;
      result.log_rows.push_back(row.str());
      ++step;
    }

    double val = validation_loss(phvm, valid, cfg.eval_seed);
    result.final_validation = val;
    if (val < result.best_validation) {
      result.best_validation = val;
      result.best_epoch = epoch;
      result.best_values = store.snapshot_values();
    }
    if (on_epoch) on_epoch(epoch, val);
  }
  result.steps = step;
  if (result.best_values.empty()) result.best_values = store.snapshot_values();
  return result;
}

}  // namespace planwrite::objective
