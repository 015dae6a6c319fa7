#pragma once

// Hierarchical realization: plan encoder, sentence-level decoder with
// chained local latents, and word-level decoder with additive attention
// restricted to the active group's items.

#include "planwrite/latent.hpp"
#include "planwrite/model.hpp"
#include "planwrite/planner.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace planwrite::realizer {

using compute::Mat;
using compute::Var;
using compute::Vec;

enum class DecodeMode { greedy, sample };

// Final state of a recurrent pass over bow(g_1)...bow(g_T).
template <typename Scalar>
Var<Scalar> encode_plan(const model::Bound<Scalar>& b,
                        const std::vector<Var<Scalar>>& group_bows) {
  compute::detail::require(!group_bows.empty(), "encode_plan: empty plan");
  auto states = compute::run_gru<Scalar>(group_bows, b.plan_enc_rnn);
  return states.back();
}

// h0_s = W [enc(x); z_p; h_g] + b, linear.
template <typename Scalar>
Var<Scalar> init_sentence_state(const model::Bound<Scalar>& b, Var<Scalar> enc_x,
                                Var<Scalar> z_p, Var<Scalar> plan_encoding) {
  Var<Scalar> joined = compute::concat_rows<Scalar>({enc_x, z_p, plan_encoding});
  return compute::add(compute::matmul(b.sent_init_W, joined), b.sent_init_b);
}

// h_t_s = GRU([z_prev; word_final_prev], h_prev); both inputs are zero at t=1.
template <typename Scalar>
Var<Scalar> sentence_step(const model::Bound<Scalar>& b, Var<Scalar> z_prev,
                          Var<Scalar> word_final_prev, Var<Scalar> h_prev) {
  Var<Scalar> input = compute::concat_rows<Scalar>({z_prev, word_final_prev});
  return compute::gru_cell(input, h_prev, b.sent_rnn);
}

// Attention scaffolding for one sentence: item vectors of the active group,
// their projected keys, and the stacked matrix used to form contexts.
template <typename Scalar>
struct GroupAttention {
  std::vector<Var<Scalar>> keys;  // W h_i, one per group member
  Var<Scalar> members;            // (item_repr, k) stack of member vectors
};

template <typename Scalar>
GroupAttention<Scalar> group_attention(const model::Bound<Scalar>& b,
                                       const std::vector<Var<Scalar>>& item_reprs,
                                       const std::vector<int>& group) {
  compute::detail::require(!group.empty(), "group_attention: empty group");
  GroupAttention<Scalar> g;
  std::vector<Var<Scalar>> members;
  for (int idx : group) {
    compute::detail::require(idx >= 0 && idx < static_cast<int>(item_reprs.size()),
                             "group_attention: index out of range");
    members.push_back(item_reprs[idx]);
    g.keys.push_back(compute::matmul(b.attn_W, item_reprs[idx]));
  }
  g.members = members.size() == 1
                  ? members[0]
                  : compute::concat_cols(std::span<const Var<Scalar>>(members));
  return g;
}

template <typename Scalar>
struct AttentionResult {
  Var<Scalar> context;  // (item_repr, 1)
  Var<Scalar> weights;  // (k, 1), sums to 1
};

// score_i = v' tanh(W h_i + U h_w + b); weights = softmax(scores).
template <typename Scalar>
AttentionResult<Scalar> attend(const model::Bound<Scalar>& b,
                               const GroupAttention<Scalar>& g, Var<Scalar> word_state) {
  Var<Scalar> query = compute::add(compute::matmul(b.attn_U, word_state), b.attn_b);
  std::vector<Var<Scalar>> scores;
  scores.reserve(g.keys.size());
  for (const auto& key : g.keys) {
    scores.push_back(compute::dot(b.attn_v, compute::tanh_(compute::add(key, query))));
  }
  Var<Scalar> weights = compute::softmax_col(
      scores.size() == 1 ? scores[0]
                         : compute::concat_rows(std::span<const Var<Scalar>>(scores)));
  if (scores.size() == 1) {
    // softmax over one score is exactly 1; context is the single member
    return {g.members, weights};
  }
  return {compute::matmul(g.members, weights), weights};
}

// Word decoder initial state: tanh(W [h_s; z_s] + b).
template <typename Scalar>
Var<Scalar> init_word_state(const model::Bound<Scalar>& b, Var<Scalar> sentence_state,
                            Var<Scalar> z_sentence) {
  Var<Scalar> joined = compute::concat_rows<Scalar>({sentence_state, z_sentence});
  return compute::tanh_(compute::add(compute::matmul(b.word_init_W, joined),
                                     b.word_init_b));
}

template <typename Scalar>
struct WordStep {
  Var<Scalar> state;
  Var<Scalar> logits;
  Var<Scalar> attn_weights;
};

template <typename Scalar>
WordStep<Scalar> word_step(const model::Bound<Scalar>& b,
                           const GroupAttention<Scalar>& attn, Var<Scalar> state,
                           int prev_token) {
  AttentionResult<Scalar> a = attend(b, attn, state);
  Var<Scalar> emb = compute::embedding_col(b.word_emb, prev_token);
  Var<Scalar> input = compute::concat_rows<Scalar>({emb, a.context});
  Var<Scalar> next = compute::gru_cell(input, state, b.word_rnn);
  Var<Scalar> logits = compute::add(compute::matmul(b.out_W, next), b.out_b);
  return {next, logits, a.weights};
}

template <typename Scalar>
struct TeacherForcedSentence {
  Var<Scalar> nll;          // sum of word cross-entropies incl. the EOS step
  Var<Scalar> final_state;  // word-decoder state after the EOS step
};

// Teacher-forced word pass over one reference sentence: inputs are
// BOS, w_1..w_M; targets are w_1..w_M, EOS.
template <typename Scalar>
TeacherForcedSentence<Scalar> teacher_forced_sentence(
    const model::Bound<Scalar>& b, const GroupAttention<Scalar>& attn,
    Var<Scalar> sentence_state, Var<Scalar> z_sentence, const std::vector<int>& tokens) {
  compute::detail::require(!tokens.empty(), "teacher_forced_sentence: empty sentence");
  Var<Scalar> state = init_word_state(b, sentence_state, z_sentence);
  std::vector<Var<Scalar>> terms;
  int prev = corpus::Vocabulary::kBos;
  for (std::size_t k = 0; k <= tokens.size(); ++k) {
    int target = k < tokens.size() ? tokens[k] : corpus::Vocabulary::kEos;
    WordStep<Scalar> step = word_step(b, attn, state, prev);
    state = step.state;
    terms.push_back(compute::cross_entropy_logits(step.logits, target));
    prev = target;
  }
  Var<Scalar> nll = terms.size() == 1
                        ? terms[0]
                        : compute::sum_all(compute::concat_rows(
                              std::span<const Var<Scalar>>(terms)));
  return {nll, state};
}

template <typename Scalar>
struct DecodedSentence {
  std::vector<int> tokens;  // content tokens, EOS excluded
  Var<Scalar> final_state;
};

// Free-running word decoding until EOS or max_len. Greedy mode takes the
// argmax (ties to the lowest id); sample mode draws from the softmax.
// PAD, BOS, and NONE are never emitted.
template <typename Scalar>
DecodedSentence<Scalar> decode_sentence(const model::Bound<Scalar>& b,
                                        const GroupAttention<Scalar>& attn,
                                        Var<Scalar> sentence_state,
                                        Var<Scalar> z_sentence, DecodeMode mode,
                                        int max_len, compute::Rng& rng) {
  DecodedSentence<Scalar> out;
  Var<Scalar> state = init_word_state(b, sentence_state, z_sentence);
  int prev = corpus::Vocabulary::kBos;
  for (int k = 0; k < max_len; ++k) {
    WordStep<Scalar> step = word_step(b, attn, state, prev);
    state = step.state;
    Vec<Scalar> logits = step.logits.value().col(0);
    logits(corpus::Vocabulary::kPad) = -std::numeric_limits<Scalar>::infinity();
    logits(corpus::Vocabulary::kBos) = -std::numeric_limits<Scalar>::infinity();
    logits(corpus::Vocabulary::kNone) = -std::numeric_limits<Scalar>::infinity();
    int token;
    if (mode == DecodeMode::greedy) {
      Eigen::Index best = 0;
      for (Eigen::Index i = 1; i < logits.size(); ++i) {
        if (logits(i) > logits(best)) best = i;
      }
      token = static_cast<int>(best);
    } else {
      Scalar m = logits.maxCoeff();
      Vec<Scalar> probs = (logits.array() - m).exp();
      probs /= probs.sum();
      double u = rng.uniform();
      double acc = 0;
      token = static_cast<int>(probs.size()) - 1;
      for (Eigen::Index i = 0; i < probs.size(); ++i) {
        acc += static_cast<double>(probs(i));
        if (u < acc) {
          token = static_cast<int>(i);
          break;
        }
      }
    }
    if (token == corpus::Vocabulary::kEos) break;
    out.tokens.push_back(token);
    prev = token;
  }
  out.final_state = state;
  return out;
}

struct LatentTrace {
  latent::LatentSource source = latent::LatentSource::prior;
  Eigen::VectorXd z;
};

struct GenerationOutput {
  planner::Plan plan;
  std::vector<std::vector<int>> sentences;
  LatentTrace global;
  std::vector<LatentTrace> locals;  // one per sentence
  std::uint64_t seed = 0;
};

// Full pipeline on a frozen model: encode, sample z_p from its prior,
// decode the plan, then realize sentence by sentence with local latents
// drawn from their priors. Deterministic given the rng seed.
template <typename Scalar>
GenerationOutput generate(model::Phvm<Scalar>& phvm, const corpus::Record& record,
                          compute::Rng& rng, DecodeMode mode) {
  const model::ModelDims& dims = phvm.dims();
  compute::Tape<Scalar> tape;
  model::Bound<Scalar> b = phvm.bind(tape);
  model::InputEncoding<Scalar> enc = model::encode_input(b, tape, record, dims);

  GenerationOutput out;
  Var<Scalar> z_p;
  if (b.has_global) {
    latent::DiagonalGaussian<Scalar> prior =
        latent::gaussian_from<Scalar>({enc.enc_x}, b.prior_global);
    latent::LatentSample<Scalar> s = latent::sample(prior, rng, latent::LatentSource::prior);
    z_p = s.z;
  } else {
    z_p = tape.constant(Mat<Scalar>::Zero(dims.latent, 1));
  }
  out.global.source = latent::LatentSource::prior;
  out.global.z = z_p.value().col(0).template cast<double>();

  out.plan = planner::decode_plan(b, tape, enc, z_p, dims, dims.max_plan_steps);

  std::vector<Var<Scalar>> bows;
  bows.reserve(out.plan.groups.size());
  for (const auto& g : out.plan.groups) {
    bows.push_back(planner::bow(enc.item_reprs, g.item_indices));
  }
  Var<Scalar> plan_enc = encode_plan(b, bows);
  Var<Scalar> h_s = init_sentence_state(b, enc.enc_x, z_p, plan_enc);
  Var<Scalar> prev_z = tape.constant(Mat<Scalar>::Zero(dims.latent, 1));
  Var<Scalar> prev_word_final = tape.constant(Mat<Scalar>::Zero(dims.word_hidden, 1));

  for (std::size_t t = 0; t < out.plan.groups.size(); ++t) {
    h_s = sentence_step(b, prev_z, prev_word_final, h_s);
    Var<Scalar> z_t;
    if (b.has_local) {
      latent::DiagonalGaussian<Scalar> prior =
          latent::gaussian_from<Scalar>({h_s, bows[t]}, b.prior_local);
      latent::LatentSample<Scalar> s =
          latent::sample(prior, rng, latent::LatentSource::prior);
      z_t = s.z;
    } else {
      z_t = tape.constant(Mat<Scalar>::Zero(dims.latent, 1));
    }
    LatentTrace trace;
    trace.source = latent::LatentSource::prior;
    trace.z = z_t.value().col(0).template cast<double>();
    out.locals.push_back(std::move(trace));

    GroupAttention<Scalar> attn =
        group_attention(b, enc.item_reprs, out.plan.groups[t].item_indices);
    DecodedSentence<Scalar> decoded =
        decode_sentence(b, attn, h_s, z_t, mode, dims.max_sentence_len, rng);
    out.sentences.push_back(decoded.tokens);
    prev_z = z_t;
    prev_word_final = decoded.final_state;
  }
  return out;
}

}  // namespace planwrite::realizer
