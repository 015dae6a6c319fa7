#pragma once

// The plan-then-realize model: parameter registration, per-tape binding, and
// input encoding shared by the planner, realizer, and objective.
//
// Model wiring:
//   items -> embeddings -> bidirectional GRU -> item vectors h_i and enc(x)
//   a learned extra item vector stands in for the NONE tag
//   global latent z_p: prior MLP over enc(x), posterior over [enc(x); enc(y)]
//   plan decoder GRU emits groups of items (planner.hpp)
//   plan encoder GRU summarizes the group sequence
//   sentence decoder GRU chains local latents z_t, word decoder GRU with
//   additive attention over the active group realizes each sentence

#include "planwrite/compute/params.hpp"
#include "planwrite/compute/rnn.hpp"
#include "planwrite/compute/rng.hpp"
#include "planwrite/compute/tape.hpp"
#include "planwrite/config.hpp"
#include "planwrite/corpus.hpp"

#include <string>
#include <vector>

namespace planwrite::model {

using compute::GruWeights;
using compute::Mat;
using compute::MlpWeights;
using compute::Var;
using compute::Vec;

struct ModelDims {
  int text_vocab = 0;
  int attr_vocab = 0;
  int value_vocab = 0;

  int word_emb = 0;
  int attr_emb = 0;
  int value_emb = 0;
  int latent = 0;
  int encoder_hidden = 0;
  int plan_hidden = 0;
  int plan_encoder_hidden = 0;
  int sentence_hidden = 0;
  int word_hidden = 0;
  int target_encoder_hidden = 0;
  int mlp_hidden = 0;
  int attn_hidden = 0;
  bool use_title = false;
  int max_plan_steps = 12;
  int max_sentence_len = 50;

  int item_repr() const { return 2 * encoder_hidden; }
  int enc_x() const { return item_repr() + (use_title ? word_emb : 0); }
  // Plan decoder input has a latent slot (first step) and a group slot
  // (later steps); the unused slot is zero.
  int plan_input() const { return latent + item_repr(); }
  int sentence_input() const { return latent + word_hidden; }
  int word_input() const { return word_emb + item_repr(); }
};

struct Ablation {
  bool global_z = false;  // zero z_p, drop its prior/posterior and KL
  bool local_z = false;   // zero z_t, drop their prior/posterior and KL
};

inline ModelDims dims_from_config(const config::RunConfig& cfg,
                                  const corpus::Vocabulary& vocab) {
  ModelDims d;
  d.text_vocab = vocab.text.size();
  d.attr_vocab = vocab.attr.size();
  d.value_vocab = vocab.value.size();
  d.word_emb = cfg.word_emb_dim;
  d.attr_emb = cfg.attr_emb_dim;
  d.value_emb = cfg.value_emb_dim;
  d.latent = cfg.latent_dim;
  d.encoder_hidden = cfg.encoder_hidden;
  d.plan_hidden = cfg.plan_hidden;
  d.plan_encoder_hidden = cfg.plan_encoder_hidden;
  d.sentence_hidden = cfg.sentence_hidden;
  d.word_hidden = cfg.word_hidden;
  d.target_encoder_hidden = cfg.target_encoder_hidden;
  d.mlp_hidden = cfg.mlp_hidden;
  d.attn_hidden = cfg.attn_hidden;
  d.use_title = cfg.use_title;
  d.max_plan_steps = cfg.max_plan_steps;
  d.max_sentence_len = cfg.max_sentence_len;
  return d;
}

struct GruRef {
  int Wz = -1, Wr = -1, Wh = -1, bz = -1, br = -1, bh = -1;
};

struct MlpRef {
  int W1 = -1, b1 = -1, W2 = -1, b2 = -1;
  bool present() const { return W1 >= 0; }
};

// Per-tape view of the model: every parameter bound as a leaf Var.
template <typename Scalar>
struct Bound {
  Var<Scalar> word_emb, attr_emb, value_emb, none_item;
  GruWeights<Scalar> enc_fwd, enc_bwd, plan_rnn, plan_enc_rnn, sent_rnn, word_rnn,
      target_rnn;
  bool has_target_rnn = false;
  Var<Scalar> plan_init_W, plan_init_b;
  Var<Scalar> memb_W, memb_b, memb_v;
  Var<Scalar> stop_W, stop_b;
  Var<Scalar> sent_init_W, sent_init_b;
  Var<Scalar> word_init_W, word_init_b;
  Var<Scalar> attn_W, attn_U, attn_b, attn_v;
  Var<Scalar> out_W, out_b;
  MlpWeights<Scalar> prior_global, post_global, prior_local, post_local, bow_mlp;
  bool has_global = false;
  bool has_local = false;
};

template <typename Scalar>
class Phvm {
 public:
  Phvm(const ModelDims& dims, const Ablation& ablation, std::uint64_t init_seed)
      : dims_(dims), ablation_(ablation) {
    compute::Rng rng(init_seed);
    auto& s = store_;

    word_emb_ = s.add_weight("word_emb", dims.text_vocab, dims.word_emb, rng);
    attr_emb_ = s.add_weight("attr_emb", dims.attr_vocab, dims.attr_emb, rng);
    value_emb_ = s.add_weight("value_emb", dims.value_vocab, dims.value_emb, rng);
    none_item_ = s.add_weight("none_item", dims.item_repr(), 1, rng);

    int item_emb = dims.attr_emb + dims.value_emb;
    enc_fwd_ = add_gru("enc_fwd", item_emb, dims.encoder_hidden, rng);
    enc_bwd_ = add_gru("enc_bwd", item_emb, dims.encoder_hidden, rng);

    plan_init_W_ = s.add_weight("plan_init.W", dims.plan_hidden,
                                dims.enc_x() + dims.latent, rng);
    plan_init_b_ = s.add_bias("plan_init.b", dims.plan_hidden);
    plan_rnn_ = add_gru("plan_rnn", dims.plan_input(), dims.plan_hidden, rng);
    memb_W_ = s.add_weight("membership.W", dims.attn_hidden,
                           dims.item_repr() + dims.plan_hidden, rng);
    memb_b_ = s.add_bias("membership.b", dims.attn_hidden);
    memb_v_ = s.add_weight("membership.v", dims.attn_hidden, 1, rng);
    stop_W_ = s.add_weight("stop.W", 1, dims.plan_hidden, rng);
    stop_b_ = s.add_bias("stop.b", 1);

    plan_enc_rnn_ = add_gru("plan_enc_rnn", dims.item_repr(),
                            dims.plan_encoder_hidden, rng);
    sent_init_W_ = s.add_weight(
        "sent_init.W", dims.sentence_hidden,
        dims.enc_x() + dims.latent + dims.plan_encoder_hidden, rng);
    sent_init_b_ = s.add_bias("sent_init.b", dims.sentence_hidden);
    sent_rnn_ = add_gru("sent_rnn", dims.sentence_input(), dims.sentence_hidden, rng);

    word_init_W_ = s.add_weight("word_init.W", dims.word_hidden,
                                dims.sentence_hidden + dims.latent, rng);
    word_init_b_ = s.add_bias("word_init.b", dims.word_hidden);
    word_rnn_ = add_gru("word_rnn", dims.word_input(), dims.word_hidden, rng);
    attn_W_ = s.add_weight("attn.W", dims.attn_hidden, dims.item_repr(), rng);
    attn_U_ = s.add_weight("attn.U", dims.attn_hidden, dims.word_hidden, rng);
    attn_b_ = s.add_bias("attn.b", dims.attn_hidden);
    attn_v_ = s.add_weight("attn.v", dims.attn_hidden, 1, rng);
    out_W_ = s.add_weight("word_out.W", dims.text_vocab, dims.word_hidden, rng);
    out_b_ = s.add_bias("word_out.b", dims.text_vocab);

    if (!ablation.global_z || !ablation.local_z) {
      target_rnn_ = add_gru("target_rnn", dims.word_emb, dims.target_encoder_hidden, rng);
      has_target_rnn_ = true;
    }
    if (!ablation.global_z) {
      prior_global_ = add_mlp("prior_global", dims.enc_x(), 2 * dims.latent, rng);
      post_global_ = add_mlp("post_global", dims.enc_x() + dims.target_encoder_hidden,
                             2 * dims.latent, rng);
      init_gaussian_head(prior_global_);
      init_gaussian_head(post_global_);
    }
    if (!ablation.local_z) {
      prior_local_ = add_mlp("prior_local", dims.sentence_hidden + dims.item_repr(),
                             2 * dims.latent, rng);
      post_local_ = add_mlp(
          "post_local",
          dims.sentence_hidden + dims.item_repr() + dims.target_encoder_hidden,
          2 * dims.latent, rng);
      init_gaussian_head(prior_local_);
      init_gaussian_head(post_local_);
    }
    bow_mlp_ = add_mlp("bow_mlp", dims.sentence_hidden + dims.latent,
                       dims.text_vocab, rng);
  }

  // Gaussian heads start with strongly negative log-variance so early
  // reparameterized samples are close to their means; a unit-variance start
  // drowns the mean signal in noise and the decoders learn to ignore the
  // latent before it carries anything.
  static constexpr double kLogVarInitBias = -3.0;

  const ModelDims& dims() const { return dims_; }
  const Ablation& ablation() const { return ablation_; }
  compute::ParameterStore<Scalar>& store() { return store_; }
  const compute::ParameterStore<Scalar>& store() const { return store_; }

  Bound<Scalar> bind(compute::Tape<Scalar>& tape) {
    Bound<Scalar> b;
    auto v = [&](int id) { return store_.on_tape(tape, id); };
    auto gru = [&](const GruRef& g) {
      return GruWeights<Scalar>{v(g.Wz), v(g.Wr), v(g.Wh), v(g.bz), v(g.br), v(g.bh)};
    };
    auto mlp = [&](const MlpRef& m) {
      return MlpWeights<Scalar>{v(m.W1), v(m.b1), v(m.W2), v(m.b2)};
    };
    b.word_emb = v(word_emb_);
    b.attr_emb = v(attr_emb_);
    b.value_emb = v(value_emb_);
    b.none_item = v(none_item_);
    b.enc_fwd = gru(enc_fwd_);
    b.enc_bwd = gru(enc_bwd_);
    b.plan_rnn = gru(plan_rnn_);
    b.plan_enc_rnn = gru(plan_enc_rnn_);
    b.sent_rnn = gru(sent_rnn_);
    b.word_rnn = gru(word_rnn_);
    if (has_target_rnn_) {
      b.target_rnn = gru(target_rnn_);
      b.has_target_rnn = true;
    }
    b.plan_init_W = v(plan_init_W_);
    b.plan_init_b = v(plan_init_b_);
    b.memb_W = v(memb_W_);
    b.memb_b = v(memb_b_);
    b.memb_v = v(memb_v_);
    b.stop_W = v(stop_W_);
    b.stop_b = v(stop_b_);
    b.sent_init_W = v(sent_init_W_);
    b.sent_init_b = v(sent_init_b_);
    b.word_init_W = v(word_init_W_);
    b.word_init_b = v(word_init_b_);
    b.attn_W = v(attn_W_);
    b.attn_U = v(attn_U_);
    b.attn_b = v(attn_b_);
    b.attn_v = v(attn_v_);
    b.out_W = v(out_W_);
    b.out_b = v(out_b_);
    if (!ablation_.global_z) {
      b.prior_global = mlp(prior_global_);
      b.post_global = mlp(post_global_);
      b.has_global = true;
    }
    if (!ablation_.local_z) {
      b.prior_local = mlp(prior_local_);
      b.post_local = mlp(post_local_);
      b.has_local = true;
    }
    b.bow_mlp = mlp(bow_mlp_);
    return b;
  }

 private:
  GruRef add_gru(const std::string& prefix, int input, int hidden, compute::Rng& rng) {
    GruRef g;
    g.Wz = store_.add_weight(prefix + ".Wz", hidden, input + hidden, rng);
    g.Wr = store_.add_weight(prefix + ".Wr", hidden, input + hidden, rng);
    g.Wh = store_.add_weight(prefix + ".Wh", hidden, input + hidden, rng);
    g.bz = store_.add_bias(prefix + ".bz", hidden);
    g.br = store_.add_bias(prefix + ".br", hidden);
    g.bh = store_.add_bias(prefix + ".bh", hidden);
    return g;
  }

  MlpRef add_mlp(const std::string& prefix, int input, int output, compute::Rng& rng) {
    MlpRef m;
    m.W1 = store_.add_weight(prefix + ".W1", dims_.mlp_hidden, input, rng);
    m.b1 = store_.add_bias(prefix + ".b1", dims_.mlp_hidden);
    m.W2 = store_.add_weight(prefix + ".W2", output, dims_.mlp_hidden, rng);
    m.b2 = store_.add_bias(prefix + ".b2", output);
    return m;
  }

  void init_gaussian_head(const MlpRef& m) {
    Mat<Scalar>& bias = store_.value(m.b2);
    bias.bottomRows(dims_.latent).setConstant(static_cast<Scalar>(kLogVarInitBias));
  }

  ModelDims dims_;
  Ablation ablation_;
  compute::ParameterStore<Scalar> store_;

  int word_emb_ = -1, attr_emb_ = -1, value_emb_ = -1, none_item_ = -1;
  GruRef enc_fwd_, enc_bwd_, plan_rnn_, plan_enc_rnn_, sent_rnn_, word_rnn_, target_rnn_;
  bool has_target_rnn_ = false;
  int plan_init_W_ = -1, plan_init_b_ = -1;
  int memb_W_ = -1, memb_b_ = -1, memb_v_ = -1;
  int stop_W_ = -1, stop_b_ = -1;
  int sent_init_W_ = -1, sent_init_b_ = -1;
  int word_init_W_ = -1, word_init_b_ = -1;
  int attn_W_ = -1, attn_U_ = -1, attn_b_ = -1, attn_v_ = -1;
  int out_W_ = -1, out_b_ = -1;
  MlpRef prior_global_, post_global_, prior_local_, post_local_, bow_mlp_;
};

// Context-aware item vectors (with the NONE vector appended) plus enc(x).
template <typename Scalar>
struct InputEncoding {
  std::vector<Var<Scalar>> item_reprs;  // size N + 1; last entry is NONE
  Var<Scalar> enc_x;
  int item_count = 0;  // N, excluding NONE
};

template <typename Scalar>
InputEncoding<Scalar> encode_input(const Bound<Scalar>& b, compute::Tape<Scalar>& tape,
                                   const corpus::Record& record, const ModelDims& dims) {
  compute::detail::require(!record.items.empty(), "encode_input: record has no items");
  std::vector<Var<Scalar>> item_embs;
  item_embs.reserve(record.items.size());
  for (const auto& item : record.items) {
    Var<Scalar> a = compute::embedding_col(b.attr_emb, item.attr_id);
    Var<Scalar> v = compute::embedding_col(b.value_emb, item.value_id);
    item_embs.push_back(compute::concat_rows<Scalar>({a, v}));
  }
  auto enc = compute::bi_encode<Scalar>(item_embs, b.enc_fwd, b.enc_bwd);

  InputEncoding<Scalar> out;
  out.item_count = static_cast<int>(record.items.size());
  out.item_reprs = std::move(enc.states);
  out.item_reprs.push_back(b.none_item);

  if (dims.use_title) {
    Var<Scalar> title;
    if (!record.title_ids.empty()) {
      std::vector<Var<Scalar>> embs;
      embs.reserve(record.title_ids.size());
      for (int id : record.title_ids) {
        embs.push_back(compute::embedding_col(b.word_emb, id));
      }
      title = compute::average<Scalar>(embs);
    } else {
      title = tape.constant(Mat<Scalar>::Zero(dims.word_emb, 1));
    }
    out.enc_x = compute::concat_rows<Scalar>({enc.final_state, title});
  } else {
    out.enc_x = enc.final_state;
  }
  return out;
}

// Final state of a unidirectional pass over the word embeddings of `ids`;
// used to feed target text into the posterior heads.
template <typename Scalar>
Var<Scalar> encode_target(const Bound<Scalar>& b, compute::Tape<Scalar>& tape,
                          const std::vector<int>& ids, const ModelDims& dims) {
  compute::detail::require(b.has_target_rnn, "encode_target: target encoder not present");
  if (ids.empty()) {
    return tape.constant(Mat<Scalar>::Zero(dims.target_encoder_hidden, 1));
  }
  std::vector<Var<Scalar>> embs;
  embs.reserve(ids.size());
  for (int id : ids) embs.push_back(compute::embedding_col(b.word_emb, id));
  auto states = compute::run_gru<Scalar>(embs, b.target_rnn);
  return states.back();
}

}  // namespace planwrite::model
