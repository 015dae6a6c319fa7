#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "planwrite/checkpoint.hpp"
#include "planwrite/compute/grad_check.hpp"
#include "planwrite/objective.hpp"
#include "synthetic.hpp"

#include <cmath>
#include <filesystem>

using namespace planwrite;
using namespace planwrite::compute;

using MatD = Mat<double>;
using VecD = Vec<double>;
using VarD = Var<double>;

namespace {

model::ModelDims tiny_dims(int text_vocab = 14) {
  model::ModelDims d;
  d.text_vocab = text_vocab;
  d.attr_vocab = 8;
  d.value_vocab = 8;
  d.word_emb = 5;
  d.attr_emb = 3;
  d.value_emb = 4;
  d.latent = 4;
  d.encoder_hidden = 3;
  d.plan_hidden = 4;
  d.plan_encoder_hidden = 3;
  d.sentence_hidden = 5;
  d.word_hidden = 5;
  d.target_encoder_hidden = 5;
  d.mlp_hidden = 6;
  d.attn_hidden = 4;
  d.max_plan_steps = 6;
  d.max_sentence_len = 10;
  return d;
}

corpus::Record two_sentence_record() {
  corpus::Record r;
  for (int i = 0; i < 3; ++i) {
    corpus::InputItem item;
    item.attribute = "a" + std::to_string(i);
    item.value = "v" + std::to_string(i);
    item.attr_id = 5 + i % 3;
    item.value_id = 5 + (i + 1) % 3;
    item.value_tokens = {5};
    r.items.push_back(item);
  }
  r.sentence_tokens = {{"x", "y", "."}, {"z", "."}};
  r.sentences = {{6, 8, 7}, {9, 7}};
  r.reference_plan.groups = {{0, 2}, {1}};
  return r;
}

// ---------------------------------------------------------------------
// Independent forward recomputation: plain Eigen, no tape, reading the
// parameter store by name and replaying the posterior noise draws.

struct Oracle {
  const ParameterStore<double>& s;
  const model::ModelDims& d;
  bool has_global;
  bool has_local;

  const MatD& P(const std::string& name) const { return s.value(s.find(name)); }

  static VecD sig(const VecD& x) {
    return x.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  }

  VecD gru(const std::string& prefix, const VecD& x, const VecD& h) const {
    VecD xh(x.size() + h.size());
    xh << x, h;
    VecD z = sig(P(prefix + ".Wz") * xh + P(prefix + ".bz"));
    VecD r = sig(P(prefix + ".Wr") * xh + P(prefix + ".br"));
    VecD xrh(x.size() + h.size());
    xrh << x, r.cwiseProduct(h);
    VecD cand = (P(prefix + ".Wh") * xrh + P(prefix + ".bh")).array().tanh();
    return h + z.cwiseProduct(cand - h);
  }

  std::pair<VecD, VecD> gauss(const std::string& prefix, const VecD& in) const {
    VecD hidden = (P(prefix + ".W1") * in + P(prefix + ".b1")).array().tanh();
    VecD out = P(prefix + ".W2") * hidden + P(prefix + ".b2");
    return {out.head(d.latent), out.tail(d.latent)};
  }

  static double kl_closed(const VecD& mq, const VecD& lq, const VecD& mp,
                          const VecD& lp) {
    double acc = 0;
    for (Eigen::Index i = 0; i < mq.size(); ++i) {
      double diff = mq(i) - mp(i);
      acc += lp(i) - lq(i) + (std::exp(lq(i)) + diff * diff) * std::exp(-lp(i)) - 1.0;
    }
    return 0.5 * acc;
  }

  static double lse(const VecD& v) {
    double m = v.maxCoeff();
    return m + std::log((v.array() - m).exp().sum());
  }

  VecD target_encode(const std::vector<int>& ids) const {
    VecD h = VecD::Zero(d.target_encoder_hidden);
    for (int id : ids) h = gru("target_rnn", P("word_emb").row(id).transpose(), h);
    return h;
  }

  objective::LossBreakdown run(const corpus::Record& rec, double kl_weight,
                               std::uint64_t seed) const {
    Rng rng(seed);
    const int n = static_cast<int>(rec.items.size());

    // input encoding
    std::vector<VecD> embs;
    for (const auto& item : rec.items) {
      VecD e(d.attr_emb + d.value_emb);
      e << P("attr_emb").row(item.attr_id).transpose(),
          P("value_emb").row(item.value_id).transpose();
      embs.push_back(e);
    }
    std::vector<VecD> fwd(n), bwd(n);
    VecD h = VecD::Zero(d.encoder_hidden);
    for (int i = 0; i < n; ++i) {
      h = gru("enc_fwd", embs[i], h);
      fwd[i] = h;
    }
    h = VecD::Zero(d.encoder_hidden);
    for (int i = n - 1; i >= 0; --i) {
      h = gru("enc_bwd", embs[i], h);
      bwd[i] = h;
    }
    std::vector<VecD> reprs(n + 1);
    for (int i = 0; i < n; ++i) {
      reprs[i].resize(d.item_repr());
      reprs[i] << fwd[i], bwd[i];
    }
    reprs[n] = P("none_item").col(0);
    VecD enc_x(d.item_repr());
    enc_x << fwd[n - 1], bwd[0];

    // global latent
    objective::LossBreakdown out;
    out.kl_weight = kl_weight;
    VecD z_p = VecD::Zero(d.latent);
    if (has_global) {
      std::vector<int> full;
      for (const auto& sent : rec.sentences) full.insert(full.end(), sent.begin(), sent.end());
      VecD y_enc = target_encode(full);
      auto [mu_p, lv_p] = gauss("prior_global", enc_x);
      VecD in_post(enc_x.size() + y_enc.size());
      in_post << enc_x, y_enc;
      auto [mu_q, lv_q] = gauss("post_global", in_post);
      VecD eps = rng.gaussian_vector<double>(d.latent);
      z_p = mu_q + (0.5 * lv_q).array().exp().matrix().cwiseProduct(eps);
      out.kl_global = kl_closed(mu_q, lv_q, mu_p, lv_p);
    }

    // teacher-forced plan decoding
    const auto& groups = rec.reference_plan.groups;
    const int horizon = static_cast<int>(groups.size());
    VecD ix(enc_x.size() + d.latent);
    ix << enc_x, z_p;
    VecD hp = (P("plan_init.W") * ix + P("plan_init.b")).array().tanh();
    VecD input(d.plan_input());
    input.setZero();
    input.head(d.latent) = z_p;
    std::vector<VecD> bows;
    double clamp = 1e-12;
    for (int t = 0; t < horizon; ++t) {
      hp = gru("plan_rnn", input, hp);
      for (int i = 0; i <= n; ++i) {
        VecD joined(d.item_repr() + d.plan_hidden);
        joined << reprs[i], hp;
        VecD hidden = (P("membership.W") * joined + P("membership.b")).array().tanh();
        double p = 1.0 / (1.0 + std::exp(-P("membership.v").col(0).dot(hidden)));
        bool member = std::find(groups[t].begin(), groups[t].end(), i) != groups[t].end();
        out.plan_membership_nll -=
            member ? std::log(std::max(p, clamp)) : std::log(std::max(1.0 - p, clamp));
      }
      double p_stop = 1.0 / (1.0 + std::exp(-(P("stop.W") * hp + P("stop.b"))(0, 0)));
      out.stop_nll -= (t + 1 == horizon) ? std::log(std::max(p_stop, clamp))
                                         : std::log(std::max(1.0 - p_stop, clamp));
      VecD bow_t = VecD::Zero(d.item_repr());
      for (int idx : groups[t]) bow_t += reprs[idx];
      bow_t /= static_cast<double>(groups[t].size());
      bows.push_back(bow_t);
      input.setZero();
      input.tail(d.item_repr()) = bow_t;
    }

    // plan encoding and sentence/word decoding
    VecD hg = VecD::Zero(d.plan_encoder_hidden);
    for (const auto& bw : bows) hg = gru("plan_enc_rnn", bw, hg);
    VecD sx(enc_x.size() + d.latent + d.plan_encoder_hidden);
    sx << enc_x, z_p, hg;
    VecD hs = P("sent_init.W") * sx + P("sent_init.b");
    VecD prev_z = VecD::Zero(d.latent);
    VecD prev_hw = VecD::Zero(d.word_hidden);

    for (int t = 0; t < horizon; ++t) {
      VecD step_in(d.latent + d.word_hidden);
      step_in << prev_z, prev_hw;
      hs = gru("sent_rnn", step_in, hs);

      VecD z_t = VecD::Zero(d.latent);
      if (has_local) {
        VecD s_enc = target_encode(rec.sentences[t]);
        VecD in_prior(d.sentence_hidden + d.item_repr());
        in_prior << hs, bows[t];
        auto [mu_p, lv_p] = gauss("prior_local", in_prior);
        VecD in_post(d.sentence_hidden + d.item_repr() + d.target_encoder_hidden);
        in_post << hs, bows[t], s_enc;
        auto [mu_q, lv_q] = gauss("post_local", in_post);
        VecD eps = rng.gaussian_vector<double>(d.latent);
        z_t = mu_q + (0.5 * lv_q).array().exp().matrix().cwiseProduct(eps);
        out.kl_local_sum += kl_closed(mu_q, lv_q, mu_p, lv_p);
      }

      // word decoder with additive attention over the group
      VecD wx(d.sentence_hidden + d.latent);
      wx << hs, z_t;
      VecD hw = (P("word_init.W") * wx + P("word_init.b")).array().tanh();
      const auto& group = groups[t];
      int prev = corpus::Vocabulary::kBos;
      const auto& sent = rec.sentences[t];
      for (std::size_t k = 0; k <= sent.size(); ++k) {
        int target = k < sent.size() ? sent[k] : corpus::Vocabulary::kEos;
        VecD query = P("attn.U") * hw + P("attn.b");
        VecD scores(group.size());
        for (std::size_t gi = 0; gi < group.size(); ++gi) {
          VecD key = P("attn.W") * reprs[group[gi]] + query;
          scores(gi) = P("attn.v").col(0).dot(key.array().tanh().matrix());
        }
        VecD alpha = (scores.array() - scores.maxCoeff()).exp();
        alpha /= alpha.sum();
        VecD ctx = VecD::Zero(d.item_repr());
        for (std::size_t gi = 0; gi < group.size(); ++gi) {
          ctx += alpha(gi) * reprs[group[gi]];
        }
        VecD win(d.word_emb + d.item_repr());
        win << P("word_emb").row(prev).transpose(), ctx;
        hw = gru("word_rnn", win, hw);
        VecD logits = P("word_out.W") * hw + P("word_out.b");
        out.reconstruction_nll += lse(logits) - logits(target);
        prev = target;
      }

      // bag-of-words loss over the sentence tokens
      VecD bow_logits;
      {
        VecD in(d.sentence_hidden + d.latent);
        in << hs, z_t;
        VecD hidden = (P("bow_mlp.W1") * in + P("bow_mlp.b1")).array().tanh();
        bow_logits = P("bow_mlp.W2") * hidden + P("bow_mlp.b2");
      }
      double l = lse(bow_logits);
      for (int w : sent) out.bow_nll += l - bow_logits(w);

      prev_z = z_t;
      prev_hw = hw;
    }

    out.total = out.reconstruction_nll + out.plan_membership_nll +
                kl_weight * (out.kl_global + out.kl_local_sum) + out.stop_nll +
                out.bow_nll;
    return out;
  }
};

}  // namespace

TEST_CASE("every loss component matches the independent forward recomputation") {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    model::ModelDims dims = tiny_dims();
    model::Phvm<double> phvm(dims, {}, 1000 + seed);
    corpus::Record rec = two_sentence_record();

    Tape<double> tape;
    Rng rng(seed);
    auto g = objective::loss_graph(phvm, tape, rec, 0.7, rng);
    auto got = g.values();

    Oracle oracle{phvm.store(), dims, true, true};
    auto want = oracle.run(rec, 0.7, seed);

    CHECK(got.reconstruction_nll == doctest::Approx(want.reconstruction_nll).epsilon(1e-10));
    CHECK(got.plan_membership_nll == doctest::Approx(want.plan_membership_nll).epsilon(1e-10));
    CHECK(got.kl_global == doctest::Approx(want.kl_global).epsilon(1e-10));
    CHECK(got.kl_local_sum == doctest::Approx(want.kl_local_sum).epsilon(1e-10));
    CHECK(got.stop_nll == doctest::Approx(want.stop_nll).epsilon(1e-10));
    CHECK(got.bow_nll == doctest::Approx(want.bow_nll).epsilon(1e-10));
    CHECK(got.total == doctest::Approx(want.total).epsilon(1e-10));
  }
}

TEST_CASE("kl weight zero removes the KL terms from the total") {
  model::ModelDims dims = tiny_dims();
  model::Phvm<double> phvm(dims, {}, 5);
  corpus::Record rec = two_sentence_record();
  Tape<double> tape;
  Rng rng(9);
  auto g = objective::loss_graph(phvm, tape, rec, 0.0, rng);
  auto b = g.values();
  CHECK(b.kl_global > 0.0);
  CHECK(b.total == doctest::Approx(b.reconstruction_nll + b.plan_membership_nll +
                                   b.stop_nll + b.bow_nll)
                       .epsilon(1e-12));
}

TEST_CASE("tying the posterior to the prior drives both KL terms to zero") {
  model::ModelDims dims = tiny_dims();
  model::Phvm<double> phvm(dims, {}, 6);
  auto& s = phvm.store();
  // posterior nets: zero the target-encoding input columns, copy the rest
  auto tie = [&](const std::string& prior, const std::string& post, int shared_cols) {
    MatD& W1q = s.value(s.find(post + ".W1"));
    W1q.setZero();
    W1q.leftCols(shared_cols) = s.value(s.find(prior + ".W1"));
    s.value(s.find(post + ".b1")) = s.value(s.find(prior + ".b1"));
    s.value(s.find(post + ".W2")) = s.value(s.find(prior + ".W2"));
    s.value(s.find(post + ".b2")) = s.value(s.find(prior + ".b2"));
  };
  tie("prior_global", "post_global", dims.enc_x());
  tie("prior_local", "post_local", dims.sentence_hidden + dims.item_repr());

  corpus::Record rec = two_sentence_record();
  Tape<double> tape;
  Rng rng(10);
  auto b = objective::loss_graph(phvm, tape, rec, 1.0, rng).values();
  CHECK(b.kl_global == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(b.kl_local_sum == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("bow loss is invariant to token order") {
  model::ModelDims dims = tiny_dims();
  model::Phvm<double> phvm(dims, {}, 7);
  Tape<double> tape;
  auto b = phvm.bind(tape);
  VarD hs = tape.constant(MatD::Random(dims.sentence_hidden, 1));
  VarD z = tape.constant(MatD::Random(dims.latent, 1));
  double l1 = scalar_value(objective::bow_loss(b, hs, z, {6, 8, 7, 6}));
  double l2 = scalar_value(objective::bow_loss(b, hs, z, {7, 6, 6, 8}));
  CHECK(l1 == doctest::Approx(l2).epsilon(1e-12));
}

TEST_CASE("bow loss is tiny when all logit mass sits on the single word") {
  model::ModelDims dims = tiny_dims();
  model::Phvm<double> phvm(dims, {}, 8);
  auto& s = phvm.store();
  s.value(s.find("bow_mlp.W2")).setZero();
  auto& b2 = s.value(s.find("bow_mlp.b2"));
  b2.setZero();
  b2(6, 0) = 50.0;
  Tape<double> tape;
  auto b = phvm.bind(tape);
  VarD hs = tape.constant(MatD::Random(dims.sentence_hidden, 1));
  VarD z = tape.constant(MatD::Random(dims.latent, 1));
  CHECK(scalar_value(objective::bow_loss(b, hs, z, {6})) ==
        doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("bow loss matches a hand computation with rigged logits") {
  model::ModelDims dims = tiny_dims(8);
  model::Phvm<double> phvm(dims, {}, 9);
  auto& s = phvm.store();
  s.value(s.find("bow_mlp.W2")).setZero();
  auto& b2 = s.value(s.find("bow_mlp.b2"));
  for (int i = 0; i < 8; ++i) b2(i, 0) = 0.1 * i;
  Tape<double> tape;
  auto b = phvm.bind(tape);
  VarD hs = tape.constant(MatD::Random(dims.sentence_hidden, 1));
  VarD z = tape.constant(MatD::Random(dims.latent, 1));
  double got = scalar_value(objective::bow_loss(b, hs, z, {5, 6}));

  double lse = 0;
  for (int i = 0; i < 8; ++i) lse += std::exp(0.1 * i);
  lse = std::log(lse);
  double want = (lse - 0.5) + (lse - 0.6);
  CHECK(got == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("full loss gradients pass finite differences on a tiny model") {
  model::ModelDims dims = tiny_dims();
  model::Phvm<double> phvm(dims, {}, 77);
  corpus::Record rec = two_sentence_record();
  auto loss_fn = [&](bool with_grad) {
    Tape<double> tape;
    Rng rng(55);  // reseeded: fixed noise
    auto g = objective::loss_graph(phvm, tape, rec, 0.8, rng);
    double v = scalar_value(g.total);
    if (with_grad) tape.backward(g.total);
    return v;
  };
  Rng pick(3);
  auto report = grad_check<double>(phvm.store(), loss_fn, 1e-5, 3, pick);
  CHECK(report.coords_checked > 100);
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("loss_graph rejects records without a reference plan") {
  model::ModelDims dims = tiny_dims();
  model::Phvm<double> phvm(dims, {}, 11);
  corpus::Record rec = two_sentence_record();
  rec.reference_plan.groups.clear();
  Tape<double> tape;
  Rng rng(1);
  CHECK_THROWS_AS(objective::loss_graph(phvm, tape, rec, 1.0, rng),
                  std::invalid_argument);
}

TEST_CASE("ablations zero their latent KL term and drop their parameters") {
  model::ModelDims dims = tiny_dims();
  corpus::Record rec = two_sentence_record();

  SUBCASE("without the global latent") {
    model::Ablation abl;
    abl.global_z = true;
    model::Phvm<double> phvm(dims, abl, 12);
    CHECK_FALSE(phvm.store().has("prior_global.W1"));
    CHECK_FALSE(phvm.store().has("post_global.W1"));
    CHECK(phvm.store().has("prior_local.W1"));
    Tape<double> tape;
    Rng rng(2);
    auto b = objective::loss_graph(phvm, tape, rec, 1.0, rng).values();
    CHECK(b.kl_global == 0.0);
    CHECK(b.kl_local_sum > 0.0);
  }
  SUBCASE("without the local latents") {
    model::Ablation abl;
    abl.local_z = true;
    model::Phvm<double> phvm(dims, abl, 13);
    CHECK_FALSE(phvm.store().has("prior_local.W1"));
    CHECK(phvm.store().has("prior_global.W1"));
    Tape<double> tape;
    Rng rng(2);
    auto b = objective::loss_graph(phvm, tape, rec, 1.0, rng).values();
    CHECK(b.kl_local_sum == 0.0);
    CHECK(b.kl_global > 0.0);
  }
  SUBCASE("without both: loss is deterministic, no noise consumed") {
    model::Ablation abl;
    abl.global_z = true;
    abl.local_z = true;
    model::Phvm<double> phvm(dims, abl, 14);
    Tape<double> tape;
    Rng rng1(1), rng2(345);
    double a = objective::loss_graph(phvm, tape, rec, 1.0, rng1).values().total;
    tape.reset();
    double b = objective::loss_graph(phvm, tape, rec, 1.0, rng2).values().total;
    CHECK(a == b);
  }
}

TEST_CASE("loss decomposition identity holds across random records and weights") {
  Rng meta(31);
  for (int trial = 0; trial < 20; ++trial) {
    model::ModelDims dims = tiny_dims();
    model::Phvm<double> phvm(dims, {}, 500 + trial);
    corpus::Record rec = two_sentence_record();
    Tape<double> tape;
    Rng rng(meta.raw());
    double kl_w = meta.uniform();
    auto b = objective::loss_graph(phvm, tape, rec, kl_w, rng).values();
    CHECK(b.total == doctest::Approx(b.recomputed_total()).epsilon(1e-10));
  }
}

TEST_CASE("a short training run produces a log row per step and an argmin snapshot") {
  synthetic::CorpusSpec spec;
  spec.target_records = 10;
  spec.items_min = 2;
  spec.items_max = 4;
  spec.seed = 5;
  auto corpus_data = synthetic::make_corpus(spec);
  auto vocab = synthetic::prepare(corpus_data);

  config::RunConfig cfg;
  cfg.word_emb_dim = 6;
  cfg.attr_emb_dim = 3;
  cfg.value_emb_dim = 4;
  cfg.latent_dim = 4;
  cfg.encoder_hidden = 4;
  cfg.plan_hidden = 4;
  cfg.plan_encoder_hidden = 4;
  cfg.sentence_hidden = 6;
  cfg.word_hidden = 6;
  cfg.target_encoder_hidden = 6;
  cfg.mlp_hidden = 6;
  cfg.attn_hidden = 4;
  model::ModelDims dims = model::dims_from_config(cfg, vocab);
  model::Phvm<double> phvm(dims, {}, 21);

  objective::TrainConfig tc;
  tc.batch_size = 4;
  tc.epochs = 2;
  tc.seed = 17;
  auto result = objective::train(phvm, corpus_data.records, corpus_data.records, tc);

  long expected_steps = 2 * ((10 + 3) / 4);
  CHECK(result.steps == expected_steps);
  CHECK(static_cast<long>(result.log_rows.size()) == expected_steps + 1);  // + header
  CHECK(result.log_rows[0].rfind("# step", 0) == 0);
  CHECK(result.best_epoch >= 0);
  CHECK(result.best_validation <= result.final_validation + 1e-12);
  CHECK(!result.best_values.empty());
}

TEST_CASE("training twice with one seed gives bit-identical logs") {
  synthetic::CorpusSpec spec;
  spec.target_records = 8;
  spec.items_min = 2;
  spec.items_max = 3;
  spec.seed = 6;

  auto run = [&]() {
    auto corpus_data = synthetic::make_corpus(spec);
    auto vocab = synthetic::prepare(corpus_data);
    config::RunConfig cfg;
    cfg.word_emb_dim = 5;
    cfg.attr_emb_dim = 3;
    cfg.value_emb_dim = 3;
    cfg.latent_dim = 3;
    cfg.encoder_hidden = 3;
    cfg.plan_hidden = 3;
    cfg.plan_encoder_hidden = 3;
    cfg.sentence_hidden = 5;
    cfg.word_hidden = 5;
    cfg.target_encoder_hidden = 5;
    cfg.mlp_hidden = 5;
    cfg.attn_hidden = 3;
    model::ModelDims dims = model::dims_from_config(cfg, vocab);
    model::Phvm<double> phvm(dims, {}, 42);
    objective::TrainConfig tc;
    tc.batch_size = 4;
    tc.epochs = 2;
    tc.seed = 99;
    return objective::train(phvm, corpus_data.records, corpus_data.records, tc).log_rows;
  };
  CHECK(run() == run());
}

TEST_CASE("training loss on ten records shrinks by epoch 50") {
  synthetic::CorpusSpec spec;
  spec.target_records = 10;
  spec.items_min = 2;
  spec.items_max = 3;
  spec.seed = 7;
  auto corpus_data = synthetic::make_corpus(spec);
  auto vocab = synthetic::prepare(corpus_data);

  config::RunConfig cfg;
  cfg.word_emb_dim = 8;
  cfg.attr_emb_dim = 4;
  cfg.value_emb_dim = 4;
  cfg.latent_dim = 4;
  cfg.encoder_hidden = 4;
  cfg.plan_hidden = 4;
  cfg.plan_encoder_hidden = 4;
  cfg.sentence_hidden = 8;
  cfg.word_hidden = 8;
  cfg.target_encoder_hidden = 8;
  cfg.mlp_hidden = 8;
  cfg.attn_hidden = 4;
  model::ModelDims dims = model::dims_from_config(cfg, vocab);
  model::Phvm<double> phvm(dims, {}, 23);

  objective::TrainConfig tc;
  tc.batch_size = 5;
  tc.epochs = 50;
  tc.seed = 3;
  auto result = objective::train(phvm, corpus_data.records, corpus_data.records, tc);

  auto total_of = [](const std::string& row) {
    auto pos = row.rfind('\t');
    return std::stod(row.substr(pos + 1));
  };
  double first = total_of(result.log_rows[1]);
  double last = total_of(result.log_rows.back());
  CHECK(last < first);
}

TEST_CASE("a non-finite loss aborts training with step diagnostics") {
  synthetic::CorpusSpec spec;
  spec.target_records = 4;
  spec.items_min = 2;
  spec.items_max = 3;
  spec.seed = 8;
  auto corpus_data = synthetic::make_corpus(spec);
  auto vocab = synthetic::prepare(corpus_data);
  config::RunConfig cfg;
  cfg.word_emb_dim = 5;
  cfg.attr_emb_dim = 3;
  cfg.value_emb_dim = 3;
  cfg.latent_dim = 3;
  cfg.encoder_hidden = 3;
  cfg.plan_hidden = 3;
  cfg.plan_encoder_hidden = 3;
  cfg.sentence_hidden = 5;
  cfg.word_hidden = 5;
  cfg.target_encoder_hidden = 5;
  cfg.mlp_hidden = 5;
  cfg.attn_hidden = 3;
  model::ModelDims dims = model::dims_from_config(cfg, vocab);
  model::Phvm<double> phvm(dims, {}, 24);
  auto& out_bias = phvm.store().value(phvm.store().find("word_out.b"));
  out_bias(0, 0) = std::numeric_limits<double>::quiet_NaN();

  objective::TrainConfig tc;
  tc.batch_size = 2;
  tc.epochs = 1;
  try {
    objective::train(phvm, corpus_data.records, corpus_data.records, tc);
    FAIL("expected TrainingError");
  } catch (const objective::TrainingError& e) {
    CHECK(e.step == 0);
    CHECK_FALSE(e.breakdown.finite());
  }
}

TEST_CASE("32-bit mode runs the same loss graph") {
  model::ModelDims dims = tiny_dims();
  model::Phvm<float> phvm(dims, {}, 31);
  corpus::Record rec = two_sentence_record();
  Tape<float> tape;
  Rng rng(1);
  auto b = objective::loss_graph(phvm, tape, rec, 1.0, rng).values();
  CHECK(std::isfinite(b.total));
  CHECK(b.total > 0);
}

TEST_CASE("checkpoint save/restore round trips the parameter store") {
  model::ModelDims dims = tiny_dims();
  model::Phvm<double> a(dims, {}, 61);
  model::Phvm<double> b(dims, {}, 62);

  auto path = std::filesystem::temp_directory_path() / "planwrite_ckpt_test.bin";
  checkpoint::Metadata meta;
  meta.config_echo = "word_emb_dim = 5\n";
  meta.text_vocab = dims.text_vocab;
  checkpoint::save(a.store(), meta, path.string());
  auto contents = checkpoint::load(path.string());
  CHECK(contents.meta.config_echo == meta.config_echo);
  CHECK(contents.meta.text_vocab == static_cast<std::uint64_t>(dims.text_vocab));
  checkpoint::restore(b.store(), contents);
  for (int i = 0; i < a.store().count(); ++i) {
    CHECK((a.store().value(i) - b.store().value(i)).norm() == 0.0);
  }

  // mismatched shapes are rejected
  model::ModelDims other = dims;
  other.latent = 3;
  model::Phvm<double> c(other, {}, 63);
  CHECK_THROWS_AS(checkpoint::restore(c.store(), contents), std::runtime_error);
  std::filesystem::remove(path);
}
