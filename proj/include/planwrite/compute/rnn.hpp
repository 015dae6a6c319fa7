#pragma once

// GRU cell, unidirectional runner, bidirectional encoder, and the two-layer
// tanh MLP used by the latent heads.
//
// Gate convention (fixed; conventions differ across the literature):
//   z = sigmoid(Wz [x; h_prev] + bz)        update gate
//   r = sigmoid(Wr [x; h_prev] + br)        reset gate
//   h~ = tanh(Wh [x; r .* h_prev] + bh)     candidate
//   h  = (1 - z) .* h_prev + z .* h~

#include "planwrite/compute/tape.hpp"

#include <span>
#include <vector>

namespace planwrite::compute {

template <typename Scalar>
struct GruWeights {
  Var<Scalar> Wz, Wr, Wh;  // each (hidden, input + hidden)
  Var<Scalar> bz, br, bh;  // each (hidden, 1)
};

template <typename Scalar>
Var<Scalar> gru_cell(Var<Scalar> x, Var<Scalar> h_prev, const GruWeights<Scalar>& w) {
  detail::require(x.cols() == 1 && h_prev.cols() == 1, "gru_cell: expects column vectors");
  detail::require(w.Wz.cols() == x.rows() + h_prev.rows(),
                  "gru_cell: weight width != input + hidden");
  Var<Scalar> xh = concat_rows<Scalar>({x, h_prev});
  Var<Scalar> z = sigmoid(add(matmul(w.Wz, xh), w.bz));
  Var<Scalar> r = sigmoid(add(matmul(w.Wr, xh), w.br));
  Var<Scalar> xrh = concat_rows<Scalar>({x, cwise_mul(r, h_prev)});
  Var<Scalar> cand = tanh_(add(matmul(w.Wh, xrh), w.bh));
  return gru_blend(z, h_prev, cand);
}

// Runs a GRU left to right from a zero initial state; returns all states.
template <typename Scalar>
std::vector<Var<Scalar>> run_gru(std::span<const Var<Scalar>> inputs,
                                 const GruWeights<Scalar>& w) {
  detail::require(!inputs.empty(), "run_gru: empty sequence");
  Tape<Scalar>& tape = *inputs[0].tape;
  Eigen::Index hidden = w.bz.rows();
  Var<Scalar> h = tape.constant(Mat<Scalar>::Zero(hidden, 1));
  std::vector<Var<Scalar>> states;
  states.reserve(inputs.size());
  for (const auto& x : inputs) {
    h = gru_cell(x, h, w);
    states.push_back(h);
  }
  return states;
}

template <typename Scalar>
struct BiEncoding {
  std::vector<Var<Scalar>> states;  // per step [fwd_i; bwd_i]
  Var<Scalar> final_state;          // [fwd_N; bwd_1]
};

// Bidirectional encoding: forward pass left to right, backward pass right to
// left; per-step states are the concatenation of the two directions.
template <typename Scalar>
BiEncoding<Scalar> bi_encode(std::span<const Var<Scalar>> inputs,
                             const GruWeights<Scalar>& forward,
                             const GruWeights<Scalar>& backward) {
  detail::require(!inputs.empty(), "bi_encode: empty sequence");
  std::vector<Var<Scalar>> fwd = run_gru(inputs, forward);
  std::vector<Var<Scalar>> reversed(inputs.rbegin(), inputs.rend());
  std::vector<Var<Scalar>> bwd_rev = run_gru<Scalar>(reversed, backward);

  BiEncoding<Scalar> out;
  const std::size_t n = inputs.size();
  out.states.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    // bwd_rev[n-1-i] is the backward state at original position i
    out.states.push_back(concat_rows<Scalar>({fwd[i], bwd_rev[n - 1 - i]}));
  }
  out.final_state = concat_rows<Scalar>({fwd[n - 1], bwd_rev[n - 1]});
  return out;
}

template <typename Scalar>
struct MlpWeights {
  Var<Scalar> W1, b1;  // hidden layer
  Var<Scalar> W2, b2;  // linear output
};

// One tanh hidden layer followed by a linear output.
template <typename Scalar>
Var<Scalar> mlp_tanh(Var<Scalar> input, const MlpWeights<Scalar>& w) {
  detail::require(w.W1.cols() == input.rows(), "mlp_tanh: input width mismatch");
  Var<Scalar> h = tanh_(add(matmul(w.W1, input), w.b1));
  return add(matmul(w.W2, h), w.b2);
}

}  // namespace planwrite::compute
