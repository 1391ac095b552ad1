// Copyright 2026 The TokenFormer Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tokenformer/mask_schedule.hpp"
#include "tokenformer/matrix.hpp"
#include "tokenformer/rng.hpp"
#include "tokenformer/tape.hpp"

namespace tokenformer {

struct RopeConfig {
  std::size_t head_dim = 0;  // d_k, must be even
  double base = 10000.0;

  // Theta_j = base^(-2j / d_k), j = 0 .. d_k/2 - 1.
  std::vector<double> frequencies() const;
};

struct BlockOptions {
  std::size_t heads = 1;
  bool nlir = true;                   // sigmoid gate on the attention output
  bool gate_from_normalized = false;  // gate projection reads RMSNorm(X) instead of X
  double rms_eps = 1e-6;
  double rope_base = 10000.0;
};

// Projections act on row vectors: Q = X W_q. FFN: W_1, W_2 are d x d_ff,
// W_3 is d_ff x d. Gains are 1 x d rows.
struct BlockParams {
  Matrix wq, wk, wv, wo, wg, w1, w2, w3, g_attn, g_ffn;

  static BlockParams zeros(std::size_t d, std::size_t d_ff);
  // Projections ~ N(0, std^2), gains = 1.
  static BlockParams init(std::size_t d, std::size_t d_ff, Rng& rng, double std = 0.02);

  std::size_t dim() const { return wq.rows(); }
  std::size_t ffn_dim() const { return w1.cols(); }

  template <typename F>
  void for_each(F&& f) {
    f("wq", wq); f("wk", wk); f("wv", wv); f("wo", wo); f("wg", wg);
    f("w1", w1); f("w2", w2); f("w3", w3); f("g_attn", g_attn); f("g_ffn", g_ffn);
  }
  template <typename F>
  void for_each(F&& f) const {
    f("wq", wq); f("wk", wk); f("wv", wv); f("wo", wo); f("wg", wg);
    f("w1", w1); f("w2", w2); f("w3", w3); f("g_attn", g_attn); f("g_ffn", g_ffn);
  }
};

// Every intermediate of one block, all S_L x d except attn_weights.
struct BlockTrace {
  Matrix attn_out;       // A~ : attention output after W_o
  Matrix gated_out;      // I~ : sigma(G) . A~ (equals attn_out without the gate)
  Matrix attn_residual;  // I = X + I~
  Matrix ffn_out;        // H
  Matrix block_out;      // X_next = I + H
  std::vector<Matrix> attn_weights;  // per head, S_L x S_L
};

// Rotates pairs (2j, 2j+1) inside each head of width cfg.head_dim by p_i * Theta_j.
Matrix rope_rotate(const Matrix& x, std::span<const std::size_t> positions, const RopeConfig& cfg);

struct AttentionResult {
  Matrix output;
  std::vector<Matrix> weights;
};

// Per head softmax(R(Q) R(K)^T / sqrt(d_k) + mask) V, heads concatenated, times W_o.
AttentionResult attention(const Matrix& x_norm, std::span<const std::size_t> positions,
                          const VisibilityMask& mask, const BlockParams& params,
                          const BlockOptions& opts);

struct GateResult {
  Matrix gated;     // I~
  Matrix residual;  // I
};
// G = X W_g; I~ = sigma(G) . A; I = X + I~.
GateResult nlir_gate(const Matrix& x_raw, const Matrix& attn_out, const Matrix& wg);

struct FfnResult {
  Matrix ffn_out;    // H
  Matrix block_out;  // X_next
};
// H = (Swish(RMSNorm(I) W_1) . (RMSNorm(I) W_2)) W_3, X_next = I + H.
FfnResult swiglu_ffn(const Matrix& residual, const BlockParams& params, double rms_eps = 1e-6);

BlockTrace block_forward(const Matrix& x, std::span<const std::size_t> positions,
                         const VisibilityMask& mask, const BlockParams& params,
                         const BlockOptions& opts);

// Pre-softmax scores of one head (R(Q_h) R(K_h)^T / sqrt(d_k)) before masking.
Matrix head_scores(const Matrix& x_norm, std::span<const std::size_t> positions,
                   const BlockParams& params, const BlockOptions& opts, std::size_t head);

namespace ad {

Var rope(Var x, std::span<const std::size_t> positions, const RopeConfig& cfg);

struct BlockParamVars {
  Var wq, wk, wv, wo, wg, w1, w2, w3, g_attn, g_ffn;
};

BlockParamVars bind_block(Tape& tape, const BlockParams& p);

struct AttentionVars {
  Var output;
  std::vector<Var> weights;
};

AttentionVars attention(Var x_norm, std::span<const std::size_t> positions, Var mask,
                        const BlockParamVars& p, const BlockOptions& opts);

struct BlockVars {
  Var attn_out, gated_out, attn_residual, ffn_out, block_out;
  std::vector<Var> attn_weights;
};

BlockVars block_forward(Var x, std::span<const std::size_t> positions, Var mask,
                        const BlockParamVars& p, const BlockOptions& opts);

}  // namespace ad

}  // namespace tokenformer
