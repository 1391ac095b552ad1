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

#include "tokenformer/interaction_block.hpp"

#include <cmath>
#include <string>

#include "tokenformer/errors.hpp"
#include "tokenformer/linalg.hpp"

namespace tokenformer {

std::vector<double> RopeConfig::frequencies() const {
  if (head_dim == 0 || head_dim % 2 != 0) {
    throw ShapeError("RopeConfig: head dimension must be even and positive, got " +
                     std::to_string(head_dim));
  }
  std::vector<double> f(head_dim / 2);
  for (std::size_t j = 0; j < f.size(); ++j) {
    f[j] = std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(head_dim));
  }
  return f;
}

namespace {

// sign = +1 rotates forward, -1 applies the inverse (transpose) rotation.
Matrix rope_value(const Matrix& x, const std::vector<std::size_t>& positions,
                  const RopeConfig& cfg, double sign) {
  const auto freqs = cfg.frequencies();
  const std::size_t dk = cfg.head_dim;
  if (x.cols() % dk != 0) {
    throw ShapeError("rope_rotate: width " + std::to_string(x.cols()) +
                     " is not a multiple of head dim " + std::to_string(dk));
  }
  if (positions.size() != x.rows()) {
    throw ShapeError("rope_rotate: " + std::to_string(positions.size()) + " positions for " +
                     std::to_string(x.rows()) + " rows");
  }
  Matrix out(x.rows(), x.cols());
  std::vector<double> c(freqs.size()), s(freqs.size());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double p = static_cast<double>(positions[i]);
    for (std::size_t j = 0; j < freqs.size(); ++j) {
      c[j] = std::cos(p * freqs[j]);
      s[j] = sign * std::sin(p * freqs[j]);
    }
    auto in = x.row(i);
    auto o = out.row(i);
    for (std::size_t h = 0; h < x.cols(); h += dk) {
      for (std::size_t j = 0; j < freqs.size(); ++j) {
        const double a = in[h + 2 * j];
        const double b = in[h + 2 * j + 1];
        o[h + 2 * j] = a * c[j] - b * s[j];
        o[h + 2 * j + 1] = a * s[j] + b * c[j];
      }
    }
  }
  return out;
}

std::size_t head_dim_of(std::size_t d, const BlockOptions& opts) {
  if (opts.heads == 0 || d % opts.heads != 0) {
    throw ShapeError("attention: dim " + std::to_string(d) + " not divisible by " +
                     std::to_string(opts.heads) + " heads");
  }
  return d / opts.heads;
}

}  // namespace

Matrix rope_rotate(const Matrix& x, std::span<const std::size_t> positions,
                   const RopeConfig& cfg) {
  return rope_value(x, std::vector<std::size_t>(positions.begin(), positions.end()), cfg, 1.0);
}

BlockParams BlockParams::zeros(std::size_t d, std::size_t d_ff) {
  BlockParams p;
  p.wq = Matrix(d, d);
  p.wk = Matrix(d, d);
  p.wv = Matrix(d, d);
  p.wo = Matrix(d, d);
  p.wg = Matrix(d, d);
  p.w1 = Matrix(d, d_ff);
  p.w2 = Matrix(d, d_ff);
  p.w3 = Matrix(d_ff, d);
  p.g_attn = Matrix(1, d);
  p.g_ffn = Matrix(1, d);
  return p;
}

BlockParams BlockParams::init(std::size_t d, std::size_t d_ff, Rng& rng, double std) {
  BlockParams p = zeros(d, d_ff);
  p.for_each([&](const char* name, Matrix& m) {
    const std::string n = name;
    if (n == "g_attn" || n == "g_ffn") {
      m.fill(1.0);
    } else {
      for (double& v : m.values()) v = rng.normal(0.0, std);
    }
  });
  return p;
}

namespace ad {

Var rope(Var x, std::span<const std::size_t> positions, const RopeConfig& cfg) {
  Tape& t = *x.tape;
  const std::size_t ix = x.id;
  std::vector<std::size_t> pos(positions.begin(), positions.end());
  return t.record(
      "rope", rope_value(x.value(), pos, cfg, 1.0),
      [ix, pos, cfg](const Tape& t) { return rope_value(t.value(ix), pos, cfg, 1.0); },
      [ix, pos, cfg](Tape& t, std::size_t, const Matrix& g) {
        t.accumulate(ix, rope_value(g, pos, cfg, -1.0));
      });
}

BlockParamVars bind_block(Tape& tape, const BlockParams& p) {
  return BlockParamVars{tape.leaf(p.wq), tape.leaf(p.wk), tape.leaf(p.wv), tape.leaf(p.wo),
                        tape.leaf(p.wg), tape.leaf(p.w1), tape.leaf(p.w2), tape.leaf(p.w3),
                        tape.leaf(p.g_attn), tape.leaf(p.g_ffn)};
}

AttentionVars attention(Var x_norm, std::span<const std::size_t> positions, Var mask,
                        const BlockParamVars& p, const BlockOptions& opts) {
  const std::size_t d = x_norm.cols();
  const std::size_t dk = head_dim_of(d, opts);
  const RopeConfig rope_cfg{dk, opts.rope_base};
  const Var q = rope(matmul(x_norm, p.wq), positions, rope_cfg);
  const Var k = rope(matmul(x_norm, p.wk), positions, rope_cfg);
  const Var v = matmul(x_norm, p.wv);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  AttentionVars out;
  std::vector<Var> heads;
  for (std::size_t h = 0; h < opts.heads; ++h) {
    const Var qh = slice_cols(q, h * dk, dk);
    const Var kh = slice_cols(k, h * dk, dk);
    const Var vh = slice_cols(v, h * dk, dk);
    const Var probs = softmax_masked(scale(matmul_nt(qh, kh), inv_sqrt), mask);
    out.weights.push_back(probs);
    heads.push_back(matmul(probs, vh));
  }
  const Var merged = opts.heads == 1 ? heads.front() : concat_cols(heads);
  out.output = matmul(merged, p.wo);
  return out;
}

BlockVars block_forward(Var x, std::span<const std::size_t> positions, Var mask,
                        const BlockParamVars& p, const BlockOptions& opts) {
  BlockVars b;
  const Var x_norm = mul_row(rms_normalize(x, opts.rms_eps), p.g_attn);
  AttentionVars att = attention(x_norm, positions, mask, p, opts);
  b.attn_out = att.output;
  b.attn_weights = std::move(att.weights);
  if (opts.nlir) {
    const Var gate_in = opts.gate_from_normalized ? x_norm : x;
    b.gated_out = hadamard(sigmoid(matmul(gate_in, p.wg)), b.attn_out);
  } else {
    b.gated_out = b.attn_out;
  }
  b.attn_residual = add(x, b.gated_out);
  const Var i_norm = mul_row(rms_normalize(b.attn_residual, opts.rms_eps), p.g_ffn);
  const Var act = swish(matmul(i_norm, p.w1));
  const Var lin = matmul(i_norm, p.w2);
  b.ffn_out = matmul(hadamard(act, lin), p.w3);
  b.block_out = add(b.attn_residual, b.ffn_out);
  return b;
}

}  // namespace ad

AttentionResult attention(const Matrix& x_norm, std::span<const std::size_t> positions,
                          const VisibilityMask& mask, const BlockParams& params,
                          const BlockOptions& opts) {
  ad::Tape tape;
  const ad::Var x = tape.leaf(x_norm);
  const ad::Var m = tape.leaf(mask.additive);
  const auto pv = ad::bind_block(tape, params);
  const auto out = ad::attention(x, positions, m, pv, opts);
  AttentionResult r{out.output.value(), {}};
  for (const auto& w : out.weights) r.weights.push_back(w.value());
  return r;
}

GateResult nlir_gate(const Matrix& x_raw, const Matrix& attn_out, const Matrix& wg) {
  if (!x_raw.same_shape(attn_out)) {
    throw ShapeError("nlir_gate: input " + x_raw.shape_string() + " vs attention output " +
                     attn_out.shape_string());
  }
  ad::Tape tape;
  const ad::Var x = tape.leaf(x_raw);
  const ad::Var a = tape.leaf(attn_out);
  const ad::Var w = tape.leaf(wg);
  const ad::Var gated = ad::hadamard(ad::sigmoid(ad::matmul(x, w)), a);
  const ad::Var res = ad::add(x, gated);
  return GateResult{gated.value(), res.value()};
}

FfnResult swiglu_ffn(const Matrix& residual, const BlockParams& params, double rms_eps) {
  ad::Tape tape;
  const ad::Var i = tape.leaf(residual);
  const auto p = ad::bind_block(tape, params);
  const ad::Var i_norm = ad::mul_row(ad::rms_normalize(i, rms_eps), p.g_ffn);
  const ad::Var h =
      ad::matmul(ad::hadamard(ad::swish(ad::matmul(i_norm, p.w1)), ad::matmul(i_norm, p.w2)),
                 p.w3);
  const ad::Var out = ad::add(i, h);
  return FfnResult{h.value(), out.value()};
}

BlockTrace block_forward(const Matrix& x, std::span<const std::size_t> positions,
                         const VisibilityMask& mask, const BlockParams& params,
                         const BlockOptions& opts) {
  ad::Tape tape;
  const ad::Var xv = tape.leaf(x);
  const ad::Var m = tape.leaf(mask.additive);
  const auto pv = ad::bind_block(tape, params);
  const auto b = ad::block_forward(xv, positions, m, pv, opts);
  BlockTrace tr{b.attn_out.value(), b.gated_out.value(), b.attn_residual.value(),
                b.ffn_out.value(), b.block_out.value(), {}};
  for (const auto& w : b.attn_weights) tr.attn_weights.push_back(w.value());
  return tr;
}

Matrix head_scores(const Matrix& x_norm, std::span<const std::size_t> positions,
                   const BlockParams& params, const BlockOptions& opts, std::size_t head) {
  const std::size_t dk = head_dim_of(x_norm.cols(), opts);
  if (head >= opts.heads) throw ShapeError("head_scores: head index out of range");
  const RopeConfig cfg{dk, opts.rope_base};
  const Matrix q = rope_rotate(matmul(x_norm, params.wq), positions, cfg);
  const Matrix k = rope_rotate(matmul(x_norm, params.wk), positions, cfg);
  Matrix qh(q.rows(), dk), kh(k.rows(), dk);
  for (std::size_t i = 0; i < q.rows(); ++i)
    for (std::size_t j = 0; j < dk; ++j) {
      qh(i, j) = q(i, head * dk + j);
      kh(i, j) = k(i, head * dk + j);
    }
  return scale(matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dk)));
}

}  // namespace tokenformer
