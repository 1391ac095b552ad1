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


// Acceptance run: one PASS/FAIL line per criterion. Exit status is nonzero
// when any selected criterion fails.

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "tokenformer/backbone.hpp"
#include "tokenformer/complexity_model.hpp"
#include "tokenformer/diagnostics.hpp"
#include "tokenformer/experiments.hpp"
#include "tokenformer/interaction_block.hpp"
#include "tokenformer/linalg.hpp"
#include "tokenformer/trainer.hpp"

using namespace tokenformer;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    notes.push_back(std::string(ok ? "ok   " : "FAIL ") + what);
  }
};

std::string fmt(const char* f, double a) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}
std::string fmt(const char* f, double a, double b) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (double& v : m.values()) v = rng.normal();
  return m;
}

double row_norm(const Matrix& m, std::size_t i) {
  double s = 0;
  for (double v : m.row(i)) s += v * v;
  return std::sqrt(s);
}

// ---- 1 ----
Outcome gradients() {
  Outcome o;
  const auto t0 = Clock::now();
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const TinySetup t = tiny_gradcheck_setup(seed);
    const bool shape = t.cfg.dim == 16 && t.cfg.heads == 2 && t.cfg.depth == 4 && t.cfg.nlir &&
                       t.cfg.schedule.discard_static && t.stream.size() == 12 &&
                       t.cfg.schedule.layer_windows ==
                           std::vector<std::size_t>{kFullWindow, kFullWindow, 6, 3};
    o.check(shape, "seed " + std::to_string(seed) + " setup d=16 h=2 depth 4 2F2S[6,3] NLIR discard S_L=12");
    const GradcheckReport r = gradcheck(t.cfg, t.params, t.stream, 1e-5);
    std::string worst;
    double w = -1;
    for (const auto& e : r.entries)
      if (e.max_rel_err > w) w = e.max_rel_err, worst = e.name;
    o.check(r.max_rel_err <= 1e-4, "seed " + std::to_string(seed) + fmt(" max rel err %.3g", r.max_rel_err) +
                                       " (worst " + worst + ", " + std::to_string(r.entries.size()) + " tensors)");
  }
  const double dt = seconds_since(t0);
  o.check(dt < 60.0, fmt("runtime %.1f s < 60 s", dt));
  return o;
}

// ---- 2 ----
Outcome rope_invariants() {
  Outcome o;
  Rng rng(2024);
  const RopeConfig rc{16, 10000.0};
  double norm_err = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix x = random_matrix(32, 64, rng);
    std::vector<std::size_t> pos(32);
    for (auto& p : pos) p = rng.below(100000);
    const Matrix y = rope_rotate(x, pos, rc);
    for (std::size_t i = 0; i < 32; ++i) norm_err = std::max(norm_err, std::abs(row_norm(y, i) - row_norm(x, i)));
  }
  o.check(norm_err <= 1e-12, fmt("norm preservation max |dnorm| %.3g <= 1e-12", norm_err));

  double shift_err = 0;
  BlockOptions bo;
  bo.heads = 4;
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = BlockParams::init(64, 128, rng, 0.2);
    const std::size_t n = 24;
    const Matrix x = random_matrix(n, 64, rng);
    std::vector<std::size_t> base(n), moved(n);
    const std::size_t delta = 1 + rng.below(5000);
    for (std::size_t i = 0; i < n; ++i) base[i] = i, moved[i] = i + delta;
    const auto mask = causal_mask(n);
    const auto a = attention(x, base, mask, p, bo), b = attention(x, moved, mask, p, bo);
    for (std::size_t h = 0; h < bo.heads; ++h) shift_err = std::max(shift_err, max_abs_diff(a.weights[h], b.weights[h]));
  }
  o.check(shift_err <= 1e-10, fmt("uniform shift max |dweight| %.3g <= 1e-10", shift_err));

  // Static tokens taken from a real stream layout.
  ModelConfig c;
  c.dim = 64;
  c.heads = 4;
  c.depth = 1;
  c.field_vocab = 20;
  c.item_vocab = 50;
  c.schedule = MaskSchedule::all_full(1);
  Record rec;
  for (int f = 0; f < 6; ++f) rec.fields.push_back(rng.below(20));
  for (int t = 0; t < 10; ++t) rec.history.push_back({rng.below(50), rng.below(4)});
  rec.targets = {rng.below(50)};
  rec.target_actions = {0};
  const TokenStream s = stream_for(c, rec);
  const ModelParams mp = ModelParams::init(c, rng);
  const Matrix xn = rms_normalize_rows(embed_stream(s, mp.embed), c.rms_eps);
  std::vector<std::size_t> stat;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s.types[i] == TokenType::Field) stat.push_back(i);
  double static_err = 0;
  const Matrix q = matmul(xn, mp.blocks[0].wq), k = matmul(xn, mp.blocks[0].wk);
  const std::size_t dk = 16;
  for (std::size_t h = 0; h < 4; ++h) {
    const Matrix sc = head_scores(xn, s.positions, mp.blocks[0], c.block_options(), h);
    for (std::size_t i : stat)
      for (std::size_t j : stat) {
        double dot = 0;
        for (std::size_t cc = 0; cc < dk; ++cc) dot += q(i, h * dk + cc) * k(j, h * dk + cc);
        static_err = std::max(static_err, std::abs(sc(i, j) - dot / std::sqrt(double(dk))));
      }
  }
  o.check(stat.size() == 6, "six static tokens in the stream");
  o.check(static_err <= 1e-10, fmt("static-static scores vs plain dot products %.3g <= 1e-10", static_err));
  return o;
}

// ---- 3 ----
Outcome schedule_oracle() {
  Outcome o;
  Rng rng(33);
  std::size_t identical = 0;
  for (int trial = 0; trial < 20; ++trial) {
    ModelConfig c;
    c.depth = 1 + rng.below(4);
    c.heads = 1 + rng.below(2);
    c.dim = 8 * c.heads;
    c.actions = 4;
    c.field_vocab = 12;
    c.item_vocab = 30;
    c.nlir = rng.uniform() < 0.5;
    c.init_std = 0.3;
    const std::size_t m = 1 + rng.below(4);
    c.schedule = MaskSchedule::bfts(c.depth, {}, true, m);  // no sliding layers
    Rng prng(1000 + trial);
    const ModelParams p = ModelParams::init(c, prng);
    Record r;
    for (std::size_t i = 0; i < m; ++i) r.fields.push_back(rng.below(12));
    for (std::size_t i = 0, t = 1 + rng.below(8); i < t; ++i) r.history.push_back({rng.below(30), rng.below(4)});
    r.targets = {rng.below(30)};
    r.target_actions = {rng.below(4)};
    const TokenStream s = stream_for(c, r);
    const ForwardResult f = forward(s, p, c);
    const auto v = oracle::vanilla_decoder(s, p, c);
    bool same = f.logits == v.logits && f.trace.x0 == v.trace.x0 &&
                f.trace.layers.size() == v.trace.layers.size();
    for (std::size_t l = 0; same && l < v.trace.layers.size(); ++l) {
      const auto& a = f.trace.layers[l];
      const auto& b = v.trace.layers[l];
      same = a.attn_out == b.attn_out && a.gated_out == b.gated_out && a.attn_residual == b.attn_residual &&
             a.ffn_out == b.ffn_out && a.block_out == b.block_out && a.attn_weights == b.attn_weights;
    }
    identical += same;
  }
  o.check(identical == 20, std::to_string(identical) + "/20 instances bit-identical (logits and trace)");
  return o;
}

// ---- 4 ----
Matrix signed_axes(std::size_t used, std::size_t d, double len) {
  Matrix m(2 * used, d);
  for (std::size_t j = 0; j < used; ++j) m(2 * j, j) = len, m(2 * j + 1, j) = -len;
  return m;
}

Outcome spectral_oracle() {
  Outcome o;
  Rng rng(44);
  double rank_err = 0, spec_err = 0;
  for (int trial = 0; trial < 50; ++trial) {
    Matrix x = random_matrix(50, 8, rng);
    // uneven column scales so the spectrum is not flat
    for (std::size_t i = 0; i < 50; ++i)
      for (std::size_t j = 0; j < 8; ++j) x(i, j) *= 1.0 + 0.5 * double(j);
    const auto sv = oracle::gram_singular_values(oracle::center(x));
    const RankResult r = rank_summary(x);
    rank_err = std::max(rank_err, std::abs(r.r_eff - oracle::entropy_rank(sv)));
    for (std::size_t k = 0; k < sv.size(); ++k) spec_err = std::max(spec_err, std::abs(r.spectrum[k] - sv[k] / sv[0]));
  }
  o.check(rank_err <= 1e-8, fmt("random 50x8: r_eff vs Gram oracle %.3g <= 1e-8", rank_err));
  o.check(spec_err <= 1e-8, fmt("random 50x8: normalized spectrum vs Gram oracle %.3g <= 1e-8", spec_err));

  const double uni = effective_rank(signed_axes(8, 8, 1.7));
  o.check(std::abs(uni - 8.0) <= 1e-10, fmt("uniform spectrum r_eff %.15g = d", uni));
  Matrix one(40, 8);
  const double dir[8] = {1, -2, 0.5, 3, 0, 1, -1, 2};
  for (std::size_t i = 0; i < 40; ++i) {
    const double t = rng.normal();
    for (std::size_t j = 0; j < 8; ++j) one(i, j) = t * dir[j];
  }
  const double r1 = effective_rank(one);
  o.check(std::abs(r1 - 1.0) <= 1e-10, fmt("rank-1 r_eff %.15g", r1));
  const double r2 = effective_rank(signed_axes(2, 8, 3.0));
  o.check(std::abs(r2 - 2.0) <= 1e-10, fmt("two equal singular values r_eff %.15g", r2));
  return o;
}

// ---- 5 ----
Outcome mi_estimators() {
  Outcome o;
  const auto t0 = Clock::now();
  // 8 samples: (0,0)x3 (0,1)x1 (1,0)x1 (1,1)x3
  const std::vector<std::size_t> a = {0, 0, 0, 0, 1, 1, 1, 1}, b = {0, 0, 0, 1, 0, 1, 1, 1};
  const double hand = 0.75 * std::log(1.5) + 0.25 * std::log(0.5);
  const double got = discrete_mi(a, b);
  // 3x2 table with an empty cell: counts (0,0)=2 (1,0)=1 (1,1)=1 (2,1)=2
  const std::vector<std::size_t> c = {0, 0, 1, 1, 2, 2}, d = {0, 0, 0, 1, 1, 1};
  const double hand2 = (2.0 / 6) * std::log((2.0 / 6) / ((2.0 / 6) * 0.5)) * 2 +
                       (1.0 / 6) * std::log((1.0 / 6) / ((2.0 / 6) * 0.5)) * 2;
  const double got2 = discrete_mi(c, d);
  o.check(std::abs(got - hand) <= 1e-15 && std::abs(got2 - hand2) <= 1e-15,
          fmt("discrete MI vs hand tables: %.17g, %.17g", got - hand, got2 - hand2));

  Rng rng(55);
  const std::size_t n = 5000;
  std::vector<double> x(n);
  std::vector<std::size_t> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = rng.below(2);
    x[i] = double(y[i]) + rng.normal(0.0, 0.01);
  }
  const double ln2 = ksg_mi_1d(x, y, 3);
  o.check(std::abs(ln2 - std::log(2.0)) <= 0.1 * std::log(2.0), fmt("KSG X=Y+noise: %.4f vs ln 2 = %.4f", ln2, std::log(2.0)));

  double worst = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng r(5500 + seed);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = r.normal();
      y[i] = r.below(2);
    }
    const double v = ksg_mi_1d(x, y, 3);
    if (std::abs(v) > std::abs(worst)) worst = v;
  }
  o.check(std::abs(worst) <= 0.02, fmt("KSG null over 10 seeds, worst %.4f within +-0.02", worst));
  const double dt = seconds_since(t0);
  o.check(dt < 120.0, fmt("runtime %.1f s < 120 s", dt));
  return o;
}

// ---- 6 ----
Outcome cost_model() {
  Outcome o;
  bool exact = true;
  for (std::size_t L : {64u, 128u, 333u, 1024u})
    for (std::size_t d : {16u, 64u})
      for (std::size_t w : {1u, 7u, 32u, 64u})
        exact = exact && attention_flops(L, d, w) / attention_flops(L, d) == double(w) / double(L);
  o.check(exact, "window/full attention-core ratio == w/L exactly (32 cases)");

  const std::size_t L = 128, d = 64;
  Rng rng(66);
  BlockOptions bo;
  bo.heads = 4;
  const auto p = BlockParams::init(d, 2 * d, rng, 0.1);
  const Matrix x = random_matrix(L, d, rng);
  std::vector<std::size_t> pos(L);
  for (std::size_t i = 0; i < L; ++i) pos[i] = i;
  const auto mask = causal_mask(L);
  op_counter::reset();
  (void)attention(x, pos, mask, p, bo);
  const double core = 2.0 * (double(op_counter::multiply_adds()) - 4.0 * L * d * d);
  const double core_ratio = core / attention_flops(L, d);
  op_counter::reset();
  (void)block_forward(x, pos, mask, p, bo);
  const double block = 2.0 * double(op_counter::multiply_adds());
  CostQuery cq;
  cq.L = L;
  cq.d = d;
  cq.schedule = MaskSchedule::all_full(1);
  const double block_ratio = block / backbone_flops(cq).total;
  o.check(std::abs(core_ratio - 1) <= 0.05, fmt("attention core counted/model %.4f within 5%%", core_ratio));
  o.check(std::abs(block_ratio - 1) <= 0.05, fmt("whole block counted/model %.4f within 5%%", block_ratio));

  std::size_t agree = 0, total = 0;
  std::string first_bad;
  for (std::size_t B : {1u, 2u, 8u, 32u, 128u})
    for (std::size_t Lu : {16u, 64u, 128u, 256u, 512u})
      for (std::size_t N : {std::size_t{1}, Lu / 4, Lu / 2, Lu - 1, Lu}) {
        const auto sc = serving_cost({B, Lu, 16, N, 64});
        const bool pos_gap = sc.gap > 0;
        const bool claim = B > 1 && N < Lu;
        ++total;
        if (pos_gap == claim) {
          ++agree;
        } else if (first_bad.empty()) {
          first_bad = "B=" + std::to_string(B) + " Lu=" + std::to_string(Lu) + " N=" + std::to_string(N) +
                      fmt(" gap %.4g", sc.gap);
        }
      }
  o.check(agree == total, "gap > 0 iff B>1 and N<Lu: " + std::to_string(agree) + "/" + std::to_string(total) +
                              " grid points agree" + (first_bad.empty() ? "" : ", first counterexample " + first_bad));
  const auto sp = serving_cost({64, 256, 16, 16, 64});
  o.check(sp.speedup > 2.0, fmt("decoupled speedup %.2fx > 2x at B=64 Lu=256 La=16 N=16", sp.speedup));
  return o;
}

// ---- 7 and 8 ----
ExperimentConfig scp_experiment() {
  ExperimentConfig e;  // 1000 users, fields {4,4,8,16,32,64}, T=64, A=4, preset T
  e.train.epochs = 5;
  e.train.eval_each_epoch = false;
  return e;
}

struct ScpRuns {
  std::map<std::string, std::vector<VariantResult>> by_variant;
  double seconds = 0;
};

void run_variants(ScpRuns& runs, const ExperimentConfig& e, const std::vector<std::string>& names,
                  std::size_t seeds, bool verbose) {
  for (std::uint64_t s = 0; s < seeds; ++s)
    for (const auto& n : names) {
      if (runs.by_variant[n].size() > s) continue;
      const auto t0 = Clock::now();
      runs.by_variant[n].push_back(run_variant(e, find_variant(n), s));
      const double dt = seconds_since(t0);
      runs.seconds += dt;
      if (verbose) std::cerr << "  " << variant_csv_row(runs.by_variant[n].back()) << fmt(" (%.0f s)", dt) << "\n";
    }
}

double med(const ScpRuns& r, const std::string& v, double VariantResult::*field) {
  std::vector<double> xs;
  for (const auto& x : r.by_variant.at(v)) xs.push_back(x.*field);
  return median(xs);
}

Outcome scp(ScpRuns& runs, const ExperimentConfig& e, std::size_t seeds, bool verbose) {
  Outcome o;
  const auto& d = e.data;
  const bool setup = d.users == 1000 && d.field_cards.size() == 6 &&
                     std::count(d.field_cards.begin(), d.field_cards.end(), 4u) == 2 && d.history == 64 &&
                     d.actions == 4 && preset_config(e.model_preset).dim == 64 &&
                     preset_config(e.model_preset).depth == 4 && seeds == 3;
  o.check(setup, "1000 users, M=6 with two cardinality-4 fields, T=64, A=4, d=64 depth 4, 3 seeds");
  run_variants(runs, e, {"vanilla", "seq_only", "nlir", "bfts", "both"}, seeds, verbose);
  const double rv = med(runs, "vanilla", &VariantResult::final_rank);
  for (const char* v : {"seq_only", "nlir", "bfts"}) {
    const double x = med(runs, v, &VariantResult::final_rank);
    o.check(rv < x, fmt("median r_eff vanilla-joint %.3f < ", rv) + v + fmt(" %.3f", x));
  }
  const double mv = med(runs, "vanilla", &VariantResult::mi);
  const double ms = med(runs, "seq_only", &VariantResult::mi);
  const double mb = med(runs, "both", &VariantResult::mi);
  o.check(mv >= ms, fmt("median KMeans MI (K=32) joint %.4f >= sequence-only %.4f", mv, ms));
  o.check(mb >= mv, fmt("median KMeans MI (K=32) +BFTS+NLIR %.4f >= vanilla-joint %.4f", mb, mv));
  o.check(runs.seconds < 1800.0, fmt("runtime %.0f s < 1800 s", runs.seconds));
  return o;
}

Outcome ablation(ScpRuns& runs, const ExperimentConfig& e, std::size_t seeds, bool verbose) {
  Outcome o;
  // vanilla and bfts are 4F and 2F2S without the gate.
  run_variants(runs, e, {"vanilla", "bfts", "4S", "2S2F"}, seeds, verbose);
  const double f4 = med(runs, "vanilla", &VariantResult::auc);
  const double f2s2 = med(runs, "bfts", &VariantResult::auc);
  const double s4 = med(runs, "4S", &VariantResult::auc);
  const double s2f2 = med(runs, "2S2F", &VariantResult::auc);
  o.check(f2s2 >= f4, fmt("median held-out AUC 2F2S %.5f >= 4F %.5f", f2s2, f4));
  o.check(f4 >= s4, fmt("median held-out AUC 4F %.5f >= 4S %.5f", f4, s4));
  o.check(f2s2 > s2f2, fmt("median held-out AUC 2F2S %.5f > 2S2F %.5f", f2s2, s2f2));
  return o;
}

// ---- 9 ----
Outcome training_sanity() {
  Outcome o;
  ExperimentConfig e;
  e.data.history = 16;
  const SynthDataset ds = generate(e.data);
  const ModelConfig cfg = variant_model(e, find_variant("both"), e.data);
  std::vector<TokenStream> streams;
  for (const auto& r : ds.records) streams.push_back(stream_for(cfg, r));
  TrainConfig t;
  t.seed = 9;
  t.epochs = 1000;
  t.max_steps = 200;
  t.batch_size = 32;
  t.adamw.lr = 1e-3;
  t.eval_each_epoch = false;
  const TrainResult a = train(cfg, streams, {}, t);
  const double ce = evaluate(cfg, a.params, streams, EvalScope::AllSupervised).loss;
  const double bound = 0.8 * std::log(double(cfg.actions));
  o.check(a.run.steps.size() == 200, std::to_string(a.run.steps.size()) + " steps at batch 32, lr 0.001");
  o.check(ce < bound, fmt("training-set CE after 200 steps %.4f < 0.8 ln A = %.4f", ce, bound));
  const TrainResult b = train(cfg, streams, {}, t);
  bool same = a.run.steps.size() == b.run.steps.size();
  for (std::size_t i = 0; same && i < a.run.steps.size(); ++i)
    same = a.run.steps[i].loss == b.run.steps[i].loss && a.run.steps[i].grad_norm == b.run.steps[i].grad_norm;
  std::ostringstream ca, cb;
  write_checkpoint(ca, make_train_checkpoint(cfg, a.params, a.state, t.seed));
  write_checkpoint(cb, make_train_checkpoint(cfg, b.params, b.state, t.seed));
  o.check(same && ca.str() == cb.str(), "same seed: step logs and checkpoint bytes identical");
  return o;
}

// ---- 10 ----
Outcome loss_metrics() {
  Outcome o;
  Rng rng(10);
  double ce_err = 0;
  for (std::size_t A : {2u, 4u, 7u}) {
    Matrix z(9, A, rng.normal());
    std::vector<std::size_t> y(9);
    for (auto& v : y) v = rng.below(A);
    ce_err = std::max(ce_err, std::abs(ce_loss(z, y) - std::log(double(A))));
  }
  o.check(ce_err <= 1e-12, fmt("uniform-logit CE vs ln A %.3g <= 1e-12", ce_err));
  const double tie = compute_auc(std::vector<double>(10, 0.42), std::vector<std::uint8_t>{1, 0, 0, 1, 1, 0, 0, 0, 1, 0});
  const double half = compute_auc(std::vector<double>{0.2, 0.7, 0.7}, std::vector<std::uint8_t>{0, 0, 1});
  o.check(tie == 0.5 && half == 0.75, fmt("AUC ties count one half: all tied %.3f, one tied pair %.3f", tie, half));

  ModelConfig c;
  c.depth = 2;
  c.dim = 16;
  c.heads = 2;
  c.field_vocab = 12;
  c.item_vocab = 30;
  c.nlir = true;
  c.init_std = 0.3;
  c.schedule = MaskSchedule::bfts(1, {4}, true, 3);
  c.supervision = SupervisionMode::NewImpressionOnly;
  c.with_actions = false;  // otherwise the labels are also inputs
  Rng prng(11);
  const ModelParams p = ModelParams::init(c, prng);
  bool invariant = true;
  for (int trial = 0; trial < 10; ++trial) {
    Record r;
    r.fields = {rng.below(12), rng.below(12), rng.below(12)};
    for (int t = 0; t < 8; ++t) r.history.push_back({rng.below(30), rng.below(4)});
    r.targets = {rng.below(30), rng.below(30)};
    r.target_actions = {rng.below(4), rng.below(4)};
    const ForwardResult a = forward(stream_for(c, r), p, c);
    for (auto& h : r.history) h.action = (h.action + 1 + rng.below(3)) % 4;
    const ForwardResult b = forward(stream_for(c, r), p, c);
    invariant = invariant && ce_loss(a.logits, a.labels) == ce_loss(b.logits, b.labels);
  }
  o.check(invariant, "new-impression-only loss unchanged by relabelling history (10 records)");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tokenformer acceptance checks"};
  std::vector<int> only;
  std::size_t seeds = 3;
  std::size_t epochs = 0;
  bool verbose = false;
  app.add_option("--only", only, "criteria to run (default all)")->delimiter(',');
  app.add_option("--seeds", seeds, "seeds for criteria 7 and 8");
  app.add_option("--epochs", epochs, "override training epochs for criteria 7 and 8");
  app.add_flag("-v,--verbose", verbose, "print per-variant rows");
  CLI11_PARSE(app, argc, argv);
  std::set<int> want(only.begin(), only.end());
  if (want.empty())
    for (int i = 1; i <= 10; ++i) want.insert(i);

  ExperimentConfig e = scp_experiment();
  if (epochs) e.train.epochs = epochs;
  ScpRuns runs;

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradients},
      {"RoPE invariants", rope_invariants},
      {"schedule oracle", schedule_oracle},
      {"spectral diagnostics oracle", spectral_oracle},
      {"MI estimators", mi_estimators},
      {"cost model", cost_model},
      {"SCP directions", [&] { return scp(runs, e, seeds, verbose); }},
      {"ablation directions", [&] { return ablation(runs, e, seeds, verbose); }},
      {"training sanity", training_sanity},
      {"loss and metric checks", loss_metrics},
  };
  std::size_t failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = int(i) + 1;
    if (!want.count(id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& ex) {
      o.check(false, std::string("exception: ") + ex.what());
    }
    for (const auto& n : o.notes) std::cout << "    " << n << "\n";
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << criteria[i].first
              << fmt(" (%.1f s)", seconds_since(t0)) << std::endl;
    failed += !o.pass;
  }
  std::cout << "SUMMARY " << failed << " of " << want.size() << " criteria failed\n";
  return failed ? 1 : 0;
}
