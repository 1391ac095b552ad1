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


#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "tokenformer/complexity_model.hpp"
#include "tokenformer/errors.hpp"
#include "tokenformer/interaction_block.hpp"
#include "tokenformer/linalg.hpp"
#include "tokenformer/rng.hpp"

using namespace tokenformer;

namespace {

double ld2(std::size_t L, std::size_t d) { return static_cast<double>(L) * d * d; }

CostQuery query(std::size_t L, std::size_t d, MaskSchedule s, bool nlir = true) {
  CostQuery q;
  q.L = L;
  q.d = d;
  q.schedule = std::move(s);
  q.nlir = nlir;
  return q;
}

}  // namespace

TEST(AttentionFlops, ClosedForms) {
  EXPECT_EQ(attention_flops(128, 64), 4.0 * 128 * 128 * 64);
  EXPECT_EQ(attention_flops(128, 64, 16), 4.0 * 128 * 16 * 64);
  EXPECT_EQ(attention_flops(1024, 8, 32) / attention_flops(1024, 8), 1.0 / 32);
  // w >= L is full
  EXPECT_EQ(attention_flops(100, 8, 100), attention_flops(100, 8));
  EXPECT_EQ(attention_flops(100, 8, 500), attention_flops(100, 8));
  EXPECT_EQ(attention_flops(0, 8), 0.0);
}

TEST(AttentionFlopsProperty, RatioIsWOverL) {
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    const std::size_t L = 1 + rng.below(4096);
    const std::size_t w = 1 + rng.below(L);
    const std::size_t d = 1 + rng.below(512);
    EXPECT_DOUBLE_EQ(attention_flops(L, d, w) / attention_flops(L, d),
                     static_cast<double>(w) / static_cast<double>(L));
  }
}

TEST(AttentionFlops, MatchesInstrumentedCounter) {
  const std::size_t L = 128, d = 64;
  Rng rng(2);
  for (std::size_t heads : {1u, 4u}) {
    BlockOptions opts;
    opts.heads = heads;
    const auto p = BlockParams::init(d, 2 * d, rng, 0.1);
    const Matrix x = oracle::random_matrix(L, d, rng);
    std::vector<std::size_t> pos(L);
    for (std::size_t i = 0; i < L; ++i) pos[i] = i;
    const auto mask = causal_mask(L);

    op_counter::reset();
    (void)attention(x, pos, mask, p, opts);
    const double attn_mac = static_cast<double>(op_counter::multiply_adds());
    const double core_mac = attn_mac - 4.0 * ld2(L, d);  // QKVO projections
    const double model = attention_flops(L, d);
    EXPECT_NEAR(2.0 * core_mac / model, 1.0, 0.05) << heads;

    op_counter::reset();
    (void)block_forward(x, pos, mask, p, opts);
    const double block_flops = 2.0 * static_cast<double>(op_counter::multiply_adds());
    const auto rep = backbone_flops(query(L, d, MaskSchedule::all_full(1)));
    EXPECT_NEAR(block_flops / rep.total, 1.0, 0.05) << heads;
  }
}

TEST(BackboneFlops, LayerTerms) {
  const std::size_t L = 256, d = 32;
  const auto rep = backbone_flops(query(L, d, MaskSchedule::bfts(2, {32, 16}, true, 4)));
  ASSERT_EQ(rep.layers.size(), 4u);
  const double proj = 8.0 * ld2(L, d) + 2.0 * ld2(L, d);
  const double ffn = 6.0 * L * d * (2.0 * d);
  const std::size_t windows[4] = {kFullWindow, kFullWindow, 32, 16};
  double sum = 0.0, att = 0.0, mem = 0.0;
  for (std::size_t l = 0; l < 4; ++l) {
    const auto& c = rep.layers[l];
    EXPECT_EQ(c.window, windows[l]);
    EXPECT_EQ(c.attention, attention_flops(L, d, windows[l]));
    EXPECT_EQ(c.projections, proj);
    EXPECT_EQ(c.ffn, ffn);
    EXPECT_EQ(c.memory, static_cast<double>(L) * std::min<std::size_t>(windows[l], L));
    sum += c.total();
    att += c.attention;
    mem += c.memory;
  }
  EXPECT_DOUBLE_EQ(rep.total, sum);
  EXPECT_DOUBLE_EQ(rep.attention, att);
  EXPECT_DOUBLE_EQ(rep.memory, mem);
  EXPECT_EQ(rep.memory_full, 4.0 * L * L);

  const auto no_gate = backbone_flops(query(L, d, MaskSchedule::all_full(1), false));
  EXPECT_EQ(no_gate.layers[0].projections, 8.0 * ld2(L, d));
  auto q = query(L, d, MaskSchedule::all_full(1));
  q.d_ff = 100;
  EXPECT_EQ(backbone_flops(q).layers[0].ffn, 6.0 * L * d * 100);
}

TEST(BackboneFlops, AllFullIsDepthTimesOneLayer) {
  for (std::size_t depth = 1; depth <= 6; ++depth) {
    const auto one = backbone_flops(query(200, 16, MaskSchedule::all_full(1)));
    const auto all = backbone_flops(query(200, 16, MaskSchedule::all_full(depth)));
    EXPECT_DOUBLE_EQ(all.total, static_cast<double>(depth) * one.total);
  }
}

TEST(BackboneFlops, HybridCheaperAndPermutationInvariant) {
  const std::vector<std::size_t> w = {32, 16};
  const auto full = backbone_flops(query(256, 64, preset_schedule("4F", w, 4)));
  const auto fs = backbone_flops(query(256, 64, preset_schedule("2F2S", w, 4)));
  const auto sf = backbone_flops(query(256, 64, preset_schedule("2S2F", w, 4)));
  EXPECT_LT(fs.total, full.total);
  EXPECT_LT(fs.memory, fs.memory_full);
  EXPECT_EQ(fs.total, sf.total);
  EXPECT_EQ(fs.attention, sf.attention);
  EXPECT_EQ(fs.memory, sf.memory);
}

TEST(BackboneFlopsProperty, AdditiveAndOrderInvariant) {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const std::size_t L = 8 + rng.below(300), d = 2 * (1 + rng.below(32));
    const std::size_t full = rng.below(4), sliding = rng.below(4);
    if (full + sliding == 0) continue;
    std::vector<std::size_t> windows;
    std::size_t w = L + 20;
    for (std::size_t l = 0; l < sliding; ++l) {
      w = 1 + rng.below(w);
      windows.push_back(w);
      if (w == 1) break;
    }
    std::sort(windows.begin(), windows.end(), std::greater<>());
    windows.erase(std::unique(windows.begin(), windows.end()), windows.end());
    const auto bottom = MaskSchedule::bfts(full, windows, false, 0);
    // same layer multiset with the full layers moved on top
    MaskSchedule top;
    top.layer_windows = windows;
    top.layer_windows.insert(top.layer_windows.end(), full, kFullWindow);
    double parts = 0.0;
    for (std::size_t lw : bottom.layer_windows) {
      MaskSchedule one;
      one.layer_windows = {lw};
      parts += backbone_flops(query(L, d, one)).total;
    }
    const auto a = backbone_flops(query(L, d, bottom));
    const auto b = backbone_flops(query(L, d, top));
    EXPECT_NEAR(a.total, parts, 1e-12 * parts);
    EXPECT_NEAR(b.total, a.total, 1e-12 * parts);
    EXPECT_NEAR(b.memory, a.memory, 1e-12 * a.memory);
  }
}

TEST(ServingCost, ClosedForms) {
  ServingQuery q{64, 256, 16, 16, 32};
  const auto s = serving_cost(q);
  const double c = 4.0 * 32;
  EXPECT_EQ(s.joint, c * 64 * 272.0 * 272.0);
  EXPECT_EQ(s.decoupled, c * (256.0 * 256.0 + 64 * 32.0 * 32.0));
  EXPECT_EQ(s.gap, s.joint - s.decoupled);
  EXPECT_DOUBLE_EQ(s.speedup, s.joint / s.decoupled);
  EXPECT_GT(s.speedup, 2.0);
}

TEST(ServingCost, SingleCandidateGapClosedForm) {
  // With one candidate the one-time user term is not amortised:
  // gap = c d [2 La (Lu - N) - N^2].
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    ServingQuery q;
    q.B = 1;
    q.Lu = 1 + rng.below(300);
    q.La = rng.below(50);
    q.N = rng.below(q.Lu + 1);
    q.d = 1 + rng.below(64);
    const double want = 4.0 * q.d *
                        (2.0 * static_cast<double>(q.La) * static_cast<double>(q.Lu - q.N) -
                         static_cast<double>(q.N) * static_cast<double>(q.N));
    EXPECT_NEAR(serving_cost(q).gap, want, 1e-9 * std::max(1.0, std::abs(want)));
  }
}

TEST(ServingCostProperty, LinearJointAffineDecoupled) {
  Rng rng(5);
  for (int t = 0; t < 100; ++t) {
    ServingQuery q;
    q.Lu = 1 + rng.below(200);
    q.La = rng.below(40);
    q.N = rng.below(q.Lu + 1);
    q.d = 1 + rng.below(64);
    q.B = 1;
    const auto s1 = serving_cost(q);
    q.B = 2 + rng.below(100);
    const auto sb = serving_cost(q);
    const double B = static_cast<double>(q.B);
    EXPECT_NEAR(sb.joint, B * s1.joint, 1e-9 * sb.joint);
    const double slope = 4.0 * q.d * std::pow(static_cast<double>(q.N + q.La), 2);
    EXPECT_NEAR(sb.decoupled - s1.decoupled, (B - 1) * slope, 1e-9 * sb.decoupled);
  }
}

TEST(ServingCost, Errors) {
  EXPECT_THROW(serving_cost({1, 10, 4, 11, 8}), ConfigError);
  EXPECT_THROW(serving_cost({0, 10, 4, 2, 8}), ConfigError);
  EXPECT_NO_THROW(serving_cost({1, 10, 4, 10, 8}));
}
