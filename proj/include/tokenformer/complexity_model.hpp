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
#include <cstdint>
#include <vector>

#include "tokenformer/mask_schedule.hpp"

namespace tokenformer {

// FLOPs per (query, key, channel) triple of the attention core: scores and
// aggregation are one multiply-add each, two FLOPs per multiply-add.
inline constexpr double kAttentionConstant = 4.0;

// Core attention cost c * L * min(w, L) * d; w >= L (or kFullWindow) is full.
double attention_flops(std::size_t L, std::size_t d, std::size_t w = kFullWindow);

struct CostQuery {
  std::size_t L = 0;
  std::size_t d = 0;
  std::size_t d_ff = 0;  // 0 means 2d
  MaskSchedule schedule;
  bool nlir = true;
};

struct LayerCost {
  std::size_t window = kFullWindow;
  double attention = 0.0;    // core only
  double projections = 0.0;  // Q, K, V, O and the gate
  double ffn = 0.0;
  double memory = 0.0;       // score entries: L * min(w, L)
  double total() const { return attention + projections + ffn; }
};

struct FlopsReport {
  std::vector<LayerCost> layers;
  double attention = 0.0;
  double total = 0.0;
  double memory = 0.0;
  double memory_full = 0.0;  // depth * L^2
};

// Per layer: attention core, 8 L d^2 for QKVO, 2 L d^2 for the gate when
// enabled, 6 L d d_ff for the three FFN matrices.
FlopsReport backbone_flops(const CostQuery& q);

struct ServingQuery {
  std::size_t B = 1;   // candidates
  std::size_t Lu = 0;  // user tokens
  std::size_t La = 0;  // tokens per candidate
  std::size_t N = 0;   // summary tokens per user
  std::size_t d = 0;
};

struct ServingCost {
  double joint = 0.0;      // c B (Lu + La)^2 d
  double decoupled = 0.0;  // c (Lu^2 + B (N + La)^2) d
  double gap = 0.0;        // joint - decoupled
  double speedup = 0.0;    // joint / decoupled
};

// Throws ConfigError when N > Lu or B == 0.
ServingCost serving_cost(const ServingQuery& q);

}  // namespace tokenformer
