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

// Random models and records shared by the unit and integration tests.
#pragma once

#include <optional>
#include <vector>

#include "tokenformer/backbone.hpp"
#include "tokenformer/rng.hpp"
#include "tokenformer/token_stream.hpp"

namespace fixtures {

using namespace tokenformer;

inline ModelConfig small_config(std::size_t depth, std::size_t dim, std::size_t heads,
                                bool nlir) {
  ModelConfig c;
  c.depth = depth;
  c.dim = dim;
  c.heads = heads;
  c.actions = 4;
  c.field_vocab = 12;
  c.item_vocab = 30;
  c.nlir = nlir;
  c.schedule = MaskSchedule::all_full(depth);
  c.init_std = 0.3;
  return c;
}

// Init plus perturbed gains and a non-zero head bias, so no parameter sits at
// a special value.
inline ModelParams random_params(const ModelConfig& c, std::uint64_t seed) {
  Rng rng(seed);
  ModelParams p = ModelParams::init(c, rng);
  for (auto& b : p.blocks) {
    for (double& v : b.g_attn.values()) v = 1.0 + rng.normal(0.0, 0.2);
    for (double& v : b.g_ffn.values()) v = 1.0 + rng.normal(0.0, 0.2);
  }
  for (double& v : p.head_b.values()) v = rng.normal(0.0, 0.3);
  return p;
}

inline Record random_record(Rng& rng, const ModelConfig& c, std::size_t m, std::size_t t,
                            std::size_t k) {
  Record r;
  for (std::size_t i = 0; i < m; ++i) r.fields.push_back(rng.below(c.field_vocab));
  for (std::size_t i = 0; i < t; ++i)
    r.history.push_back({rng.below(c.item_vocab), rng.below(c.actions)});
  for (std::size_t i = 0; i < k; ++i) {
    r.targets.push_back(rng.below(c.item_vocab));
    r.target_actions.emplace_back(rng.below(c.actions));
  }
  return r;
}

}  // namespace fixtures
