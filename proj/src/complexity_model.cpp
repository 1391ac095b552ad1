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

#include "tokenformer/complexity_model.hpp"

#include <algorithm>
#include <string>

#include "tokenformer/errors.hpp"

namespace tokenformer {

double attention_flops(std::size_t L, std::size_t d, std::size_t w) {
  const double span = static_cast<double>(std::min(w, L));
  return kAttentionConstant * static_cast<double>(L) * span * static_cast<double>(d);
}

FlopsReport backbone_flops(const CostQuery& q) {
  q.schedule.validate();
  const double L = static_cast<double>(q.L);
  const double d = static_cast<double>(q.d);
  const double dff = static_cast<double>(q.d_ff == 0 ? 2 * q.d : q.d_ff);
  FlopsReport r;
  for (std::size_t l = 0; l < q.schedule.depth(); ++l) {
    LayerCost c;
    c.window = q.schedule.window(l);
    c.attention = attention_flops(q.L, q.d, c.window);
    c.projections = 8.0 * L * d * d + (q.nlir ? 2.0 * L * d * d : 0.0);
    c.ffn = 6.0 * L * d * dff;
    c.memory = L * static_cast<double>(std::min(c.window, q.L));
    r.attention += c.attention;
    r.total += c.total();
    r.memory += c.memory;
    r.memory_full += L * L;
    r.layers.push_back(c);
  }
  return r;
}

ServingCost serving_cost(const ServingQuery& q) {
  if (q.B == 0) throw ConfigError("serving: B must be >= 1");
  if (q.N > q.Lu) {
    throw ConfigError("serving: N=" + std::to_string(q.N) + " exceeds L_u=" + std::to_string(q.Lu));
  }
  const double c = kAttentionConstant * static_cast<double>(q.d);
  const double B = static_cast<double>(q.B);
  const double joint_len = static_cast<double>(q.Lu + q.La);
  const double cand_len = static_cast<double>(q.N + q.La);
  const double lu = static_cast<double>(q.Lu);
  ServingCost s;
  s.joint = c * B * joint_len * joint_len;
  s.decoupled = c * (lu * lu + B * cand_len * cand_len);
  s.gap = s.joint - s.decoupled;
  s.speedup = s.decoupled > 0.0 ? s.joint / s.decoupled : 0.0;
  return s;
}

}  // namespace tokenformer
