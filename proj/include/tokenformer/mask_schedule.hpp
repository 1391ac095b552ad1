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
#include <limits>
#include <string_view>
#include <vector>

#include "tokenformer/matrix.hpp"

namespace tokenformer {

// Window value meaning "full causal attention".
inline constexpr std::size_t kFullWindow = std::numeric_limits<std::size_t>::max();

// Per-layer visibility rule. Bottom-full-top-sliding schedules are built with
// bfts(); layer_windows may also be given explicitly (e.g. sliding layers
// first), in which case sliding layers are the ones with a finite window.
struct MaskSchedule {
  std::vector<std::size_t> layer_windows;  // omega(l), kFullWindow for full layers
  bool discard_static = false;
  std::size_t static_prefix = 0;  // M

  static MaskSchedule bfts(std::size_t full_layers, std::vector<std::size_t> windows,
                           bool discard_static, std::size_t static_prefix);
  static MaskSchedule all_full(std::size_t depth);

  std::size_t depth() const { return layer_windows.size(); }
  std::size_t full_layer_count() const;
  std::vector<std::size_t> sliding_windows() const;
  bool is_sliding(std::size_t layer) const { return layer_windows.at(layer) != kFullWindow; }
  std::size_t window(std::size_t layer) const { return layer_windows.at(layer); }

  // Windows >= 1, sliding windows strictly decreasing in layer order.
  void validate() const;
};

// Named presets over four layers: "4F", "2F2S", "2S2F", "4S".
MaskSchedule preset_schedule(std::string_view name, std::vector<std::size_t> windows,
                             std::size_t static_prefix, bool discard_static = true);

// Additive S_L x S_L mask: 0 where visible, kMasked elsewhere.
struct VisibilityMask {
  Matrix additive;

  std::size_t size() const { return additive.rows(); }
  bool visible(std::size_t i, std::size_t j) const { return additive(i, j) == 0.0; }
};

// (i, j) visible iff j <= i and i - j < omega(l). On sliding layers with
// discard_static, queries i >= M never see keys j < M.
VisibilityMask build_layer_mask(const MaskSchedule& schedule, std::size_t layer,
                                std::size_t seq_len);

VisibilityMask causal_mask(std::size_t seq_len);

// Visible entries of row i.
std::size_t receptive_width(const VisibilityMask& mask, std::size_t i);

}  // namespace tokenformer
