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

#include "tokenformer/mask_schedule.hpp"

#include <string>

#include "tokenformer/errors.hpp"

namespace tokenformer {

MaskSchedule MaskSchedule::bfts(std::size_t full_layers, std::vector<std::size_t> windows,
                                bool discard_static, std::size_t static_prefix) {
  MaskSchedule s;
  s.layer_windows.assign(full_layers, kFullWindow);
  s.layer_windows.insert(s.layer_windows.end(), windows.begin(), windows.end());
  s.discard_static = discard_static;
  s.static_prefix = static_prefix;
  s.validate();
  return s;
}

MaskSchedule MaskSchedule::all_full(std::size_t depth) {
  MaskSchedule s;
  s.layer_windows.assign(depth, kFullWindow);
  return s;
}

std::size_t MaskSchedule::full_layer_count() const {
  std::size_t n = 0;
  for (auto w : layer_windows) n += w == kFullWindow ? 1 : 0;
  return n;
}

std::vector<std::size_t> MaskSchedule::sliding_windows() const {
  std::vector<std::size_t> out;
  for (auto w : layer_windows)
    if (w != kFullWindow) out.push_back(w);
  return out;
}

void MaskSchedule::validate() const {
  std::size_t prev = kFullWindow;
  for (std::size_t l = 0; l < layer_windows.size(); ++l) {
    const std::size_t w = layer_windows[l];
    if (w == 0) throw ConfigError("MaskSchedule: window width must be >= 1");
    if (w == kFullWindow) continue;
    if (prev != kFullWindow && w >= prev) {
      throw ConfigError("MaskSchedule: sliding windows must shrink strictly with depth (layer " +
                        std::to_string(l) + ": " + std::to_string(w) +
                        " after " + std::to_string(prev) + ")");
    }
    prev = w;
  }
}

MaskSchedule preset_schedule(std::string_view name, std::vector<std::size_t> windows,
                             std::size_t static_prefix, bool discard_static) {
  auto need = [&](std::size_t n) {
    if (windows.size() != n) {
      throw ConfigError("preset " + std::string(name) + " needs " + std::to_string(n) +
                        " windows, got " + std::to_string(windows.size()));
    }
  };
  if (name == "4F") {
    // Window list is irrelevant for an all-full schedule.
    MaskSchedule s = MaskSchedule::all_full(4);
    s.discard_static = discard_static;
    s.static_prefix = static_prefix;
    return s;
  }
  if (name == "2F2S") {
    need(2);
    return MaskSchedule::bfts(2, std::move(windows), discard_static, static_prefix);
  }
  if (name == "4S") {
    need(4);
    return MaskSchedule::bfts(0, std::move(windows), discard_static, static_prefix);
  }
  if (name == "2S2F") {
    need(2);
    MaskSchedule s;
    s.layer_windows = {windows[0], windows[1], kFullWindow, kFullWindow};
    s.discard_static = discard_static;
    s.static_prefix = static_prefix;
    s.validate();
    return s;
  }
  throw ConfigError("unknown schedule preset '" + std::string(name) + "'");
}

VisibilityMask build_layer_mask(const MaskSchedule& schedule, std::size_t layer,
                                std::size_t seq_len) {
  if (layer >= schedule.depth()) {
    throw ConfigError("build_layer_mask: layer " + std::to_string(layer) + " out of range for depth " +
                      std::to_string(schedule.depth()));
  }
  const std::size_t w = schedule.window(layer);
  const bool discard = schedule.discard_static && w != kFullWindow;
  const std::size_t m = schedule.static_prefix;
  VisibilityMask mask{Matrix(seq_len, seq_len, kMasked)};
  for (std::size_t i = 0; i < seq_len; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      if (i - j >= w) continue;
      if (discard && i >= m && j < m) continue;
      mask.additive(i, j) = 0.0;
    }
  }
  return mask;
}

VisibilityMask causal_mask(std::size_t seq_len) {
  return build_layer_mask(MaskSchedule::all_full(1), 0, seq_len);
}

std::size_t receptive_width(const VisibilityMask& mask, std::size_t i) {
  std::size_t n = 0;
  for (std::size_t j = 0; j < mask.size(); ++j) n += mask.visible(i, j) ? 1 : 0;
  return n;
}

}  // namespace tokenformer
