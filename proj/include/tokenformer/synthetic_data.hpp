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
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tokenformer/token_stream.hpp"

namespace tokenformer {

// Which signals drive the action labels.
enum class LabelMode { Joint, StaticOnly, SequenceOnly };

std::string_view to_string(LabelMode m);
LabelMode parse_label_mode(std::string_view s);

struct SynthSpec {
  std::size_t users = 1000;
  // Per-field cardinalities. Field 0 is independent of the user latent; it
  // shifts the label directly and through its interaction with the item
  // cluster. The others are drawn from Zipf distributions whose ranking
  // depends on the latent.
  std::vector<std::size_t> field_cards = {4, 4, 8, 16, 32, 64};
  std::size_t items = 512;
  std::size_t clusters = 8;  // item cluster = id mod clusters
  std::size_t actions = 4;
  std::size_t history = 64;
  std::size_t targets = 1;
  std::size_t latent_dim = 8;
  // Label temperature divisor. inf gives labels independent of every input,
  // 0 makes each label the arg max of its scores.
  double noise = 1.0;
  double zipf = 1.1;
  double markov_mix = 0.8;  // weight of the user interest term in cluster transitions
  // Signal strengths.
  double affinity_weight = 1.0;
  double field_weight = 1.5;        // main effect of field 0
  double interaction_weight = 1.0;  // field 0 x item cluster
  double recency_weight = 1.0;
  std::vector<double> action_priors = {0.55, 0.25, 0.12, 0.08};
  LabelMode label_mode = LabelMode::Joint;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t field_vocab() const;
  std::vector<std::size_t> field_offsets() const;
};

std::map<std::string, std::string> synth_spec_to_map(const SynthSpec& s);
SynthSpec synth_spec_from_map(const std::map<std::string, std::string>& kv);

struct SynthDataset {
  SynthSpec spec;
  std::vector<Record> records;  // one per user, fields stored as global ids
  std::vector<double> action_bias;  // calibrated logit offsets
};

SynthDataset generate(const SynthSpec& spec);

struct Split {
  std::vector<std::size_t> train, valid, test;  // user indices
};

// Deterministic user-level split: permutation from seed, then counts
// floor(f * n) for train and valid, remainder to test.
Split split_users(std::size_t n, double train_frac, double valid_frac, double test_frac,
                  std::uint64_t seed);

std::vector<Record> select(std::span<const Record> records, std::span<const std::size_t> idx);

// 64-bit FNV-1a over the canonical key=value text of the spec.
std::uint64_t spec_hash(const SynthSpec& s);

}  // namespace tokenformer
