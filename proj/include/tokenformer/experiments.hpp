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

#include "tokenformer/backbone.hpp"
#include "tokenformer/diagnostics.hpp"
#include "tokenformer/synthetic_data.hpp"
#include "tokenformer/trainer.hpp"

namespace tokenformer {

// One row of the ablation grid.
struct VariantDef {
  std::string name;
  std::string schedule;  // 4F, 2F2S, 2S2F, 4S
  bool nlir = false;
  bool use_fields = true;
};

// vanilla, seq_only, nlir, bfts, both, 4S, 2S2F.
std::vector<VariantDef> default_variants();
VariantDef find_variant(std::string_view name);

struct ExperimentConfig {
  SynthSpec data;
  std::string model_preset = "T";
  TrainConfig train;
  std::vector<std::size_t> bfts_windows = {32, 16};
  std::vector<std::size_t> sliding4_windows = {64, 48, 32, 16};
  bool discard_static = true;
  SupervisionMode supervision = SupervisionMode::UserCentric;
  double train_frac = 0.7, valid_frac = 0.1, test_frac = 0.2;
  std::size_t mi_clusters = 32;
  MiRepresentation mi_representation = MiRepresentation::Logits;
  EvalScope eval_scope = EvalScope::AllSupervised;
  // Model keys applied on top of the preset (depth, dim, heads, ffn_dim,
  // rope_base, rms_eps, init_std, gate_from_normalized, with_actions).
  std::map<std::string, std::string> model_overrides;
};

std::map<std::string, std::string> experiment_to_map(const ExperimentConfig& e);
// Overlays `kv` on `base`. Unknown keys throw ConfigError.
ExperimentConfig experiment_from_map(const std::map<std::string, std::string>& kv,
                                     ExperimentConfig base = {});

ModelConfig variant_model(const ExperimentConfig& e, const VariantDef& v, const SynthSpec& data);

struct VariantResult {
  std::string variant;
  std::uint64_t seed = 0;
  double auc = 0.0;           // held-out macro AUC in eval_scope
  double target_auc = 0.0;    // held-out macro AUC on target tokens only
  double accuracy = 0.0;
  double loss = 0.0;
  double final_rank = 0.0;    // r_eff of last-layer block output, Item tokens
  double mi = 0.0;            // weighted KMeans MI at mi_clusters
  double flops = 0.0;         // backbone FLOPs for one stream
  double train_final_loss = 0.0;
  std::size_t steps = 0;
};

// Held-out analysis of a trained model: metrics, last-layer rank, MI.
VariantResult analyze(const ExperimentConfig& e, const ModelConfig& cfg, const ModelParams& params,
                      std::span<const TokenStream> test, std::uint64_t seed);

// Seed s drives the dataset, the split and the model init.
VariantResult run_variant(const ExperimentConfig& e, const VariantDef& v, std::uint64_t seed);

std::string variant_csv_header();
std::string variant_csv_row(const VariantResult& r);

}  // namespace tokenformer
