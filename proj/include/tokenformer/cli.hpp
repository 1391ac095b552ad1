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
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "tokenformer/complexity_model.hpp"
#include "tokenformer/experiments.hpp"

namespace tokenformer::cli {

inline constexpr const char* kVersion = "0.1.0";

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumerical = 4;

// Everything one command needs. Keys outside the experiment block:
//   variant, variants, seeds, data.path, out_dir, threads,
//   custom.schedule, custom.nlir, custom.fields,
//   flops.lengths, serving.B, serving.Lu, serving.La, serving.N,
//   diag.max_streams, gradcheck.tol, gradcheck.depth
struct RunConfig {
  ExperimentConfig exp;
  std::string variant = "both";
  VariantDef custom{"custom", "2F2S", true, true};
  std::vector<std::string> variants;  // empty = every default variant
  std::vector<std::uint64_t> seeds = {0};
  std::string data_path;  // records file; empty = synthesize from data.*
  std::string out_dir = "tokenformer_out";
  std::size_t threads = 1;
  std::vector<std::size_t> flops_lengths;  // empty = stream length of the data spec
  ServingQuery serving{64, 256, 16, 16, 0};
  std::size_t diag_max_streams = 128;
  double gradcheck_tol = 1e-4;
  std::size_t gradcheck_depth = 4;

  VariantDef selected_variant() const;
  std::vector<VariantDef> selected_variants() const;
};

std::map<std::string, std::string> run_config_to_map(const RunConfig& rc);
// Overlays kv on base; unknown keys throw ConfigError.
RunConfig run_config_from_map(const std::map<std::string, std::string>& kv, RunConfig base = {});

// Full command line, argv[0] included. Returns an exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tokenformer::cli
