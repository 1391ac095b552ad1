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
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tokenformer/interaction_block.hpp"
#include "tokenformer/mask_schedule.hpp"
#include "tokenformer/matrix.hpp"
#include "tokenformer/rng.hpp"
#include "tokenformer/tape.hpp"
#include "tokenformer/token_stream.hpp"

namespace tokenformer {

struct ModelConfig {
  std::size_t depth = 4;
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t ffn_dim = 0;  // 0 means 2 * dim
  std::size_t actions = 4;
  std::size_t field_vocab = 1;
  std::size_t item_vocab = 1;
  MaskSchedule schedule = MaskSchedule::all_full(4);
  SupervisionMode supervision = SupervisionMode::UserCentric;
  bool nlir = true;
  bool gate_from_normalized = false;
  bool with_actions = true;
  bool use_fields = true;  // false builds streams with M = 0
  double rope_base = 10000.0;
  double rms_eps = 1e-6;
  double init_std = 0.02;

  std::size_t ffn() const { return ffn_dim == 0 ? 2 * dim : ffn_dim; }
  BlockOptions block_options() const;
  void validate() const;
};

// Named sizes T, S, M, L: (depth, dim, heads) = (4,64,4), (4,256,4),
// (6,256,4), (8,256,8). Schedule defaults to all-full of that depth.
ModelConfig preset_config(std::string_view name);

// Flat key=value view used by checkpoints and run configs.
std::map<std::string, std::string> model_config_to_map(const ModelConfig& cfg);
ModelConfig model_config_from_map(const std::map<std::string, std::string>& kv);

struct ModelParams {
  EmbeddingTables embed;
  std::vector<BlockParams> blocks;
  Matrix head_w;  // A x d
  Matrix head_b;  // 1 x A

  static ModelParams zeros(const ModelConfig& cfg);
  static ModelParams init(const ModelConfig& cfg, Rng& rng);

  // Visits every tensor with a stable name ("embed.item", "block2.wq", "head.w").
  template <typename F>
  void for_each(F&& f) {
    f(std::string("embed.field"), embed.field);
    f(std::string("embed.item"), embed.item);
    f(std::string("embed.action"), embed.action);
    f(std::string("embed.sep"), embed.sep);
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      blocks[l].for_each([&](const char* n, Matrix& m) {
        f("block" + std::to_string(l) + "." + n, m);
      });
    }
    f(std::string("head.w"), head_w);
    f(std::string("head.b"), head_b);
  }
  template <typename F>
  void for_each(F&& f) const {
    const_cast<ModelParams*>(this)->for_each(
        [&](const std::string& n, Matrix& m) { f(n, static_cast<const Matrix&>(m)); });
  }

  std::size_t parameter_count() const;
  bool all_finite() const;
};

struct ActivationTrace {
  Matrix x0;
  std::vector<BlockTrace> layers;
};

// Per-layer masks for one stream length and static prefix.
std::vector<VisibilityMask> build_masks(const ModelConfig& cfg, const TokenStream& stream);

// Builds the stream a model of this config reads from a record.
TokenStream stream_for(const ModelConfig& cfg, const Record& record);

struct ForwardResult {
  Matrix logits;                       // |I_loss| x A
  Matrix hidden;                       // final states X^(L) at I_loss rows
  std::vector<std::size_t> supervised;  // I_loss
  std::vector<std::size_t> labels;
  ActivationTrace trace;
};

ForwardResult forward(const TokenStream& stream, const ModelParams& params,
                      const ModelConfig& cfg);

// Mean over rows of -ln softmax(logits)[label]. Throws on empty input.
double ce_loss(const Matrix& logits, std::span<const std::size_t> labels);

// Mann-Whitney AUC with ties counted 1/2. Throws DataError on one class.
double compute_auc(std::span<const double> scores, std::span<const std::uint8_t> positives);

namespace ad {

struct ModelVars {
  Var field, item, action, sep;
  std::vector<BlockParamVars> blocks;
  Var head_w, head_b;
  std::vector<std::pair<std::string, Var>> named;  // ModelParams::for_each order
};

ModelVars bind_model(Tape& tape, const ModelParams& params);

struct GraphOutputs {
  Var x0;
  std::vector<BlockVars> layers;
  Var hidden;  // X^(L) rows at I_loss
  Var logits;
  Var loss;    // valid only when the stream has supervised positions
  std::vector<std::size_t> supervised;
  std::vector<std::size_t> labels;
};

GraphOutputs build_graph(Tape& tape, const ModelVars& vars, const TokenStream& stream,
                         const ModelConfig& cfg, std::span<const VisibilityMask> masks);

}  // namespace ad

// Binary checkpoint: magic "TKFMCKPT", u32 version, metadata pairs, then named
// tensors (u64 rows, u64 cols, row-major little-endian f64).
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Matrix>> tensors;

  const Matrix& tensor(std::string_view name) const;
  bool has_tensor(std::string_view name) const;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint make_checkpoint(const ModelConfig& cfg, const ModelParams& params);
ModelConfig config_from_checkpoint(const Checkpoint& ckpt);
ModelParams params_from_checkpoint(const Checkpoint& ckpt, const ModelConfig& cfg);

}  // namespace tokenformer
