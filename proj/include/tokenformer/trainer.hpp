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
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tokenformer/backbone.hpp"
#include "tokenformer/matrix.hpp"
#include "tokenformer/token_stream.hpp"

namespace tokenformer {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct OptimState {
  AdamWConfig hp;
  std::uint64_t step = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;

  static OptimState for_shapes(std::span<const Matrix* const> params, const AdamWConfig& hp);
};

// One decoupled-weight-decay Adam update over parallel spans. A non-finite
// gradient entry throws NumericalError naming the parameter; nothing is
// modified in that case.
void adamw_step(std::span<Matrix* const> params, std::span<const Matrix> grads,
                std::span<const std::string> names, OptimState& state);

// Named pointers into params in ModelParams::for_each order.
struct ParamList {
  std::vector<std::string> names;
  std::vector<Matrix*> tensors;
};
ParamList param_list(ModelParams& params);

struct BatchGradient {
  double loss = 0.0;  // mean CE over every supervised position in the batch
  std::size_t supervised = 0;
  std::vector<Matrix> grads;  // ModelParams::for_each order
};

// Gradient of the pooled batch loss. Streams are processed independently
// (optionally on `threads` workers) and reduced in stream order, so the result
// does not depend on the thread count.
BatchGradient batch_gradient(const ModelConfig& cfg, const ModelParams& params,
                             std::span<const TokenStream> streams, std::size_t threads = 1);

double global_norm(std::span<const Matrix> grads);

enum class EvalScope { Targets, AllSupervised };

struct EvalMetrics {
  double loss = 0.0;
  double macro_auc = 0.0;  // mean over actions with both classes present
  double accuracy = 0.0;
  std::size_t count = 0;
  std::vector<double> auc_per_action;  // NaN where undefined
};

EvalMetrics evaluate(const ModelConfig& cfg, const ModelParams& params,
                     std::span<const TokenStream> streams, EvalScope scope = EvalScope::Targets,
                     std::size_t threads = 1);

struct TrainConfig {
  std::uint64_t seed = 0;
  std::size_t epochs = 1;
  std::size_t batch_size = 32;
  std::size_t max_steps = 0;  // 0 = no cap
  AdamWConfig adamw;
  double clip_norm = 0.0;     // 0 = off
  std::size_t threads = 1;
  bool eval_each_epoch = true;
  EvalScope eval_scope = EvalScope::Targets;
  std::size_t checkpoint_every = 0;  // steps; 0 = off
  std::string out_dir;               // empty = no files
};

struct StepLog {
  std::uint64_t step = 0;  // 1-based optimizer step
  std::size_t epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean of step losses in the epoch
  std::optional<EvalMetrics> valid;
};

struct TrainRun {
  std::uint64_t seed = 0;
  std::vector<StepLog> steps;
  std::vector<EpochLog> epochs;
};

struct TrainResult {
  TrainRun run;
  ModelParams params;
  OptimState state;
};

// Batch order in epoch e is a permutation derived from (seed, e), so a run
// resumed at step s replays exactly the batches an unbroken run would.
std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n);

// The init train() uses when none is given.
ModelParams initial_params(const ModelConfig& cfg, std::uint64_t seed);

// Trains from `init` (or a fresh seeded init) and, when `resume` is given,
// continues from its step count and moments.
TrainResult train(const ModelConfig& cfg, std::span<const TokenStream> train_set,
                  std::span<const TokenStream> valid_set, const TrainConfig& tcfg,
                  std::optional<ModelParams> init = std::nullopt,
                  std::optional<OptimState> resume = std::nullopt);

// Training checkpoints carry optimizer moments next to the weights.
Checkpoint make_train_checkpoint(const ModelConfig& cfg, const ModelParams& params,
                                 const OptimState& state, std::uint64_t seed);
OptimState optim_from_checkpoint(const Checkpoint& ckpt, const ModelParams& params);

void write_step_csv(const std::string& path, std::span<const StepLog> steps);

struct GradcheckEntry {
  std::string name;
  std::size_t checked = 0;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double max_rel_err = 0.0;
  double loss = 0.0;
};

// Central differences with step h against the tape gradient of the stream's
// loss. Relative error is |a - n| / max(|a|, |n|, floor).
GradcheckReport gradcheck(const ModelConfig& cfg, const ModelParams& params,
                          const TokenStream& stream, double h = 1e-5, double floor = 1e-3);

// d=16, h=2, depth 4, 2F2S windows [6,3], NLIR and discard on, S_L = 12
// (M=3, T=3, K=1 with actions). Parameters drawn with std 0.3.
struct TinySetup {
  ModelConfig cfg;
  ModelParams params;
  TokenStream stream;
};
TinySetup tiny_gradcheck_setup(std::uint64_t seed, std::size_t depth = 4);

}  // namespace tokenformer
