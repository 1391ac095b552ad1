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

#include "tokenformer/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>

#include "tokenformer/complexity_model.hpp"
#include "tokenformer/diagnostics.hpp"
#include "tokenformer/errors.hpp"
#include "tokenformer/kv.hpp"

namespace tokenformer {

std::vector<VariantDef> default_variants() {
  return {
      {"vanilla", "4F", false, true},
      {"seq_only", "4F", false, false},
      {"nlir", "4F", true, true},
      {"bfts", "2F2S", false, true},
      {"both", "2F2S", true, true},
      {"4S", "4S", false, true},
      {"2S2F", "2S2F", false, true},
  };
}

VariantDef find_variant(std::string_view name) {
  for (auto& v : default_variants()) {
    if (v.name == name) return v;
  }
  throw ConfigError("unknown variant '" + std::string(name) + "'");
}

std::map<std::string, std::string> experiment_to_map(const ExperimentConfig& e) {
  std::map<std::string, std::string> m;
  for (const auto& [k, v] : synth_spec_to_map(e.data)) m["data." + k] = v;
  m["model.preset"] = e.model_preset;
  m["train.epochs"] = std::to_string(e.train.epochs);
  m["train.batch_size"] = std::to_string(e.train.batch_size);
  m["train.max_steps"] = std::to_string(e.train.max_steps);
  m["train.lr"] = kv::format_double(e.train.adamw.lr);
  m["train.weight_decay"] = kv::format_double(e.train.adamw.weight_decay);
  m["train.clip_norm"] = kv::format_double(e.train.clip_norm);
  auto join = [](const std::vector<std::size_t>& w) {
    std::string s;
    for (std::size_t i = 0; i < w.size(); ++i) s += (i ? "," : "") + std::to_string(w[i]);
    return s;
  };
  m["schedule.bfts_windows"] = join(e.bfts_windows);
  m["schedule.sliding4_windows"] = join(e.sliding4_windows);
  m["schedule.discard"] = e.discard_static ? "1" : "0";
  m["supervision"] = std::string(to_string(e.supervision));
  m["split"] = kv::format_double(e.train_frac) + "," + kv::format_double(e.valid_frac) + "," +
               kv::format_double(e.test_frac);
  m["mi.clusters"] = std::to_string(e.mi_clusters);
  m["mi.representation"] = std::string(to_string(e.mi_representation));
  m["eval.scope"] = e.eval_scope == EvalScope::Targets ? "targets" : "all";
  m["train.beta1"] = kv::format_double(e.train.adamw.beta1);
  m["train.beta2"] = kv::format_double(e.train.adamw.beta2);
  m["train.eps"] = kv::format_double(e.train.adamw.eps);
  for (const auto& [k, v] : e.model_overrides) m["model." + k] = v;
  return m;
}

namespace {

const char* const kModelOverrideKeys[] = {"depth",    "dim",     "heads",
                                          "ffn_dim",  "rope_base", "rms_eps",
                                          "init_std", "gate_from_normalized", "with_actions"};

std::vector<std::size_t> windows_list(const std::string& k, const std::string& v) {
  auto w = kv::to_size_list(k, v);
  if (w.empty()) throw ConfigError(k + ": empty window list");
  return w;
}

}  // namespace

ExperimentConfig experiment_from_map(const std::map<std::string, std::string>& kvs,
                                     ExperimentConfig e) {
  std::map<std::string, std::string> data = synth_spec_to_map(e.data);
  bool data_touched = false;
  for (const auto& [k, v] : kvs) {
    if (k.rfind("data.", 0) == 0) {
      data[k.substr(5)] = v;
      data_touched = true;
    } else if (k == "model.preset") {
      (void)preset_config(v);  // validates the name
      e.model_preset = v;
    } else if (k.rfind("model.", 0) == 0) {
      const std::string key = k.substr(6);
      if (std::find(std::begin(kModelOverrideKeys), std::end(kModelOverrideKeys), key) ==
          std::end(kModelOverrideKeys)) {
        throw ConfigError("unknown key '" + k + "'");
      }
      e.model_overrides[key] = v;
    } else if (k == "train.epochs") e.train.epochs = kv::to_size(k, v);
    else if (k == "train.batch_size") e.train.batch_size = kv::to_size(k, v);
    else if (k == "train.max_steps") e.train.max_steps = kv::to_size(k, v);
    else if (k == "train.lr") e.train.adamw.lr = kv::to_double(k, v);
    else if (k == "train.weight_decay") e.train.adamw.weight_decay = kv::to_double(k, v);
    else if (k == "train.beta1") e.train.adamw.beta1 = kv::to_double(k, v);
    else if (k == "train.beta2") e.train.adamw.beta2 = kv::to_double(k, v);
    else if (k == "train.eps") e.train.adamw.eps = kv::to_double(k, v);
    else if (k == "train.clip_norm") e.train.clip_norm = kv::to_double(k, v);
    else if (k == "schedule.bfts_windows") e.bfts_windows = windows_list(k, v);
    else if (k == "schedule.sliding4_windows") e.sliding4_windows = windows_list(k, v);
    else if (k == "schedule.discard") e.discard_static = kv::to_bool(k, v);
    else if (k == "supervision") e.supervision = parse_supervision_mode(v);
    else if (k == "split") {
      const auto f = kv::to_double_list(k, v);
      if (f.size() != 3) throw ConfigError("split: expected train,valid,test fractions");
      e.train_frac = f[0];
      e.valid_frac = f[1];
      e.test_frac = f[2];
    } else if (k == "mi.clusters") e.mi_clusters = kv::to_size(k, v);
    else if (k == "mi.representation") e.mi_representation = parse_mi_representation(v);
    else if (k == "eval.scope") {
      if (v == "targets") e.eval_scope = EvalScope::Targets;
      else if (v == "all") e.eval_scope = EvalScope::AllSupervised;
      else throw ConfigError("eval.scope: expected targets or all, got '" + v + "'");
    } else {
      throw ConfigError("unknown key '" + k + "'");
    }
  }
  if (data_touched) {
    // A new action count without explicit priors falls back to uniform priors.
    if (kvs.count("data.actions") && !kvs.count("data.action_priors")) data.erase("action_priors");
    e.data = synth_spec_from_map(data);
  }
  if (e.train.batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  if (e.mi_clusters < 2) throw ConfigError("mi.clusters must be >= 2");
  const double fsum = e.train_frac + e.valid_frac + e.test_frac;
  if (e.train_frac <= 0 || e.valid_frac < 0 || e.test_frac <= 0 || std::abs(fsum - 1.0) > 1e-9) {
    throw ConfigError("split fractions must be positive and sum to 1");
  }
  return e;
}

ModelConfig variant_model(const ExperimentConfig& e, const VariantDef& v, const SynthSpec& data) {
  ModelConfig c = preset_config(e.model_preset);
  if (!e.model_overrides.empty()) {
    auto m = model_config_to_map(c);
    m.erase("schedule.windows");
    m.erase("ffn_dim");
    for (const auto& [k, v] : e.model_overrides) m[k] = v;
    c = model_config_from_map(m);
  }
  c.actions = data.actions;
  c.field_vocab = data.field_vocab();
  c.item_vocab = data.items;
  c.nlir = v.nlir;
  c.use_fields = v.use_fields;
  c.supervision = e.supervision;
  const std::size_t M = v.use_fields ? data.field_cards.size() : 0;
  if (v.schedule == "4S") {
    c.schedule = preset_schedule("4S", e.sliding4_windows, M, e.discard_static);
  } else if (v.schedule == "4F") {
    c.schedule = MaskSchedule::all_full(c.depth);
  } else {
    c.schedule = preset_schedule(v.schedule, e.bfts_windows, M, e.discard_static);
  }
  if (c.schedule.depth() != c.depth) {
    throw ConfigError("variant " + v.name + ": schedule depth " +
                      std::to_string(c.schedule.depth()) + " vs model depth " +
                      std::to_string(c.depth));
  }
  c.validate();
  return c;
}

VariantResult analyze(const ExperimentConfig& e, const ModelConfig& cfg, const ModelParams& params,
                      std::span<const TokenStream> test, std::uint64_t seed) {
  VariantResult r;
  r.seed = seed;
  const auto m = evaluate(cfg, params, test, e.eval_scope, e.train.threads);
  r.auc = m.macro_auc;
  r.accuracy = m.accuracy;
  r.loss = m.loss;
  r.target_auc = evaluate(cfg, params, test, EvalScope::Targets, e.train.threads).macro_auc;

  // Stream by stream so full traces never pile up.
  const TokenFilter filter{};
  std::vector<std::vector<double>> rank_rows;
  std::vector<ForwardResult> slim;
  std::size_t n_rows = 0;
  for (const auto& s : test) {
    ForwardResult f = forward(s, params, cfg);
    const Matrix& last = cfg.depth ? f.trace.layers.back().block_out : f.trace.x0;
    for (std::size_t i : filter.rows(s)) {
      rank_rows.emplace_back(last.row(i).begin(), last.row(i).end());
      ++n_rows;
    }
    f.trace = ActivationTrace{};
    slim.push_back(std::move(f));
  }
  Matrix rank_m(n_rows, cfg.dim);
  for (std::size_t i = 0; i < n_rows; ++i) std::copy(rank_rows[i].begin(), rank_rows[i].end(), rank_m.row(i).begin());
  r.final_rank = effective_rank(rank_m, seed);

  const auto sup = supervised_representations(slim, test, e.mi_representation,
                                              e.eval_scope == EvalScope::Targets);
  const std::size_t ks[] = {e.mi_clusters};
  r.mi = mi_report(sup.reps, sup.labels, cfg.actions, ks, seed).kmeans_weighted.front();

  CostQuery q;
  q.L = test.empty() ? 0 : test.front().size();
  q.d = cfg.dim;
  q.d_ff = cfg.ffn();
  q.schedule = cfg.schedule;
  q.nlir = cfg.nlir;
  r.flops = backbone_flops(q).total;
  return r;
}

VariantResult run_variant(const ExperimentConfig& e, const VariantDef& v, std::uint64_t seed) {
  SynthSpec spec = e.data;
  spec.seed = e.data.seed + seed;
  const auto ds = generate(spec);
  const auto split = split_users(spec.users, e.train_frac, e.valid_frac, e.test_frac, spec.seed);
  const ModelConfig cfg = variant_model(e, v, spec);
  std::vector<TokenStream> train_set, valid_set, test_set;
  for (auto i : split.train) train_set.push_back(stream_for(cfg, ds.records[i]));
  for (auto i : split.valid) valid_set.push_back(stream_for(cfg, ds.records[i]));
  for (auto i : split.test) test_set.push_back(stream_for(cfg, ds.records[i]));
  TrainConfig tc = e.train;
  tc.seed = seed;
  const auto res = train(cfg, train_set, valid_set, tc);
  VariantResult r = analyze(e, cfg, res.params, test_set, seed);
  r.variant = v.name;
  r.steps = res.run.steps.size();
  r.train_final_loss = res.run.steps.empty() ? 0.0 : res.run.steps.back().loss;
  return r;
}

std::string variant_csv_header() {
  return "variant,seed,auc,target_auc,accuracy,loss,final_rank,mi,flops,steps,train_final_loss";
}

std::string variant_csv_row(const VariantResult& r) {
  return r.variant + "," + std::to_string(r.seed) + "," + kv::format_double(r.auc) + "," +
         kv::format_double(r.target_auc) + "," + kv::format_double(r.accuracy) + "," +
         kv::format_double(r.loss) + "," + kv::format_double(r.final_rank) + "," +
         kv::format_double(r.mi) + "," + kv::format_double(r.flops) + "," +
         std::to_string(r.steps) + "," + kv::format_double(r.train_final_loss);
}

}  // namespace tokenformer
