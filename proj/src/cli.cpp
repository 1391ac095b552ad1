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


#include "tokenformer/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "tokenformer/backbone.hpp"
#include "tokenformer/diagnostics.hpp"
#include "tokenformer/errors.hpp"
#include "tokenformer/kv.hpp"
#include "tokenformer/synthetic_data.hpp"
#include "tokenformer/trainer.hpp"

namespace tokenformer::cli {

namespace fs = std::filesystem;

namespace {

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) s += ',';
    if constexpr (std::is_same_v<T, std::string>) {
      s += xs[i];
    } else {
      s += std::to_string(xs[i]);
    }
  }
  return s;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

// Resolved config and tool version go into every output directory.
fs::path prepare_dir(const RunConfig& rc) {
  const fs::path dir(rc.out_dir);
  fs::create_directories(dir);
  std::ostringstream cfg;
  kv::write(cfg, run_config_to_map(rc));
  write_text(dir / "config.txt", cfg.str());
  write_text(dir / "VERSION", std::string("tokenformer ") + kVersion + "\n");
  return dir;
}

SynthSpec data_spec(const RunConfig& rc, std::uint64_t seed) {
  SynthSpec spec = rc.exp.data;
  spec.seed = rc.exp.data.seed + seed;
  return spec;
}

std::vector<Record> load_records(const RunConfig& rc, const SynthSpec& spec) {
  if (rc.data_path.empty()) return generate(spec).records;
  std::ifstream in(rc.data_path);
  if (!in) throw DataError("cannot open dataset " + rc.data_path);
  auto recs = read_records(in);
  if (recs.empty()) throw DataError("dataset " + rc.data_path + " has no records");
  return recs;
}

struct Streams {
  std::vector<TokenStream> train, valid, test;
};

Streams build_split(const RunConfig& rc, const ModelConfig& cfg, std::span<const Record> recs,
                    const SynthSpec& spec) {
  const auto split = split_users(recs.size(), rc.exp.train_frac, rc.exp.valid_frac,
                                 rc.exp.test_frac, spec.seed);
  Streams s;
  for (auto i : split.train) s.train.push_back(stream_for(cfg, recs[i]));
  for (auto i : split.valid) s.valid.push_back(stream_for(cfg, recs[i]));
  for (auto i : split.test) s.test.push_back(stream_for(cfg, recs[i]));
  return s;
}

nlohmann::json metrics_json(const EvalMetrics& m) {
  nlohmann::json per = nlohmann::json::array();
  for (double a : m.auc_per_action) {
    if (std::isnan(a)) {
      per.push_back(nullptr);
    } else {
      per.push_back(a);
    }
  }
  return {{"loss", m.loss}, {"macro_auc", m.macro_auc}, {"accuracy", m.accuracy},
          {"count", m.count}, {"auc_per_action", per}};
}

// ---- synth ----

int cmd_synth(const RunConfig& rc, std::ostream& out) {
  const fs::path dir = prepare_dir(rc);
  nlohmann::json manifest;
  manifest["version"] = kVersion;
  manifest["spec"] = synth_spec_to_map(rc.exp.data);
  manifest["datasets"] = nlohmann::json::array();
  for (auto s : rc.seeds) {
    const SynthSpec spec = data_spec(rc, s);
    const auto ds = generate(spec);
    const std::string file = "records_seed" + std::to_string(s) + ".txt";
    std::ostringstream text;
    write_records(text, ds.records);
    write_text(dir / file, text.str());
    manifest["datasets"].push_back({{"seed", s},
                                    {"data_seed", spec.seed},
                                    {"spec_hash", hex64(spec_hash(spec))},
                                    {"records", ds.records.size()},
                                    {"action_bias", ds.action_bias},
                                    {"file", file}});
    out << "wrote " << (dir / file).string() << " (" << ds.records.size() << " records)\n";
  }
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  return kExitOk;
}

// ---- train ----

void write_epoch_csv(const fs::path& path, std::span<const EpochLog> epochs) {
  std::ostringstream os;
  os << "epoch,train_loss,valid_loss,valid_auc,valid_accuracy\n";
  for (const auto& e : epochs) {
    os << e.epoch << ',' << kv::format_double(e.train_loss);
    if (e.valid) {
      os << ',' << kv::format_double(e.valid->loss) << ',' << kv::format_double(e.valid->macro_auc)
         << ',' << kv::format_double(e.valid->accuracy);
    } else {
      os << ",,,";
    }
    os << '\n';
  }
  write_text(path, os.str());
}

int cmd_train(const RunConfig& rc, const std::string& resume, std::ostream& out) {
  if (!resume.empty() && rc.seeds.size() != 1) {
    throw ConfigError("--resume needs exactly one seed");
  }
  const fs::path dir = prepare_dir(rc);
  const VariantDef v = rc.selected_variant();
  for (auto s : rc.seeds) {
    const SynthSpec spec = data_spec(rc, s);
    const auto recs = load_records(rc, spec);
    const ModelConfig cfg = variant_model(rc.exp, v, spec);
    const Streams st = build_split(rc, cfg, recs, spec);
    const fs::path sdir = dir / ("seed_" + std::to_string(s));
    fs::create_directories(sdir);

    TrainConfig tc = rc.exp.train;
    tc.seed = s;
    tc.threads = rc.threads;
    tc.eval_scope = rc.exp.eval_scope;
    tc.out_dir = sdir.string();

    ModelParams init;
    std::optional<OptimState> state;
    if (!resume.empty()) {
      const auto ck = load_checkpoint(resume);
      if (model_config_to_map(config_from_checkpoint(ck)) != model_config_to_map(cfg)) {
        throw ConfigError("checkpoint " + resume + " was trained with a different model config");
      }
      init = params_from_checkpoint(ck, cfg);
      state = optim_from_checkpoint(ck, init);
    } else {
      init = initial_params(cfg, s);
      save_checkpoint((sdir / "init.ckpt").string(), make_checkpoint(cfg, init));
    }
    const auto res = train(cfg, st.train, st.valid, tc, std::move(init), std::move(state));
    save_checkpoint((sdir / "final.ckpt").string(),
                    make_train_checkpoint(cfg, res.params, res.state, s));
    write_step_csv((sdir / "steps.csv").string(), res.run.steps);
    write_epoch_csv(sdir / "epochs.csv", res.run.epochs);
    const auto m = evaluate(cfg, res.params, st.test, rc.exp.eval_scope, rc.threads);
    nlohmann::json j = metrics_json(m);
    j["seed"] = s;
    j["variant"] = v.name;
    j["steps"] = res.state.step;
    write_text(sdir / "test_metrics.json", j.dump(2) + "\n");
    out << "seed=" << s << " variant=" << v.name << " steps=" << res.state.step
        << " test_auc=" << kv::format_double(m.macro_auc)
        << " test_loss=" << kv::format_double(m.loss) << '\n';
  }
  return kExitOk;
}

// ---- ablate ----

int cmd_ablate(const RunConfig& rc, std::ostream& out) {
  const fs::path dir = prepare_dir(rc);
  struct Task {
    VariantDef v;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (auto s : rc.seeds)
    for (const auto& v : rc.selected_variants()) tasks.push_back({v, s});

  std::vector<VariantResult> results(tasks.size());
  std::vector<std::exception_ptr> errors(tasks.size());
  ExperimentConfig e = rc.exp;
  const std::size_t workers = std::min(rc.threads, tasks.size());
  // Parallel over tasks, or over streams inside one task; never both.
  e.train.threads = workers > 1 ? 1 : rc.threads;
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      try {
        results[i] = run_variant(e, tasks[i].v, tasks[i].seed);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers > 1) {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  } else {
    work();
  }
  for (auto& ep : errors)
    if (ep) std::rethrow_exception(ep);

  std::ostringstream csv;
  csv << variant_csv_header() << '\n';
  for (const auto& r : results) csv << variant_csv_row(r) << '\n';
  write_text(dir / "ablation.csv", csv.str());
  out << csv.str();
  return kExitOk;
}

// ---- diagnose ----

struct CsvKey {
  std::string kind, layer, stage, key;
  auto operator<=>(const CsvKey&) const = default;
};

int cmd_diagnose(const RunConfig& rc, const std::vector<std::string>& ckpts, std::ostream& out) {
  if (ckpts.empty()) throw ConfigError("diagnose needs at least one --checkpoint");
  for (const auto& c : ckpts)
    if (!fs::exists(c)) throw DataError("missing checkpoint " + c);
  const fs::path dir = prepare_dir(rc);
  const std::uint64_t seed = rc.seeds.front();
  const SynthSpec spec = data_spec(rc, seed);
  const auto recs = load_records(rc, spec);

  std::ostringstream all_csv;
  std::vector<CsvKey> order;
  std::map<CsvKey, std::vector<double>> values;
  for (std::size_t ci = 0; ci < ckpts.size(); ++ci) {
    const auto ck = load_checkpoint(ckpts[ci]);
    const ModelConfig cfg = config_from_checkpoint(ck);
    const ModelParams params = params_from_checkpoint(ck, cfg);
    Streams st = build_split(rc, cfg, recs, spec);
    if (st.test.size() > rc.diag_max_streams) st.test.resize(rc.diag_max_streams);

    // Pooled the same way as receptive_field_stats over all traces, one trace
    // at a time so the attention weights can be dropped.
    ReceptiveFieldReport rf;
    std::vector<double> span_sum(cfg.depth, 0.0);
    std::vector<ActivationTrace> traces;
    std::vector<ForwardResult> slim;
    for (const auto& s : st.test) {
      ForwardResult f = forward(s, params, cfg);
      const auto one = receptive_field_stats(std::span(&f.trace, 1));
      if (rf.layers.empty()) rf = one;
      else {
        for (std::size_t l = 0; l < cfg.depth; ++l)
          for (std::size_t b = 0; b < one.layers[l].histogram.size(); ++b)
            rf.layers[l].histogram[b] += one.layers[l].histogram[b];
      }
      for (std::size_t l = 0; l < cfg.depth; ++l) span_sum[l] += one.layers[l].mean_span;
      for (auto& l : f.trace.layers) {
        l.attn_weights.clear();
        l.gated_out = Matrix();
      }
      traces.push_back(std::move(f.trace));
      f.trace = ActivationTrace{};
      slim.push_back(std::move(f));
    }
    for (std::size_t l = 0; l < cfg.depth; ++l)
      rf.layers[l].mean_span = span_sum[l] / static_cast<double>(st.test.size());

    const auto spectral = spectral_trajectory(traces, st.test, TokenFilter{}, seed);
    const auto sup = supervised_representations(slim, st.test, rc.exp.mi_representation,
                                                rc.exp.eval_scope == EvalScope::Targets);
    std::vector<std::size_t> ks;
    for (auto k : kDefaultClusterCounts)
      if (k < sup.reps.rows()) ks.push_back(k);
    const auto mi = mi_report(sup.reps, sup.labels, cfg.actions, ks, seed, 3,
                              rc.exp.mi_representation);
    const auto m = evaluate(cfg, params, st.test, rc.exp.eval_scope, rc.threads);

    const fs::path cdir = dir / ("ckpt_" + std::to_string(ci));
    fs::create_directories(cdir);
    write_text(cdir / "spectral.json", spectral_json(spectral) + "\n");
    write_text(cdir / "mi.json", mi_json(mi) + "\n");
    write_text(cdir / "receptive.json", receptive_json(rf) + "\n");
    nlohmann::json mj = metrics_json(m);
    mj["checkpoint"] = fs::path(ckpts[ci]).filename().string();
    mj["streams"] = st.test.size();
    write_text(cdir / "metrics.json", mj.dump(2) + "\n");

    std::ostringstream csv;
    const std::string tag = std::to_string(ci);
    write_spectral_csv(csv, spectral, tag);
    write_mi_csv(csv, mi, tag);
    write_receptive_csv(csv, rf, tag);
    csv << tag << ",metrics,,,macro_auc," << kv::format_double(m.macro_auc) << '\n';
    csv << tag << ",metrics,,,loss," << kv::format_double(m.loss) << '\n';
    write_text(cdir / "diagnostics.csv", csv.str());
    all_csv << csv.str();

    std::istringstream lines(csv.str());
    std::string line;
    while (std::getline(lines, line)) {
      const auto f = kv::split(line, ',');
      if (f.size() != 6) continue;
      CsvKey key{f[1], f[2], f[3], f[4]};
      auto [it, fresh] = values.try_emplace(key);
      if (fresh) order.push_back(key);
      it->second.push_back(kv::to_double("csv", f[5]));
    }
    out << "checkpoint " << ckpts[ci] << ": macro_auc=" << kv::format_double(m.macro_auc)
        << " final_rank="
        << kv::format_double(spectral.entries.back().rank.r_eff) << '\n';
  }
  for (const auto& key : order) {
    const auto& v = values[key];
    if (v.size() != ckpts.size()) continue;
    double s = 0.0;
    for (double x : v) s += x;
    all_csv << "mean," << key.kind << ',' << key.layer << ',' << key.stage << ',' << key.key
            << ',' << kv::format_double(s / static_cast<double>(v.size())) << '\n';
  }
  write_text(dir / "diagnostics.csv", "tag,kind,layer,stage,key,value\n" + all_csv.str());
  return kExitOk;
}

// ---- masks ----

Record shape_record(const SynthSpec& spec) {
  Record r;
  for (auto off : spec.field_offsets()) r.fields.push_back(off);
  r.history.assign(spec.history, HistoryEvent{0, 0});
  r.targets.assign(spec.targets, 0);
  r.target_actions.assign(spec.targets, std::size_t{0});
  return r;
}

int cmd_masks(const RunConfig& rc, std::ostream& out) {
  const fs::path dir = prepare_dir(rc);
  const VariantDef v = rc.selected_variant();
  const SynthSpec spec = data_spec(rc, rc.seeds.front());
  const ModelConfig cfg = variant_model(rc.exp, v, spec);
  const TokenStream stream = stream_for(cfg, shape_record(spec));
  const auto masks = build_masks(cfg, stream);
  const fs::path mdir = dir / "masks";
  fs::create_directories(mdir);
  std::ostringstream summary;
  summary << "layer,window,discard,seq_len,visible\n";
  for (std::size_t l = 0; l < masks.size(); ++l) {
    const auto& m = masks[l];
    const std::size_t n = m.size();
    std::ostringstream csv, pgm;
    pgm << "P2\n" << n << ' ' << n << "\n255\n";
    std::size_t visible = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const bool vis = m.visible(i, j);
        visible += vis;
        csv << (j ? "," : "") << (vis ? '1' : '0');
        pgm << (j ? " " : "") << (vis ? 255 : 0);
      }
      csv << '\n';
      pgm << '\n';
    }
    const std::string base = "layer" + std::to_string(l);
    write_text(mdir / (base + ".csv"), csv.str());
    write_text(mdir / (base + ".pgm"), pgm.str());
    const std::size_t w = cfg.schedule.window(l);
    summary << l << ',' << (w == kFullWindow ? std::string("full") : std::to_string(w)) << ','
            << (cfg.schedule.discard_static && cfg.schedule.is_sliding(l) ? 1 : 0) << ',' << n
            << ',' << visible << '\n';
  }
  write_text(mdir / "summary.csv", summary.str());
  out << summary.str();
  return kExitOk;
}

// ---- flops ----

int cmd_flops(const RunConfig& rc, std::ostream& out) {
  const fs::path dir = prepare_dir(rc);
  const SynthSpec spec = data_spec(rc, rc.seeds.front());
  std::ostringstream csv;
  csv << "variant,schedule,L,d,attention_flops,total_flops,memory,memory_full,serving_B,"
         "serving_Lu,serving_La,serving_N,joint,decoupled,gap,speedup\n";
  for (const auto& v : rc.selected_variants()) {
    const ModelConfig cfg = variant_model(rc.exp, v, spec);
    std::vector<std::size_t> lengths = rc.flops_lengths;
    if (lengths.empty()) lengths.push_back(stream_for(cfg, shape_record(spec)).size());
    ServingQuery sq = rc.serving;
    if (sq.d == 0) sq.d = cfg.dim;
    const auto sc = serving_cost(sq);
    for (auto L : lengths) {
      CostQuery q;
      q.L = L;
      q.d = cfg.dim;
      q.d_ff = cfg.ffn();
      q.schedule = cfg.schedule;
      q.nlir = cfg.nlir;
      const auto r = backbone_flops(q);
      csv << v.name << ',' << v.schedule << ',' << L << ',' << cfg.dim << ','
          << kv::format_double(r.attention) << ',' << kv::format_double(r.total) << ','
          << kv::format_double(r.memory) << ',' << kv::format_double(r.memory_full) << ','
          << sq.B << ',' << sq.Lu << ',' << sq.La << ',' << sq.N << ','
          << kv::format_double(sc.joint) << ',' << kv::format_double(sc.decoupled) << ','
          << kv::format_double(sc.gap) << ',' << kv::format_double(sc.speedup) << '\n';
    }
  }
  write_text(dir / "flops.csv", csv.str());
  out << csv.str();
  return kExitOk;
}

// ---- gradcheck ----

int cmd_gradcheck(const RunConfig& rc, std::ostream& out) {
  const fs::path dir = prepare_dir(rc);
  const auto setup = tiny_gradcheck_setup(rc.seeds.front(), rc.gradcheck_depth);
  const auto rep = gradcheck(setup.cfg, setup.params, setup.stream);
  std::ostringstream csv;
  csv << "tensor,checked,max_rel_err,max_abs_err\n";
  for (const auto& e : rep.entries) {
    csv << e.name << ',' << e.checked << ',' << kv::format_double(e.max_rel_err) << ','
        << kv::format_double(e.max_abs_err) << '\n';
  }
  write_text(dir / "gradcheck.csv", csv.str());
  const bool ok = rep.max_rel_err <= rc.gradcheck_tol;
  out << "gradcheck max_rel_err=" << kv::format_double(rep.max_rel_err)
      << " tol=" << kv::format_double(rc.gradcheck_tol) << (ok ? " ok" : " FAILED") << '\n';
  return ok ? kExitOk : kExitNumerical;
}

}  // namespace

// ---- config ----

VariantDef RunConfig::selected_variant() const {
  return variant == "custom" ? custom : find_variant(variant);
}

std::vector<VariantDef> RunConfig::selected_variants() const {
  if (variants.empty()) return default_variants();
  std::vector<VariantDef> out;
  for (const auto& n : variants) out.push_back(n == "custom" ? custom : find_variant(n));
  return out;
}

std::map<std::string, std::string> run_config_to_map(const RunConfig& rc) {
  auto m = experiment_to_map(rc.exp);
  m["variant"] = rc.variant;
  m["custom.schedule"] = rc.custom.schedule;
  m["custom.nlir"] = rc.custom.nlir ? "1" : "0";
  m["custom.fields"] = rc.custom.use_fields ? "1" : "0";
  m["variants"] = join(rc.variants);
  m["seeds"] = join(rc.seeds);
  m["data.path"] = rc.data_path;
  m["out_dir"] = rc.out_dir;
  m["threads"] = std::to_string(rc.threads);
  m["flops.lengths"] = join(rc.flops_lengths);
  m["serving.B"] = std::to_string(rc.serving.B);
  m["serving.Lu"] = std::to_string(rc.serving.Lu);
  m["serving.La"] = std::to_string(rc.serving.La);
  m["serving.N"] = std::to_string(rc.serving.N);
  m["serving.d"] = std::to_string(rc.serving.d);
  m["diag.max_streams"] = std::to_string(rc.diag_max_streams);
  m["gradcheck.tol"] = kv::format_double(rc.gradcheck_tol);
  m["gradcheck.depth"] = std::to_string(rc.gradcheck_depth);
  return m;
}

RunConfig run_config_from_map(const std::map<std::string, std::string>& kvs, RunConfig rc) {
  std::map<std::string, std::string> rest;
  for (const auto& [k, v] : kvs) {
    if (k == "variant") rc.variant = v;
    else if (k == "custom.schedule") {
      (void)preset_schedule(v, {32, 16}, 0);  // validates the name
      rc.custom.schedule = v;
    } else if (k == "custom.nlir") rc.custom.nlir = kv::to_bool(k, v);
    else if (k == "custom.fields") rc.custom.use_fields = kv::to_bool(k, v);
    else if (k == "variants") rc.variants = kv::split(v, ',');
    else if (k == "seeds") {
      rc.seeds.clear();
      for (const auto& part : kv::split(v, ',')) rc.seeds.push_back(kv::to_u64(k, part));
    } else if (k == "data.path") rc.data_path = v;
    else if (k == "out_dir") rc.out_dir = v;
    else if (k == "threads") rc.threads = kv::to_size(k, v);
    else if (k == "flops.lengths") rc.flops_lengths = kv::to_size_list(k, v);
    else if (k == "serving.B") rc.serving.B = kv::to_size(k, v);
    else if (k == "serving.Lu") rc.serving.Lu = kv::to_size(k, v);
    else if (k == "serving.La") rc.serving.La = kv::to_size(k, v);
    else if (k == "serving.N") rc.serving.N = kv::to_size(k, v);
    else if (k == "serving.d") rc.serving.d = kv::to_size(k, v);
    else if (k == "diag.max_streams") rc.diag_max_streams = kv::to_size(k, v);
    else if (k == "gradcheck.tol") rc.gradcheck_tol = kv::to_double(k, v);
    else if (k == "gradcheck.depth") rc.gradcheck_depth = kv::to_size(k, v);
    else rest[k] = v;
  }
  rc.exp = experiment_from_map(rest, rc.exp);
  if (rc.seeds.empty()) throw ConfigError("seeds: at least one seed is required");
  if (rc.threads == 0) throw ConfigError("threads must be >= 1");
  if (rc.out_dir.empty()) throw ConfigError("out_dir must not be empty");
  if (rc.diag_max_streams == 0) throw ConfigError("diag.max_streams must be >= 1");
  (void)rc.selected_variant();
  (void)rc.selected_variants();
  return rc;
}

// ---- entry point ----

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
};

RunConfig resolve(const Common& c) {
  RunConfig rc;
  if (!c.config.empty()) rc = run_config_from_map(kv::parse_file(c.config));
  std::map<std::string, std::string> env;
  if (const char* d = std::getenv("TOKENFORMER_OUT_DIR"); d && *d) env["out_dir"] = d;
  if (const char* t = std::getenv("TOKENFORMER_THREADS"); t && *t) env["threads"] = t;
  if (!env.empty()) rc = run_config_from_map(env, rc);
  std::map<std::string, std::string> sets;
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    const std::string key = kv::trim(std::string_view(s).substr(0, eq));
    if (!sets.emplace(key, kv::trim(std::string_view(s).substr(eq + 1))).second) {
      throw ConfigError("--set given twice for '" + key + "'");
    }
  }
  if (!sets.empty()) rc = run_config_from_map(sets, rc);
  if (!c.out.empty()) rc.out_dir = c.out;
  rc.exp.train.threads = rc.threads;
  return rc;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"tokenformer: unified token-stream ranking models, diagnostics and cost model"};
  app.set_version_flag("--version", std::string("tokenformer ") + kVersion);
  app.require_subcommand(1);

  Common common;
  std::string resume;
  std::vector<std::string> checkpoints;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", common.config, "key = value config file");
    sub->add_option("-s,--set", common.sets, "override one key, key=value (repeatable)");
    sub->add_option("-o,--out", common.out, "output directory");
    return sub;
  };
  auto* synth = add_common(app.add_subcommand("synth", "generate synthetic datasets"));
  auto* trn = add_common(app.add_subcommand("train", "train one variant per seed"));
  trn->add_option("--resume", resume, "training checkpoint to continue from");
  auto* ablate = add_common(app.add_subcommand("ablate", "train and compare the variant grid"));
  auto* diag = add_common(app.add_subcommand("diagnose", "rank, MI and receptive-field reports"));
  diag->add_option("--checkpoint", checkpoints, "checkpoint(s) to analyse")->required();
  auto* masks = add_common(app.add_subcommand("masks", "dump per-layer visibility masks"));
  auto* flops = add_common(app.add_subcommand("flops", "analytic FLOP and serving cost table"));
  auto* gc = add_common(app.add_subcommand("gradcheck", "finite-difference gradient check"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    const RunConfig rc = resolve(common);
    if (*synth) return cmd_synth(rc, out);
    if (*trn) return cmd_train(rc, resume, out);
    if (*ablate) return cmd_ablate(rc, out);
    if (*diag) return cmd_diagnose(rc, checkpoints, out);
    if (*masks) return cmd_masks(rc, out);
    if (*flops) return cmd_flops(rc, out);
    if (*gc) return cmd_gradcheck(rc, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const ShapeError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitConfig;
}

}  // namespace tokenformer::cli
