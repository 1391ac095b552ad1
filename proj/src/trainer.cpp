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

#include "tokenformer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <thread>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "tokenformer/errors.hpp"
#include "tokenformer/kv.hpp"
#include "tokenformer/linalg.hpp"
#include "tokenformer/rng.hpp"

namespace tokenformer {

OptimState OptimState::for_shapes(std::span<const Matrix* const> params, const AdamWConfig& hp) {
  OptimState s;
  s.hp = hp;
  for (const Matrix* p : params) {
    s.m.emplace_back(p->rows(), p->cols());
    s.v.emplace_back(p->rows(), p->cols());
  }
  return s;
}

void adamw_step(std::span<Matrix* const> params, std::span<const Matrix> grads,
                std::span<const std::string> names, OptimState& st) {
  if (params.size() != grads.size() || params.size() != st.m.size() ||
      params.size() != st.v.size()) {
    throw ShapeError("adamw_step: parameter, gradient and moment counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(grads[i]) || !params[i]->same_shape(st.m[i])) {
      throw ShapeError("adamw_step: shape mismatch for " +
                       (i < names.size() ? names[i] : std::to_string(i)));
    }
    if (!grads[i].all_finite()) {
      throw NumericalError("non-finite gradient in parameter " +
                           (i < names.size() ? names[i] : std::to_string(i)));
    }
  }
  const auto& hp = st.hp;
  st.step += 1;
  const double t = static_cast<double>(st.step);
  const double bc1 = 1.0 - std::pow(hp.beta1, t);
  const double bc2 = 1.0 - std::pow(hp.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    double* th = params[i]->data();
    const double* g = grads[i].data();
    double* m = st.m[i].data();
    double* v = st.v[i].data();
    for (std::size_t k = 0; k < grads[i].size(); ++k) {
      m[k] = hp.beta1 * m[k] + (1.0 - hp.beta1) * g[k];
      v[k] = hp.beta2 * v[k] + (1.0 - hp.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      th[k] -= hp.lr * (mhat / (std::sqrt(vhat) + hp.eps) + hp.weight_decay * th[k]);
    }
  }
}

ParamList param_list(ModelParams& params) {
  ParamList l;
  params.for_each([&](const std::string& n, Matrix& m) {
    l.names.push_back(n);
    l.tensors.push_back(&m);
  });
  return l;
}

namespace {

// Tape buffers are freed and re-requested at the same sizes on every stream;
// keeping them off mmap avoids a page-fault storm on each step.
void tune_allocator() {
  static std::once_flag once;
  std::call_once(once, [] {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 64 << 20);
#endif
  });
}

struct StreamGrad {
  double loss_sum = 0.0;  // ce * n
  std::size_t n = 0;
  std::vector<Matrix> grads;  // of the stream's mean loss
};

StreamGrad stream_gradient(const ModelConfig& cfg, const ModelParams& params,
                           const TokenStream& stream) {
  StreamGrad r;
  ad::Tape tape;
  const auto vars = ad::bind_model(tape, params);
  const auto masks = build_masks(cfg, stream);
  const auto g = ad::build_graph(tape, vars, stream, cfg, masks);
  r.n = g.supervised.size();
  if (r.n == 0) return r;
  const double n = static_cast<double>(r.n);
  r.loss_sum = g.loss.value()(0, 0) * n;
  tape.backward(g.loss);
  r.grads.reserve(vars.named.size());
  for (const auto& [name, var] : vars.named) r.grads.push_back(tape.take_gradient(var));
  return r;
}

// Runs fn(i) for i in [0, n) on up to `threads` workers.
template <typename F>
void parallel_for(std::size_t n, std::size_t threads, F&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

BatchGradient batch_gradient(const ModelConfig& cfg, const ModelParams& params,
                             std::span<const TokenStream> streams, std::size_t threads) {
  tune_allocator();
  BatchGradient out;
  params.for_each([&](const std::string&, const Matrix& m) { out.grads.emplace_back(m.rows(), m.cols()); });
  double loss_sum = 0.0;
  auto fold = [&](const StreamGrad& s) {
    if (s.n == 0) return;
    loss_sum += s.loss_sum;
    out.supervised += s.n;
    const double w = static_cast<double>(s.n);
    for (std::size_t i = 0; i < out.grads.size(); ++i) axpy_inplace(out.grads[i], w, s.grads[i]);
  };
  if (threads <= 1) {
    for (const auto& st : streams) fold(stream_gradient(cfg, params, st));
  } else {
    std::vector<StreamGrad> parts(streams.size());
    parallel_for(streams.size(), threads,
                 [&](std::size_t i) { parts[i] = stream_gradient(cfg, params, streams[i]); });
    for (const auto& p : parts) fold(p);
  }
  if (out.supervised == 0) throw DataError("batch has no supervised positions");
  const double inv = 1.0 / static_cast<double>(out.supervised);
  out.loss = loss_sum * inv;
  for (auto& g : out.grads) {
    for (double& x : g.values()) x *= inv;
  }
  return out;
}

double global_norm(std::span<const Matrix> grads) {
  double s = 0.0;
  for (const auto& g : grads) {
    for (double x : g.values()) s += x * x;
  }
  return std::sqrt(s);
}

EvalMetrics evaluate(const ModelConfig& cfg, const ModelParams& params,
                     std::span<const TokenStream> streams, EvalScope scope, std::size_t threads) {
  tune_allocator();
  std::vector<ForwardResult> results(streams.size());
  parallel_for(streams.size(), threads,
               [&](std::size_t i) { results[i] = forward(streams[i], params, cfg); });
  const std::size_t A = cfg.actions;
  std::vector<std::vector<double>> probs(A);
  std::vector<std::size_t> labels;
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t s = 0; s < streams.size(); ++s) {
    const auto& r = results[s];
    for (std::size_t k = 0; k < r.supervised.size(); ++k) {
      if (scope == EvalScope::Targets && streams[s].types[r.supervised[k]] != TokenType::Target) {
        continue;
      }
      auto row = r.logits.row(k);
      const double mx = *std::max_element(row.begin(), row.end());
      double z = 0.0;
      for (double v : row) z += std::exp(v - mx);
      const std::size_t c = r.labels[k];
      loss += mx + std::log(z) - row[c];
      std::size_t best = 0;
      for (std::size_t a = 0; a < A; ++a) {
        probs[a].push_back(std::exp(row[a] - mx) / z);
        if (row[a] > row[best]) best = a;
      }
      correct += best == c ? 1 : 0;
      labels.push_back(c);
    }
  }
  EvalMetrics m;
  m.count = labels.size();
  if (m.count == 0) throw DataError("evaluate: no positions in scope");
  m.loss = loss / static_cast<double>(m.count);
  m.accuracy = static_cast<double>(correct) / static_cast<double>(m.count);
  double auc_sum = 0.0;
  std::size_t auc_n = 0;
  for (std::size_t a = 0; a < A; ++a) {
    std::vector<std::uint8_t> pos(labels.size());
    std::size_t np = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      pos[i] = labels[i] == a;
      np += pos[i];
    }
    if (np == 0 || np == labels.size()) {
      m.auc_per_action.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const double auc = compute_auc(probs[a], pos);
    m.auc_per_action.push_back(auc);
    auc_sum += auc;
    ++auc_n;
  }
  m.macro_auc = auc_n ? auc_sum / static_cast<double>(auc_n) : 0.5;
  return m;
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = Rng(seed).derive(0x5eed0000ull + epoch);
  rng.shuffle(order);
  return order;
}

Checkpoint make_train_checkpoint(const ModelConfig& cfg, const ModelParams& params,
                                 const OptimState& state, std::uint64_t seed) {
  Checkpoint c = make_checkpoint(cfg, params);
  c.meta["train.seed"] = std::to_string(seed);
  c.meta["opt.step"] = std::to_string(state.step);
  c.meta["opt.lr"] = kv::format_double(state.hp.lr);
  c.meta["opt.beta1"] = kv::format_double(state.hp.beta1);
  c.meta["opt.beta2"] = kv::format_double(state.hp.beta2);
  c.meta["opt.eps"] = kv::format_double(state.hp.eps);
  c.meta["opt.weight_decay"] = kv::format_double(state.hp.weight_decay);
  std::size_t i = 0;
  params.for_each([&](const std::string& n, const Matrix&) {
    if (i < state.m.size()) {
      c.tensors.emplace_back("opt.m." + n, state.m[i]);
      c.tensors.emplace_back("opt.v." + n, state.v[i]);
    }
    ++i;
  });
  return c;
}

OptimState optim_from_checkpoint(const Checkpoint& ckpt, const ModelParams& params) {
  OptimState s;
  auto get = [&](const std::string& k) -> const std::string& {
    auto it = ckpt.meta.find(k);
    if (it == ckpt.meta.end()) throw DataError("checkpoint has no optimizer field " + k);
    return it->second;
  };
  s.step = kv::to_u64("opt.step", get("opt.step"));
  s.hp.lr = kv::to_double("opt.lr", get("opt.lr"));
  s.hp.beta1 = kv::to_double("opt.beta1", get("opt.beta1"));
  s.hp.beta2 = kv::to_double("opt.beta2", get("opt.beta2"));
  s.hp.eps = kv::to_double("opt.eps", get("opt.eps"));
  s.hp.weight_decay = kv::to_double("opt.weight_decay", get("opt.weight_decay"));
  params.for_each([&](const std::string& n, const Matrix& p) {
    const Matrix& m = ckpt.tensor("opt.m." + n);
    const Matrix& v = ckpt.tensor("opt.v." + n);
    if (!m.same_shape(p) || !v.same_shape(p)) throw DataError("optimizer moment shape for " + n);
    s.m.push_back(m);
    s.v.push_back(v);
  });
  return s;
}

ModelParams initial_params(const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng = Rng(seed).derive(0x1417);
  return ModelParams::init(cfg, rng);
}

void write_step_csv(const std::string& path, std::span<const StepLog> steps) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "step,epoch,loss,lr,grad_norm\n";
  for (const auto& s : steps) {
    out << s.step << ',' << s.epoch << ',' << kv::format_double(s.loss) << ','
        << kv::format_double(s.lr) << ',' << kv::format_double(s.grad_norm) << '\n';
  }
}

TrainResult train(const ModelConfig& cfg, std::span<const TokenStream> train_set,
                  std::span<const TokenStream> valid_set, const TrainConfig& tcfg,
                  std::optional<ModelParams> init, std::optional<OptimState> resume) {
  cfg.validate();
  if (train_set.empty()) throw DataError("train: empty training set");
  if (tcfg.batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
  TrainResult res;
  res.run.seed = tcfg.seed;
  if (init) {
    res.params = std::move(*init);
  } else {
    res.params = initial_params(cfg, tcfg.seed);
  }
  ParamList plist = param_list(res.params);
  if (resume) {
    res.state = std::move(*resume);
    if (res.state.m.size() != plist.tensors.size()) {
      throw DataError("train: resume state does not match the parameters");
    }
  } else {
    res.state = OptimState::for_shapes(plist.tensors, tcfg.adamw);
  }
  const std::size_t n = train_set.size();
  const std::size_t per_epoch = (n + tcfg.batch_size - 1) / tcfg.batch_size;
  const std::uint64_t total_steps = static_cast<std::uint64_t>(per_epoch) * tcfg.epochs;
  const std::uint64_t stop =
      tcfg.max_steps ? std::min<std::uint64_t>(total_steps, tcfg.max_steps) : total_steps;

  auto dump = [&](const std::string& file) {
    if (tcfg.out_dir.empty()) return;
    std::filesystem::create_directories(tcfg.out_dir);
    save_checkpoint((std::filesystem::path(tcfg.out_dir) / file).string(),
                    make_train_checkpoint(cfg, res.params, res.state, tcfg.seed));
  };

  std::vector<std::size_t> order;
  std::size_t order_epoch = std::numeric_limits<std::size_t>::max();
  double epoch_loss = 0.0;
  std::size_t epoch_steps = 0;
  while (res.state.step < stop) {
    const std::uint64_t s = res.state.step;
    const std::size_t epoch = static_cast<std::size_t>(s / per_epoch);
    const std::size_t b = static_cast<std::size_t>(s % per_epoch);
    if (epoch != order_epoch) {
      order = epoch_order(tcfg.seed, epoch, n);
      order_epoch = epoch;
    }
    std::vector<TokenStream> batch;
    for (std::size_t k = b * tcfg.batch_size; k < std::min(n, (b + 1) * tcfg.batch_size); ++k) {
      batch.push_back(train_set[order[k]]);
    }
    BatchGradient g = batch_gradient(cfg, res.params, batch, tcfg.threads);
    if (!std::isfinite(g.loss)) {
      dump("diverged.ckpt");
      throw NumericalError("loss diverged at step " + std::to_string(s + 1));
    }
    const double norm = global_norm(g.grads);
    if (tcfg.clip_norm > 0.0 && norm > tcfg.clip_norm) {
      const double f = tcfg.clip_norm / norm;
      for (auto& gr : g.grads) {
        for (double& x : gr.values()) x *= f;
      }
    }
    try {
      adamw_step(plist.tensors, g.grads, plist.names, res.state);
    } catch (const NumericalError&) {
      dump("diverged.ckpt");
      throw;
    }
    res.run.steps.push_back(StepLog{res.state.step, epoch, g.loss, res.state.hp.lr, norm});
    epoch_loss += g.loss;
    ++epoch_steps;
    if (tcfg.checkpoint_every && res.state.step % tcfg.checkpoint_every == 0) {
      dump("step_" + std::to_string(res.state.step) + ".ckpt");
    }
    if (b + 1 == per_epoch) {
      EpochLog e;
      e.epoch = epoch;
      e.train_loss = epoch_loss / static_cast<double>(epoch_steps);
      if (tcfg.eval_each_epoch && !valid_set.empty()) {
        e.valid = evaluate(cfg, res.params, valid_set, tcfg.eval_scope, tcfg.threads);
      }
      res.run.epochs.push_back(std::move(e));
      epoch_loss = 0.0;
      epoch_steps = 0;
    }
  }
  return res;
}

GradcheckReport gradcheck(const ModelConfig& cfg, const ModelParams& params,
                          const TokenStream& stream, double h, double floor) {
  ad::Tape tape;
  const auto vars = ad::bind_model(tape, params);
  const auto masks = build_masks(cfg, stream);
  const auto g = ad::build_graph(tape, vars, stream, cfg, masks);
  if (g.supervised.empty()) throw DataError("gradcheck: stream has no supervised positions");
  GradcheckReport rep;
  rep.loss = g.loss.value()(0, 0);
  tape.backward(g.loss);
  std::vector<Matrix> analytic;
  for (const auto& [name, var] : vars.named) analytic.push_back(tape.gradient(var));
  for (std::size_t p = 0; p < vars.named.size(); ++p) {
    const auto& [name, var] = vars.named[p];
    GradcheckEntry e;
    e.name = name;
    Matrix base = var.value();
    for (std::size_t k = 0; k < base.size(); ++k) {
      Matrix probe = base;
      probe.data()[k] = base.data()[k] + h;
      tape.set_leaf(var, probe);
      tape.replay();
      const double up = g.loss.value()(0, 0);
      probe.data()[k] = base.data()[k] - h;
      tape.set_leaf(var, probe);
      tape.replay();
      const double down = g.loss.value()(0, 0);
      const double num = (up - down) / (2.0 * h);
      const double a = analytic[p].data()[k];
      const double abs_err = std::abs(a - num);
      const double rel = abs_err / std::max({std::abs(a), std::abs(num), floor});
      e.max_abs_err = std::max(e.max_abs_err, abs_err);
      e.max_rel_err = std::max(e.max_rel_err, rel);
      ++e.checked;
    }
    tape.set_leaf(var, base);
    rep.max_rel_err = std::max(rep.max_rel_err, e.max_rel_err);
    rep.entries.push_back(std::move(e));
  }
  tape.replay();
  return rep;
}

TinySetup tiny_gradcheck_setup(std::uint64_t seed, std::size_t depth) {
  TinySetup t;
  t.cfg.depth = depth;
  t.cfg.dim = 16;
  t.cfg.heads = 2;
  t.cfg.actions = 4;
  t.cfg.field_vocab = 6;
  t.cfg.item_vocab = 8;
  t.cfg.nlir = true;
  t.cfg.supervision = SupervisionMode::UserCentric;
  t.cfg.init_std = 0.3;
  t.cfg.schedule = depth == 4 ? preset_schedule("2F2S", {6, 3}, 3, true)
                              : MaskSchedule::all_full(depth);
  Rng rng = Rng(seed).derive(0x6c);
  t.params = ModelParams::init(t.cfg, rng);
  // Gains and bias away from their trivial init so their gradients are exercised.
  for (auto& b : t.params.blocks) {
    for (double& v : b.g_attn.values()) v = 1.0 + rng.normal(0.0, 0.3);
    for (double& v : b.g_ffn.values()) v = 1.0 + rng.normal(0.0, 0.3);
  }
  for (double& v : t.params.head_b.values()) v = rng.normal(0.0, 0.3);
  Record r;
  for (std::size_t f = 0; f < 3; ++f) r.fields.push_back(2 * f + rng.below(2));
  for (std::size_t s = 0; s < 3; ++s) r.history.push_back({rng.below(8), rng.below(4)});
  r.targets.push_back(rng.below(8));
  r.target_actions.push_back(rng.below(4));
  t.stream = stream_for(t.cfg, r);
  return t;
}

}  // namespace tokenformer
