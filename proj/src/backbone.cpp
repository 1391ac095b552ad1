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

#include "tokenformer/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>

#include "tokenformer/errors.hpp"
#include "tokenformer/kv.hpp"
#include "tokenformer/linalg.hpp"

namespace tokenformer {

BlockOptions ModelConfig::block_options() const {
  BlockOptions o;
  o.heads = heads;
  o.nlir = nlir;
  o.gate_from_normalized = gate_from_normalized;
  o.rms_eps = rms_eps;
  o.rope_base = rope_base;
  return o;
}

void ModelConfig::validate() const {
  if (dim == 0 || heads == 0 || dim % heads != 0) {
    throw ConfigError("model: dim " + std::to_string(dim) + " must be a positive multiple of heads " +
                      std::to_string(heads));
  }
  if ((dim / heads) % 2 != 0) throw ConfigError("model: head dim must be even for RoPE");
  if (actions < 2) throw ConfigError("model: need at least 2 actions");
  if (field_vocab == 0 || item_vocab == 0) throw ConfigError("model: vocab sizes must be >= 1");
  if (schedule.depth() != depth) {
    throw ConfigError("model: schedule has " + std::to_string(schedule.depth()) +
                      " layers but depth is " + std::to_string(depth));
  }
  schedule.validate();
  if (!(rms_eps > 0.0)) throw ConfigError("model: rms_eps must be > 0");
}

ModelConfig preset_config(std::string_view name) {
  ModelConfig c;
  if (name == "T") {
    c.depth = 4, c.dim = 64, c.heads = 4;
  } else if (name == "S") {
    c.depth = 4, c.dim = 256, c.heads = 4;
  } else if (name == "M") {
    c.depth = 6, c.dim = 256, c.heads = 4;
  } else if (name == "L") {
    c.depth = 8, c.dim = 256, c.heads = 8;
  } else {
    throw ConfigError("unknown model preset '" + std::string(name) + "' (expected T, S, M or L)");
  }
  c.schedule = MaskSchedule::all_full(c.depth);
  return c;
}

namespace {

std::string windows_to_string(const MaskSchedule& s) {
  std::string out;
  for (std::size_t l = 0; l < s.depth(); ++l) {
    if (l) out += ',';
    out += s.is_sliding(l) ? std::to_string(s.window(l)) : std::string("full");
  }
  return out;
}

std::vector<std::size_t> windows_from_string(std::string_view v) {
  std::vector<std::size_t> w;
  for (const auto& part : kv::split(v, ',')) {
    w.push_back(part == "full" ? kFullWindow : kv::to_size("schedule.windows", part));
  }
  return w;
}

}  // namespace

std::map<std::string, std::string> model_config_to_map(const ModelConfig& c) {
  return {
      {"depth", std::to_string(c.depth)},
      {"dim", std::to_string(c.dim)},
      {"heads", std::to_string(c.heads)},
      {"ffn_dim", std::to_string(c.ffn())},
      {"actions", std::to_string(c.actions)},
      {"field_vocab", std::to_string(c.field_vocab)},
      {"item_vocab", std::to_string(c.item_vocab)},
      {"schedule.windows", windows_to_string(c.schedule)},
      {"schedule.discard", c.schedule.discard_static ? "1" : "0"},
      {"supervision", std::string(to_string(c.supervision))},
      {"nlir", c.nlir ? "1" : "0"},
      {"gate_from_normalized", c.gate_from_normalized ? "1" : "0"},
      {"with_actions", c.with_actions ? "1" : "0"},
      {"use_fields", c.use_fields ? "1" : "0"},
      {"rope_base", kv::format_double(c.rope_base)},
      {"rms_eps", kv::format_double(c.rms_eps)},
      {"init_std", kv::format_double(c.init_std)},
  };
}

ModelConfig model_config_from_map(const std::map<std::string, std::string>& kvs) {
  ModelConfig c;
  bool have_windows = false;
  for (const auto& [k, v] : kvs) {
    if (k == "depth") c.depth = kv::to_size(k, v);
    else if (k == "dim") c.dim = kv::to_size(k, v);
    else if (k == "heads") c.heads = kv::to_size(k, v);
    else if (k == "ffn_dim") c.ffn_dim = kv::to_size(k, v);
    else if (k == "actions") c.actions = kv::to_size(k, v);
    else if (k == "field_vocab") c.field_vocab = kv::to_size(k, v);
    else if (k == "item_vocab") c.item_vocab = kv::to_size(k, v);
    else if (k == "schedule.windows") {
      c.schedule.layer_windows = windows_from_string(v);
      have_windows = true;
    } else if (k == "schedule.discard") c.schedule.discard_static = kv::to_bool(k, v);
    else if (k == "supervision") {
      try {
        c.supervision = parse_supervision_mode(v);
      } catch (const std::exception& e) {
        throw ConfigError(e.what());
      }
    } else if (k == "nlir") c.nlir = kv::to_bool(k, v);
    else if (k == "gate_from_normalized") c.gate_from_normalized = kv::to_bool(k, v);
    else if (k == "with_actions") c.with_actions = kv::to_bool(k, v);
    else if (k == "use_fields") c.use_fields = kv::to_bool(k, v);
    else if (k == "rope_base") c.rope_base = kv::to_double(k, v);
    else if (k == "rms_eps") c.rms_eps = kv::to_double(k, v);
    else if (k == "init_std") c.init_std = kv::to_double(k, v);
    else throw ConfigError("unknown model key '" + k + "'");
  }
  if (!have_windows) {
    const bool discard = c.schedule.discard_static;
    c.schedule = MaskSchedule::all_full(c.depth);
    c.schedule.discard_static = discard;
  }
  c.validate();
  return c;
}

ModelParams ModelParams::zeros(const ModelConfig& cfg) {
  ModelParams p;
  const std::size_t d = cfg.dim;
  p.embed.field = Matrix(cfg.field_vocab, d);
  p.embed.item = Matrix(cfg.item_vocab, d);
  p.embed.action = Matrix(cfg.actions, d);
  p.embed.sep = Matrix(1, d);
  for (std::size_t l = 0; l < cfg.depth; ++l) p.blocks.push_back(BlockParams::zeros(d, cfg.ffn()));
  p.head_w = Matrix(cfg.actions, d);
  p.head_b = Matrix(1, cfg.actions);
  return p;
}

ModelParams ModelParams::init(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ModelParams p = zeros(cfg);
  for (Matrix* m : {&p.embed.field, &p.embed.item, &p.embed.action, &p.embed.sep}) {
    for (double& v : m->values()) v = rng.normal(0.0, cfg.init_std);
  }
  for (auto& b : p.blocks) b = BlockParams::init(cfg.dim, cfg.ffn(), rng, cfg.init_std);
  for (double& v : p.head_w.values()) v = rng.normal(0.0, cfg.init_std);
  return p;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Matrix& m) { n += m.size(); });
  return n;
}

bool ModelParams::all_finite() const {
  bool ok = true;
  for_each([&](const std::string&, const Matrix& m) { ok = ok && m.all_finite(); });
  return ok;
}

std::vector<VisibilityMask> build_masks(const ModelConfig& cfg, const TokenStream& stream) {
  MaskSchedule s = cfg.schedule;
  s.static_prefix = stream.spec.fields;
  std::vector<VisibilityMask> masks;
  masks.reserve(s.depth());
  for (std::size_t l = 0; l < s.depth(); ++l) masks.push_back(build_layer_mask(s, l, stream.size()));
  return masks;
}

TokenStream stream_for(const ModelConfig& cfg, const Record& record) {
  return build_stream(record, cfg.supervision, cfg.with_actions, cfg.use_fields);
}

namespace ad {

ModelVars bind_model(Tape& tape, const ModelParams& params) {
  ModelVars v;
  v.field = tape.leaf(params.embed.field);
  v.item = tape.leaf(params.embed.item);
  v.action = tape.leaf(params.embed.action);
  v.sep = tape.leaf(params.embed.sep);
  v.named = {{"embed.field", v.field}, {"embed.item", v.item}, {"embed.action", v.action},
             {"embed.sep", v.sep}};
  for (std::size_t l = 0; l < params.blocks.size(); ++l) {
    v.blocks.push_back(bind_block(tape, params.blocks[l]));
    const auto& b = v.blocks.back();
    const std::string p = "block" + std::to_string(l) + ".";
    for (const auto& [n, var] : {std::pair{"wq", b.wq}, {"wk", b.wk}, {"wv", b.wv},
                                 {"wo", b.wo}, {"wg", b.wg}, {"w1", b.w1}, {"w2", b.w2},
                                 {"w3", b.w3}, {"g_attn", b.g_attn}, {"g_ffn", b.g_ffn}}) {
      v.named.emplace_back(p + n, var);
    }
  }
  v.head_w = tape.leaf(params.head_w);
  v.head_b = tape.leaf(params.head_b);
  v.named.emplace_back("head.w", v.head_w);
  v.named.emplace_back("head.b", v.head_b);
  return v;
}

GraphOutputs build_graph(Tape& tape, const ModelVars& vars, const TokenStream& stream,
                         const ModelConfig& cfg, std::span<const VisibilityMask> masks) {
  if (masks.size() != vars.blocks.size()) {
    throw ShapeError("build_graph: " + std::to_string(masks.size()) + " masks for " +
                     std::to_string(vars.blocks.size()) + " layers");
  }
  const auto refs = embedding_refs(stream);
  const Var tables[] = {vars.field, vars.item, vars.action, vars.sep};
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (refs[i].row >= tables[refs[i].table].rows()) {
      throw DataError("token " + std::to_string(i) + " id " + std::to_string(refs[i].row) +
                      " outside its vocabulary of " +
                      std::to_string(tables[refs[i].table].rows()));
    }
  }
  GraphOutputs g;
  g.x0 = gather(tables, refs);
  Var x = g.x0;
  const BlockOptions opts = cfg.block_options();
  for (std::size_t l = 0; l < vars.blocks.size(); ++l) {
    if (masks[l].size() != stream.size()) throw ShapeError("build_graph: mask size mismatch");
    const Var m = tape.leaf(masks[l].additive);
    g.layers.push_back(block_forward(x, stream.positions, m, vars.blocks[l], opts));
    x = g.layers.back().block_out;
  }
  g.supervised = stream.loss_indices();
  g.labels = stream.supervised_labels();
  if (!g.supervised.empty()) {
    for (std::size_t c : g.labels) {
      if (c >= cfg.actions) {
        throw DataError("label " + std::to_string(c) + " outside [0, " +
                        std::to_string(cfg.actions) + ")");
      }
    }
    g.hidden = gather_rows(x, g.supervised);
    g.logits = add_row(matmul_nt(g.hidden, vars.head_w), vars.head_b);
    g.loss = cross_entropy(g.logits, g.labels);
  }
  return g;
}

}  // namespace ad

ForwardResult forward(const TokenStream& stream, const ModelParams& params,
                      const ModelConfig& cfg) {
  if (params.blocks.size() != cfg.depth) throw ShapeError("forward: params depth != config depth");
  ad::Tape tape;
  const auto vars = ad::bind_model(tape, params);
  const auto masks = build_masks(cfg, stream);
  const auto g = ad::build_graph(tape, vars, stream, cfg, masks);
  ForwardResult r;
  r.supervised = g.supervised;
  r.labels = g.labels;
  if (!g.supervised.empty()) {
    r.logits = g.logits.value();
    r.hidden = g.hidden.value();
  } else {
    r.logits = Matrix(0, cfg.actions);
    r.hidden = Matrix(0, cfg.dim);
  }
  r.trace.x0 = g.x0.value();
  for (const auto& b : g.layers) {
    BlockTrace t{b.attn_out.value(), b.gated_out.value(), b.attn_residual.value(),
                 b.ffn_out.value(), b.block_out.value(), {}};
    for (const auto& w : b.attn_weights) t.attn_weights.push_back(w.value());
    r.trace.layers.push_back(std::move(t));
  }
  return r;
}

double ce_loss(const Matrix& logits, std::span<const std::size_t> labels) {
  if (logits.rows() == 0) throw DataError("ce_loss: no supervised positions");
  if (labels.size() != logits.rows()) throw ShapeError("ce_loss: label count != logit rows");
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    if (labels[i] >= row.size()) throw DataError("ce_loss: label out of range");
    const double mx = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double v : row) s += std::exp(v - mx);
    total += (mx + std::log(s)) - row[labels[i]];
  }
  return total / static_cast<double>(logits.rows());
}

double compute_auc(std::span<const double> scores, std::span<const std::uint8_t> positives) {
  if (scores.size() != positives.size()) throw ShapeError("compute_auc: length mismatch");
  std::size_t n_pos = 0;
  for (auto p : positives) n_pos += p ? 1 : 0;
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw DataError("compute_auc: both classes must be present");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of mid-ranks (1-based) of the positives.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (positives[order[k]]) rank_sum += mid;
    }
    i = j;
  }
  const double np = static_cast<double>(n_pos);
  const double u = rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

// Checkpoints.

namespace {

constexpr char kMagic[8] = {'T', 'K', 'F', 'M', 'C', 'K', 'P', 'T'};

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}
void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}
void put_str(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint64_t get_uint(std::istream& in, int bytes) {
  unsigned char b[8] = {};
  in.read(reinterpret_cast<char*>(b), bytes);
  if (!in) throw DataError("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = bytes - 1; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}
std::string get_str(std::istream& in) {
  const auto n = get_uint(in, 4);
  if (n > (1u << 24)) throw DataError("checkpoint: implausible string length");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw DataError("checkpoint: truncated file");
  return s;
}

}  // namespace

const Matrix& Checkpoint::tensor(std::string_view name) const {
  for (const auto& [n, m] : tensors) {
    if (n == name) return m;
  }
  throw DataError("checkpoint: missing tensor '" + std::string(name) + "'");
}

bool Checkpoint::has_tensor(std::string_view name) const {
  return std::any_of(tensors.begin(), tensors.end(), [&](const auto& t) { return t.first == name; });
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  out.write(kMagic, sizeof kMagic);
  put_u32(out, Checkpoint::kVersion);
  put_u32(out, static_cast<std::uint32_t>(ckpt.meta.size()));
  for (const auto& [k, v] : ckpt.meta) {
    put_str(out, k);
    put_str(out, v);
  }
  put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, m] : ckpt.tensors) {
    put_str(out, name);
    put_u64(out, m.rows());
    put_u64(out, m.cols());
    for (double v : m.values()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      put_u64(out, bits);
    }
  }
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw DataError("checkpoint: bad magic");
  }
  const auto version = get_uint(in, 4);
  if (version != Checkpoint::kVersion) {
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint c;
  const auto n_meta = get_uint(in, 4);
  for (std::uint64_t i = 0; i < n_meta; ++i) {
    std::string k = get_str(in);
    c.meta[k] = get_str(in);
  }
  const auto n_tensors = get_uint(in, 4);
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    std::string name = get_str(in);
    const auto rows = get_uint(in, 8);
    const auto cols = get_uint(in, 8);
    if (rows * cols > (1ull << 32)) throw DataError("checkpoint: implausible tensor size");
    Matrix m(rows, cols);
    for (double& v : m.values()) {
      const std::uint64_t bits = get_uint(in, 8);
      std::memcpy(&v, &bits, sizeof v);
    }
    c.tensors.emplace_back(std::move(name), std::move(m));
  }
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path);
  write_checkpoint(out, ckpt);
  if (!out) throw DataError("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  return read_checkpoint(in);
}

Checkpoint make_checkpoint(const ModelConfig& cfg, const ModelParams& params) {
  Checkpoint c;
  for (const auto& [k, v] : model_config_to_map(cfg)) c.meta["model." + k] = v;
  params.for_each([&](const std::string& n, const Matrix& m) { c.tensors.emplace_back(n, m); });
  return c;
}

ModelConfig config_from_checkpoint(const Checkpoint& ckpt) {
  std::map<std::string, std::string> m;
  for (const auto& [k, v] : ckpt.meta) {
    if (k.rfind("model.", 0) == 0) m[k.substr(6)] = v;
  }
  return model_config_from_map(m);
}

ModelParams params_from_checkpoint(const Checkpoint& ckpt, const ModelConfig& cfg) {
  ModelParams p = ModelParams::zeros(cfg);
  p.for_each([&](const std::string& n, Matrix& m) {
    const Matrix& src = ckpt.tensor(n);
    if (!src.same_shape(m)) {
      throw DataError("checkpoint: tensor '" + n + "' has shape " + src.shape_string() +
                      ", expected " + m.shape_string());
    }
    m = src;
  });
  return p;
}

}  // namespace tokenformer
