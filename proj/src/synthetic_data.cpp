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

#include "tokenformer/synthetic_data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "tokenformer/errors.hpp"
#include "tokenformer/kv.hpp"
#include "tokenformer/rng.hpp"

namespace tokenformer {

std::string_view to_string(LabelMode m) {
  switch (m) {
    case LabelMode::Joint: return "joint";
    case LabelMode::StaticOnly: return "static_only";
    case LabelMode::SequenceOnly: return "sequence_only";
  }
  return "joint";
}

LabelMode parse_label_mode(std::string_view s) {
  if (s == "joint") return LabelMode::Joint;
  if (s == "static_only") return LabelMode::StaticOnly;
  if (s == "sequence_only") return LabelMode::SequenceOnly;
  throw ConfigError("unknown label mode '" + std::string(s) + "'");
}

void SynthSpec::validate() const {
  if (users == 0) throw ConfigError("synth: users must be >= 1");
  if (field_cards.empty()) throw ConfigError("synth: need at least one field");
  for (auto c : field_cards) {
    if (c < 2) throw ConfigError("synth: field cardinalities must be >= 2");
  }
  if (clusters < 1 || items < clusters) throw ConfigError("synth: need items >= clusters >= 1");
  if (actions < 2) throw ConfigError("synth: need at least 2 actions");
  if (action_priors.size() != actions) {
    throw ConfigError("synth: action_priors has " + std::to_string(action_priors.size()) +
                      " entries for " + std::to_string(actions) + " actions");
  }
  double s = 0.0;
  for (double p : action_priors) {
    if (!(p > 0.0)) throw ConfigError("synth: action priors must be > 0");
    s += p;
  }
  if (std::abs(s - 1.0) > 1e-9) throw ConfigError("synth: action priors must sum to 1");
  if (history == 0) throw ConfigError("synth: history must be >= 1");
  if (latent_dim == 0) throw ConfigError("synth: latent_dim must be >= 1");
  if (!(noise >= 0.0)) throw ConfigError("synth: noise must be >= 0 (inf allowed)");
  if (!(zipf >= 0.0)) throw ConfigError("synth: zipf exponent must be >= 0");
  if (!(markov_mix >= 0.0 && markov_mix <= 1.0)) throw ConfigError("synth: markov_mix in [0,1]");
}

std::size_t SynthSpec::field_vocab() const {
  return std::accumulate(field_cards.begin(), field_cards.end(), std::size_t{0});
}

std::vector<std::size_t> SynthSpec::field_offsets() const {
  std::vector<std::size_t> off(field_cards.size());
  std::size_t acc = 0;
  for (std::size_t f = 0; f < field_cards.size(); ++f) {
    off[f] = acc;
    acc += field_cards[f];
  }
  return off;
}

namespace {

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}
std::string join_doubles(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + kv::format_double(v[i]);
  return s;
}

}  // namespace

std::map<std::string, std::string> synth_spec_to_map(const SynthSpec& s) {
  return {
      {"users", std::to_string(s.users)},
      {"field_cards", join_sizes(s.field_cards)},
      {"items", std::to_string(s.items)},
      {"clusters", std::to_string(s.clusters)},
      {"actions", std::to_string(s.actions)},
      {"history", std::to_string(s.history)},
      {"targets", std::to_string(s.targets)},
      {"latent_dim", std::to_string(s.latent_dim)},
      {"noise", std::isinf(s.noise) ? std::string("inf") : kv::format_double(s.noise)},
      {"zipf", kv::format_double(s.zipf)},
      {"markov_mix", kv::format_double(s.markov_mix)},
      {"affinity_weight", kv::format_double(s.affinity_weight)},
      {"field_weight", kv::format_double(s.field_weight)},
      {"interaction_weight", kv::format_double(s.interaction_weight)},
      {"recency_weight", kv::format_double(s.recency_weight)},
      {"action_priors", join_doubles(s.action_priors)},
      {"label_mode", std::string(to_string(s.label_mode))},
      {"seed", std::to_string(s.seed)},
  };
}

SynthSpec synth_spec_from_map(const std::map<std::string, std::string>& kvs) {
  SynthSpec s;
  bool priors_given = false;
  for (const auto& [k, v] : kvs) {
    if (k == "users") s.users = kv::to_size(k, v);
    else if (k == "field_cards") s.field_cards = kv::to_size_list(k, v);
    else if (k == "items") s.items = kv::to_size(k, v);
    else if (k == "clusters") s.clusters = kv::to_size(k, v);
    else if (k == "actions") s.actions = kv::to_size(k, v);
    else if (k == "history") s.history = kv::to_size(k, v);
    else if (k == "targets") s.targets = kv::to_size(k, v);
    else if (k == "latent_dim") s.latent_dim = kv::to_size(k, v);
    else if (k == "noise") s.noise = kv::to_double(k, v);
    else if (k == "zipf") s.zipf = kv::to_double(k, v);
    else if (k == "markov_mix") s.markov_mix = kv::to_double(k, v);
    else if (k == "affinity_weight") s.affinity_weight = kv::to_double(k, v);
    else if (k == "field_weight") s.field_weight = kv::to_double(k, v);
    else if (k == "interaction_weight") s.interaction_weight = kv::to_double(k, v);
    else if (k == "recency_weight") s.recency_weight = kv::to_double(k, v);
    else if (k == "action_priors") {
      s.action_priors = kv::to_double_list(k, v);
      priors_given = true;
    } else if (k == "label_mode") s.label_mode = parse_label_mode(v);
    else if (k == "seed") s.seed = kv::to_u64(k, v);
    else throw ConfigError("unknown synth key '" + k + "'");
  }
  if (!priors_given && s.action_priors.size() != s.actions) {
    s.action_priors.assign(s.actions, 1.0 / static_cast<double>(s.actions));
  }
  s.validate();
  return s;
}

namespace {

// Dataset-level structure shared by every user.
struct World {
  std::size_t r = 0;
  std::vector<std::vector<double>> cluster_vec;  // C x r
  std::vector<std::vector<double>> item_vec;     // V x r
  std::vector<std::vector<std::size_t>> cluster_items;  // items of each cluster, popularity order
  std::vector<double> item_zipf;                 // weights by rank within a cluster
  std::vector<std::vector<double>> field_proj;   // per field, r-vector
  std::vector<std::vector<double>> field_zipf;   // per field, weights by rank
  std::vector<double> field_main;                // card0 x A
  std::vector<double> field_table;               // card0 x C x A
  std::vector<double> action_w;                  // ordinal engagement weights, centered
};

std::vector<double> zipf_weights(std::size_t n, double s) {
  std::vector<double> w(n);
  for (std::size_t k = 0; k < n; ++k) w[k] = 1.0 / std::pow(static_cast<double>(k + 1), s);
  return w;
}

World build_world(const SynthSpec& spec) {
  Rng rng = Rng(spec.seed).derive(0xC0FFEE);
  World w;
  w.r = spec.latent_dim;
  const std::size_t C = spec.clusters;
  w.cluster_vec.assign(C, std::vector<double>(w.r));
  for (auto& v : w.cluster_vec) {
    for (double& x : v) x = rng.normal();
  }
  w.item_vec.assign(spec.items, std::vector<double>(w.r));
  w.cluster_items.assign(C, {});
  for (std::size_t v = 0; v < spec.items; ++v) {
    for (std::size_t k = 0; k < w.r; ++k) w.item_vec[v][k] = w.cluster_vec[v % C][k] + 0.5 * rng.normal();
    w.cluster_items[v % C].push_back(v);
  }
  for (auto& ci : w.cluster_items) rng.shuffle(ci);
  w.item_zipf = zipf_weights(spec.items / C + 1, spec.zipf);
  const std::size_t M = spec.field_cards.size();
  w.field_proj.assign(M, std::vector<double>(w.r));
  w.field_zipf.resize(M);
  for (std::size_t f = 0; f < M; ++f) {
    for (double& x : w.field_proj[f]) x = rng.normal() / std::sqrt(static_cast<double>(w.r));
    w.field_zipf[f] = zipf_weights(spec.field_cards[f], spec.zipf);
  }
  const std::size_t A = spec.actions;
  const std::size_t card0 = spec.field_cards[0];
  w.field_main.resize(card0 * A);
  for (double& x : w.field_main) x = rng.normal();
  w.field_table.resize(card0 * C * A);
  for (double& x : w.field_table) x = rng.normal();
  w.action_w.resize(A);
  for (std::size_t a = 0; a < A; ++a) {
    w.action_w[a] = static_cast<double>(a) - 0.5 * static_cast<double>(A - 1);
  }
  return w;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

struct Event {
  std::size_t item;
  std::size_t action;
};

struct UserDraw {
  std::vector<std::size_t> fields;  // local values
  std::vector<Event> events;        // history followed by targets
  std::vector<std::vector<double>> scores;  // pre-bias scores per event
};

// Scores of every action for one event, before bias.
void event_scores(const SynthSpec& spec, const World& w, const std::vector<double>& u,
                  std::size_t f0, std::size_t item, std::size_t prev_item,
                  std::size_t prev_action, bool has_prev, std::vector<double>& s) {
  const std::size_t A = spec.actions;
  const std::size_t C = spec.clusters;
  s.assign(A, 0.0);
  if (std::isinf(spec.noise)) return;
  const bool seq = spec.label_mode != LabelMode::StaticOnly;
  const bool stat = spec.label_mode != LabelMode::SequenceOnly;
  const std::size_t c = item % C;
  if (seq) {
    const double aff = dot(u, w.item_vec[item]) / std::sqrt(static_cast<double>(w.r));
    for (std::size_t a = 0; a < A; ++a) s[a] += spec.affinity_weight * w.action_w[a] * aff;
    if (has_prev) {
      const double same = (prev_item % C == c) ? 1.0 : -1.0;
      for (std::size_t a = 0; a < A; ++a) {
        s[a] += 0.5 * spec.recency_weight * w.action_w[a] * same;
      }
      s[prev_action] += spec.recency_weight;
    }
  }
  if (stat) {
    for (std::size_t a = 0; a < A; ++a) s[a] += spec.field_weight * w.field_main[f0 * A + a];
    // Static-only labels read field 0 alone so a model without fields is at chance.
    if (spec.label_mode == LabelMode::Joint) {
      for (std::size_t a = 0; a < A; ++a) {
        s[a] += spec.interaction_weight * w.field_table[(f0 * C + c) * A + a];
      }
    }
  }
  if (spec.noise > 0.0) {
    for (double& x : s) x /= spec.noise;
  }
}

UserDraw draw_user(const SynthSpec& spec, const World& w, std::uint64_t salt,
                   const std::vector<double>& bias) {
  Rng rng = Rng(spec.seed).derive(salt);
  UserDraw d;
  std::vector<double> u(w.r);
  for (double& x : u) x = rng.normal();
  const std::size_t M = spec.field_cards.size();
  const std::size_t C = spec.clusters;
  const std::size_t A = spec.actions;
  d.fields.resize(M);
  for (std::size_t f = 0; f < M; ++f) {
    const std::size_t card = spec.field_cards[f];
    const std::size_t rank = rng.categorical(w.field_zipf[f]);
    if (f == 0) {
      d.fields[f] = rank;
    } else {
      // The latent picks which value is most frequent.
      const double z = 1.0 / (1.0 + std::exp(-2.0 * dot(w.field_proj[f], u)));
      const auto shift = std::min(card - 1, static_cast<std::size_t>(z * static_cast<double>(card)));
      d.fields[f] = (rank + shift) % card;
    }
  }
  // Interest distribution over clusters.
  std::vector<double> pi(C);
  double mx = -1e300;
  for (std::size_t c = 0; c < C; ++c) {
    pi[c] = 1.5 * dot(u, w.cluster_vec[c]) / std::sqrt(static_cast<double>(w.r));
    mx = std::max(mx, pi[c]);
  }
  for (double& p : pi) p = std::exp(p - mx);
  const std::size_t n_events = spec.history + spec.targets;
  std::size_t cluster = rng.categorical(pi);
  std::vector<double> probs(A), s;
  for (std::size_t t = 0; t < n_events; ++t) {
    if (t > 0 && rng.uniform() < spec.markov_mix) cluster = rng.categorical(pi);
    const auto& members = w.cluster_items[cluster];
    const std::size_t rank =
        rng.categorical(std::span<const double>(w.item_zipf.data(), members.size()));
    const std::size_t item = members[rank];
    const bool has_prev = t > 0;
    event_scores(spec, w, u, d.fields[0], item, has_prev ? d.events.back().item : 0,
                 has_prev ? d.events.back().action : 0, has_prev, s);
    double m2 = -1e300;
    std::size_t best = 0;
    for (std::size_t a = 0; a < A; ++a) {
      if (s[a] + bias[a] > m2) best = a;
      m2 = std::max(m2, s[a] + bias[a]);
    }
    for (std::size_t a = 0; a < A; ++a) probs[a] = std::exp(s[a] + bias[a] - m2);
    // Zero noise: the label is the arg max, no sampling.
    const std::size_t action = spec.noise == 0.0 ? best : rng.categorical(probs);
    d.events.push_back({item, action});
    d.scores.push_back(s);
  }
  return d;
}

// Fits offsets so the mean predicted class probability matches the priors.
std::vector<double> calibrate(const SynthSpec& spec, const World& w) {
  const std::size_t A = spec.actions;
  std::vector<double> bias(A);
  for (std::size_t a = 0; a < A; ++a) bias[a] = std::log(spec.action_priors[a]);
  // Arg max labels have no smooth marginal to fit; keep the log priors.
  if (spec.noise == 0.0) return bias;
  const std::size_t n_cal = std::min<std::size_t>(200, std::max<std::size_t>(spec.users, 50));
  for (int round = 0; round < 3; ++round) {
    std::vector<std::vector<double>> scores;
    for (std::size_t i = 0; i < n_cal; ++i) {
      auto d = draw_user(spec, w, 0xCA1B000000ull + i, bias);
      for (auto& s : d.scores) scores.push_back(std::move(s));
    }
    for (int it = 0; it < 100; ++it) {
      std::vector<double> mean(A, 0.0), p(A);
      for (const auto& s : scores) {
        double mx = -1e300;
        for (std::size_t a = 0; a < A; ++a) mx = std::max(mx, s[a] + bias[a]);
        double z = 0.0;
        for (std::size_t a = 0; a < A; ++a) z += (p[a] = std::exp(s[a] + bias[a] - mx));
        for (std::size_t a = 0; a < A; ++a) mean[a] += p[a] / z;
      }
      for (std::size_t a = 0; a < A; ++a) {
        bias[a] += std::log(spec.action_priors[a] / (mean[a] / static_cast<double>(scores.size())));
      }
    }
  }
  return bias;
}

}  // namespace

SynthDataset generate(const SynthSpec& spec) {
  spec.validate();
  const World w = build_world(spec);
  SynthDataset ds;
  ds.spec = spec;
  ds.action_bias = calibrate(spec, w);
  const auto offsets = spec.field_offsets();
  ds.records.reserve(spec.users);
  for (std::size_t i = 0; i < spec.users; ++i) {
    const auto d = draw_user(spec, w, 0x05E2000000ull + i, ds.action_bias);
    Record r;
    for (std::size_t f = 0; f < d.fields.size(); ++f) r.fields.push_back(offsets[f] + d.fields[f]);
    for (std::size_t t = 0; t < spec.history; ++t) {
      r.history.push_back({d.events[t].item, d.events[t].action});
    }
    for (std::size_t k = 0; k < spec.targets; ++k) {
      r.targets.push_back(d.events[spec.history + k].item);
      r.target_actions.emplace_back(d.events[spec.history + k].action);
    }
    ds.records.push_back(std::move(r));
  }
  return ds;
}

Split split_users(std::size_t n, double train_frac, double valid_frac, double test_frac,
                  std::uint64_t seed) {
  for (double f : {train_frac, valid_frac, test_frac}) {
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("split: fractions must lie in [0, 1]");
  }
  if (std::abs(train_frac + valid_frac + test_frac - 1.0) > 1e-9) {
    throw ConfigError("split: fractions must sum to 1");
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng = Rng(seed).derive(0x5917);
  rng.shuffle(perm);
  const auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n)));
  const auto n_valid = std::min(
      n - n_train, static_cast<std::size_t>(std::llround(valid_frac * static_cast<double>(n))));
  Split s;
  s.train.assign(perm.begin(), perm.begin() + n_train);
  s.valid.assign(perm.begin() + n_train, perm.begin() + n_train + n_valid);
  s.test.assign(perm.begin() + n_train + n_valid, perm.end());
  for (auto* v : {&s.train, &s.valid, &s.test}) std::sort(v->begin(), v->end());
  return s;
}

std::vector<Record> select(std::span<const Record> records, std::span<const std::size_t> idx) {
  std::vector<Record> out;
  out.reserve(idx.size());
  for (auto i : idx) {
    if (i >= records.size()) throw DataError("select: index out of range");
    out.push_back(records[i]);
  }
  return out;
}

std::uint64_t spec_hash(const SynthSpec& s) {
  std::ostringstream os;
  kv::write(os, synth_spec_to_map(s));
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : os.str()) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace tokenformer
