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

#include "tokenformer/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <istream>
#include <iterator>
#include <json.hpp>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "tokenformer/errors.hpp"
#include "tokenformer/kv.hpp"
#include "tokenformer/linalg.hpp"
#include "tokenformer/rng.hpp"

namespace tokenformer {

namespace {

void warn(const std::string& msg) { std::cerr << "warning: " << msg << '\n'; }

}  // namespace

Matrix center_columns(const Matrix& x) {
  Matrix out = x;
  if (x.rows() == 0) return out;
  std::vector<double> mean(x.cols(), 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    for (std::size_t j = 0; j < x.cols(); ++j) mean[j] += r[j];
  }
  for (double& m : mean) m /= static_cast<double>(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < x.cols(); ++j) r[j] -= mean[j];
  }
  return out;
}

Matrix subsample_rows(const Matrix& x, std::size_t cap, std::uint64_t seed) {
  if (x.rows() <= cap) return x;
  std::vector<std::size_t> idx(x.rows());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = Rng(seed).derive(0x5ab5);
  rng.shuffle(idx);
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  Matrix out(cap, x.cols());
  for (std::size_t i = 0; i < cap; ++i) {
    std::copy(x.row(idx[i]).begin(), x.row(idx[i]).end(), out.row(i).begin());
  }
  return out;
}

RankResult rank_summary(const Matrix& x, std::uint64_t seed, std::size_t cap) {
  if (x.rows() < 2) throw DataError("effective rank needs at least 2 rows, got " + std::to_string(x.rows()));
  RankResult r;
  const Matrix c = center_columns(subsample_rows(x, cap, seed));
  r.rows_used = c.rows();
  r.singular_values = svd_singular_values(c);
  const double total = std::accumulate(r.singular_values.begin(), r.singular_values.end(), 0.0);
  const double s1 = r.singular_values.empty() ? 0.0 : r.singular_values.front();
  if (!(s1 > 0.0) || !(total > 0.0)) {
    warn("effective rank of an all-zero centered matrix is reported as 0");
    r.degenerate = true;
    r.r_eff = 0.0;
    return r;
  }
  double h = 0.0;
  for (double s : r.singular_values) {
    const double p = s / total;
    if (p > 0.0) h -= p * std::log(p);
    r.spectrum.push_back(s / s1);
  }
  r.r_eff = std::exp(h);
  return r;
}

double effective_rank(const Matrix& x, std::uint64_t seed, std::size_t cap) {
  return rank_summary(x, seed, cap).r_eff;
}

std::vector<double> normalized_spectrum(const Matrix& x, std::uint64_t seed, std::size_t cap) {
  auto r = rank_summary(x, seed, cap);
  if (r.degenerate) throw NumericalError("normalized spectrum: leading singular value is 0");
  return r.spectrum;
}

std::string_view stage_name(Stage s) {
  switch (s) {
    case Stage::Input: return "input";
    case Stage::AttnOut: return "attn_out";
    case Stage::AttnResidual: return "attn_residual";
    case Stage::FfnOut: return "ffn_out";
    case Stage::BlockOut: return "block_out";
  }
  return "input";
}

Stage parse_stage(std::string_view s) {
  for (Stage st : {Stage::Input, Stage::AttnOut, Stage::AttnResidual, Stage::FfnOut, Stage::BlockOut}) {
    if (stage_name(st) == s) return st;
  }
  throw DataError("unknown stage '" + std::string(s) + "'");
}

std::span<const Stage> layer_stages() {
  static const Stage kStages[] = {Stage::AttnOut, Stage::AttnResidual, Stage::FfnOut,
                                  Stage::BlockOut};
  return kStages;
}

const Matrix& stage_matrix(const ActivationTrace& trace, std::size_t layer, Stage s) {
  if (s == Stage::Input) return trace.x0;
  const BlockTrace& b = trace.layers.at(layer);
  switch (s) {
    case Stage::AttnOut: return b.attn_out;
    case Stage::AttnResidual: return b.attn_residual;
    case Stage::FfnOut: return b.ffn_out;
    default: return b.block_out;
  }
}

std::vector<std::size_t> TokenFilter::rows(const TokenStream& stream) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < stream.size(); ++i) {
    const auto t = stream.types[i];
    if ((items && t == TokenType::Item) || (targets && t == TokenType::Target)) out.push_back(i);
  }
  return out;
}

const SpectralEntry& SpectralReport::at(std::size_t layer, Stage s) const {
  for (const auto& e : entries) {
    if (e.stage == s && (s == Stage::Input || e.layer == layer)) return e;
  }
  throw DataError("spectral report has no entry for layer " + std::to_string(layer) + " " +
                  std::string(stage_name(s)));
}

SpectralReport spectral_trajectory(std::span<const ActivationTrace> traces,
                                   std::span<const TokenStream> streams, const TokenFilter& filter,
                                   std::uint64_t seed, std::size_t cap) {
  if (traces.size() != streams.size()) throw ShapeError("spectral_trajectory: trace/stream count");
  if (traces.empty()) throw DataError("spectral_trajectory: no traces");
  const std::size_t depth = traces.front().layers.size();
  std::vector<std::vector<std::size_t>> rows;
  std::size_t total = 0;
  for (const auto& s : streams) {
    rows.push_back(filter.rows(s));
    total += rows.back().size();
  }
  if (total < 2) throw DataError("spectral_trajectory: filter keeps fewer than 2 rows");
  auto pooled = [&](std::size_t layer, Stage st) {
    const std::size_t d = stage_matrix(traces.front(), layer, st).cols();
    Matrix m(total, d);
    std::size_t k = 0;
    for (std::size_t t = 0; t < traces.size(); ++t) {
      if (traces[t].layers.size() != depth) throw ShapeError("spectral_trajectory: depth varies");
      const Matrix& src = stage_matrix(traces[t], layer, st);
      for (std::size_t i : rows[t]) {
        std::copy(src.row(i).begin(), src.row(i).end(), m.row(k++).begin());
      }
    }
    return m;
  };
  SpectralReport rep;
  rep.entries.push_back({0, Stage::Input, rank_summary(pooled(0, Stage::Input), seed, cap)});
  for (std::size_t l = 0; l < depth; ++l) {
    for (Stage st : layer_stages()) {
      rep.entries.push_back({l, st, rank_summary(pooled(l, st), seed, cap)});
    }
  }
  return rep;
}

// ---- k-means ----

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

}  // namespace

KMeansResult kmeans(const Matrix& x, std::size_t k, std::uint64_t seed, std::size_t max_iter,
                    double tol) {
  if (k < 2) throw ConfigError("kmeans: K must be >= 2");
  const std::size_t n = x.rows();
  if (n < k) throw DataError("kmeans: " + std::to_string(n) + " rows for K=" + std::to_string(k));
  Rng rng = Rng(seed).derive(0x6b6d);
  KMeansResult r;
  r.centroids = Matrix(k, x.cols());
  // k-means++ seeding.
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t first = static_cast<std::size_t>(rng.below(n));
  std::copy(x.row(first).begin(), x.row(first).end(), r.centroids.row(0).begin());
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], sq_dist(x.row(i), r.centroids.row(c - 1)));
      total += d2[i];
    }
    std::size_t pick;
    if (total > 0.0) {
      pick = rng.categorical(d2);
    } else {
      pick = static_cast<std::size_t>(rng.below(n));
    }
    std::copy(x.row(pick).begin(), x.row(pick).end(), r.centroids.row(c).begin());
  }
  r.assignment.assign(n, 0);
  std::vector<double> dist(n);
  for (std::size_t it = 0; it < max_iter; ++it) {
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double bd = sq_dist(x.row(i), r.centroids.row(0));
      for (std::size_t c = 1; c < k; ++c) {
        const double dd = sq_dist(x.row(i), r.centroids.row(c));
        if (dd < bd) {
          bd = dd;
          best = c;
        }
      }
      r.assignment[i] = best;
      dist[i] = bd;
      inertia += bd;
    }
    r.inertia_history.push_back(inertia);
    r.inertia = inertia;
    r.iterations = it + 1;
    if (it > 0) {
      const double prev = r.inertia_history[it - 1];
      if (prev - inertia <= tol * prev) break;
    }
    if (inertia == 0.0) break;
    // Update step; an empty cluster takes the point farthest from its centroid.
    Matrix sums(k, x.cols());
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto s = sums.row(r.assignment[i]);
      auto xi = x.row(i);
      for (std::size_t j = 0; j < x.cols(); ++j) s[j] += xi[j];
      ++counts[r.assignment[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      auto cen = r.centroids.row(c);
      if (counts[c] == 0) {
        const std::size_t far = static_cast<std::size_t>(
            std::max_element(dist.begin(), dist.end()) - dist.begin());
        std::copy(x.row(far).begin(), x.row(far).end(), cen.begin());
        dist[far] = 0.0;
        continue;
      }
      auto s = sums.row(c);
      for (std::size_t j = 0; j < x.cols(); ++j) cen[j] = s[j] / static_cast<double>(counts[c]);
    }
  }
  return r;
}

// ---- MI ----

double discrete_entropy(std::span<const std::size_t> a) {
  if (a.empty()) throw DataError("discrete_entropy: empty input");
  std::map<std::size_t, std::size_t> counts;
  for (auto v : a) ++counts[v];
  const double n = static_cast<double>(a.size());
  double h = 0.0;
  for (const auto& [v, c] : counts) {
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return h;
}

double discrete_mi(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  if (a.size() != b.size()) throw ShapeError("discrete_mi: length mismatch");
  if (a.empty()) throw DataError("discrete_mi: empty input");
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> joint;
  std::map<std::size_t, std::size_t> ca, cb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++joint[{a[i], b[i]}];
    ++ca[a[i]];
    ++cb[b[i]];
  }
  const double n = static_cast<double>(a.size());
  double mi = 0.0;
  for (const auto& [key, c] : joint) {
    const double pxy = static_cast<double>(c) / n;
    const double px = static_cast<double>(ca[key.first]) / n;
    const double py = static_cast<double>(cb[key.second]) / n;
    mi += pxy * std::log(pxy / (px * py));
  }
  return mi;
}

double digamma(double x) {
  if (!(x > 0.0)) throw DataError("digamma: argument must be positive");
  double acc = 0.0;
  while (x < 10.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // Asymptotic series with Bernoulli coefficients.
  const double series =
      inv2 * (1.0 / 12 - inv2 * (1.0 / 120 - inv2 * (1.0 / 252 - inv2 * (1.0 / 240 - inv2 * (1.0 / 132)))));
  return acc + std::log(x) - 0.5 * inv - series;
}

double ksg_mi_1d(std::span<const double> x, std::span<const std::size_t> labels, std::size_t k) {
  const std::size_t n = x.size();
  if (labels.size() != n) throw ShapeError("ksg_mi: length mismatch");
  if (k == 0) throw ConfigError("ksg_mi: k must be >= 1");
  if (n < 2 * k + 2) throw DataError("ksg_mi: need at least 2k+2 samples");
  std::map<std::size_t, std::vector<double>> by_class;
  for (std::size_t i = 0; i < n; ++i) by_class[labels[i]].push_back(x[i]);
  if (by_class.size() < 2) throw DataError("ksg_mi: both label values must be present");
  for (auto& [c, v] : by_class) std::sort(v.begin(), v.end());
  std::vector<double> all(x.begin(), x.end());
  std::sort(all.begin(), all.end());

  double sum_k = 0.0, sum_ny = 0.0, sum_m = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& cls = by_class[labels[i]];
    if (cls.size() < 2) continue;  // singleton classes carry no neighbour
    const std::size_t kk = std::min(k, cls.size() - 1);
    // k-th nearest same-class neighbour by merging outward from the point.
    const auto pos = static_cast<std::size_t>(std::lower_bound(cls.begin(), cls.end(), x[i]) - cls.begin());
    std::size_t lo = pos, hi = pos + 1;  // cls[pos] is the point itself (or an equal value)
    double r = 0.0;
    for (std::size_t step = 0; step < kk; ++step) {
      const double dl = lo > 0 ? x[i] - cls[lo - 1] : std::numeric_limits<double>::infinity();
      const double dh = hi < cls.size() ? cls[hi] - x[i] : std::numeric_limits<double>::infinity();
      if (dl <= dh) {
        r = dl;
        --lo;
      } else {
        r = dh;
        ++hi;
      }
    }
    // Points strictly closer than r, self included. x +- r rounds, so the
    // bracket is trimmed on distances.
    auto first = std::lower_bound(all.begin(), all.end(), x[i] - r);
    auto last = std::upper_bound(all.begin(), all.end(), x[i] + r);
    while (first != last && !(std::abs(*first - x[i]) < r)) ++first;
    while (last != first && !(std::abs(*(last - 1) - x[i]) < r)) --last;
    const auto m = static_cast<std::size_t>(last - first);
    sum_k += digamma(static_cast<double>(kk));
    sum_ny += digamma(static_cast<double>(cls.size()));
    sum_m += digamma(static_cast<double>(std::max<std::size_t>(m, 1)));
    ++used;
  }
  if (used == 0) throw DataError("ksg_mi: no class has two samples");
  const double u = static_cast<double>(used);
  return digamma(static_cast<double>(used)) + sum_k / u - sum_ny / u - sum_m / u;
}

KsgResult ksg_mi(const Matrix& x, std::span<const std::size_t> labels, std::size_t k) {
  if (labels.size() != x.rows()) throw ShapeError("ksg_mi: label count != rows");
  KsgResult r;
  std::vector<double> col(x.rows());
  for (std::size_t j = 0; j < x.cols(); ++j) {
    for (std::size_t i = 0; i < x.rows(); ++i) col[i] = x(i, j);
    const auto [mn, mx] = std::minmax_element(col.begin(), col.end());
    double v = 0.0;
    if (col.empty() || *mn == *mx) {
      warn("ksg_mi: dimension " + std::to_string(j) + " is constant; contributes 0");
      r.degenerate_dims.push_back(j);
    } else {
      v = ksg_mi_1d(col, labels, k);
    }
    r.per_dim.push_back(v);
    r.sum += v;
  }
  r.mean = x.cols() ? r.sum / static_cast<double>(x.cols()) : 0.0;
  return r;
}

double weighted_mi(std::span<const double> mi, std::span<const double> weights) {
  if (mi.size() != weights.size()) throw ShapeError("weighted_mi: length mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < mi.size(); ++i) {
    if (weights[i] < 0.0) throw DataError("weighted_mi: negative weight");
    num += weights[i] * mi[i];
    den += weights[i];
  }
  if (!(den > 0.0)) throw DataError("weighted_mi: total weight is zero");
  return num / den;
}

std::string_view to_string(MiRepresentation r) {
  switch (r) {
    case MiRepresentation::Logits: return "logits";
    case MiRepresentation::Sigmoid: return "sigmoid";
    case MiRepresentation::Penultimate: return "penultimate";
  }
  return "logits";
}

MiRepresentation parse_mi_representation(std::string_view s) {
  if (s == "logits") return MiRepresentation::Logits;
  if (s == "sigmoid") return MiRepresentation::Sigmoid;
  if (s == "penultimate") return MiRepresentation::Penultimate;
  throw ConfigError("unknown MI representation '" + std::string(s) + "'");
}

double MiReport::kmeans_at(std::size_t k) const {
  for (std::size_t i = 0; i < cluster_counts.size(); ++i) {
    if (cluster_counts[i] == k) return kmeans_weighted.at(i);
  }
  throw DataError("MI report has no entry for K=" + std::to_string(k));
}

MiReport mi_report(const Matrix& reps, std::span<const std::size_t> labels, std::size_t actions,
                   std::span<const std::size_t> cluster_counts, std::uint64_t seed,
                   std::size_t ksg_k, MiRepresentation rep) {
  if (labels.size() != reps.rows()) throw ShapeError("mi_report: label count != rows");
  MiReport r;
  r.representation = rep;
  r.samples = reps.rows();
  r.cluster_counts.assign(cluster_counts.begin(), cluster_counts.end());
  std::vector<std::vector<std::size_t>> ys(actions, std::vector<std::size_t>(labels.size()));
  std::vector<bool> ok(actions);
  for (std::size_t a = 0; a < actions; ++a) {
    std::size_t pos = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      ys[a][i] = labels[i] == a ? 1 : 0;
      pos += ys[a][i];
    }
    ok[a] = pos > 0 && pos < labels.size();
    r.weights.push_back(ok[a] ? static_cast<double>(pos) : 0.0);
  }
  for (std::size_t a = 0; a < actions; ++a) {
    if (!ok[a]) {
      r.ksg_per_action.push_back(0.0);
      r.ksg_mean_per_action.push_back(0.0);
      continue;
    }
    const auto k = ksg_mi(reps, ys[a], ksg_k);
    r.ksg_per_action.push_back(k.sum);
    r.ksg_mean_per_action.push_back(k.mean);
  }
  r.kmeans_per_action.assign(actions, std::vector<double>(cluster_counts.size(), 0.0));
  for (std::size_t ki = 0; ki < cluster_counts.size(); ++ki) {
    const auto km = kmeans(reps, cluster_counts[ki], seed + ki);
    for (std::size_t a = 0; a < actions; ++a) {
      if (ok[a]) r.kmeans_per_action[a][ki] = discrete_mi(km.assignment, ys[a]);
    }
  }
  r.ksg_weighted = weighted_mi(r.ksg_per_action, r.weights);
  for (std::size_t ki = 0; ki < cluster_counts.size(); ++ki) {
    std::vector<double> col(actions);
    for (std::size_t a = 0; a < actions; ++a) col[a] = r.kmeans_per_action[a][ki];
    r.kmeans_weighted.push_back(weighted_mi(col, r.weights));
  }
  return r;
}

SupervisedSet supervised_representations(std::span<const ForwardResult> results,
                                         std::span<const TokenStream> streams,
                                         MiRepresentation rep, bool targets_only) {
  if (results.size() != streams.size()) throw ShapeError("supervised_representations: count");
  SupervisedSet s;
  std::vector<std::pair<std::size_t, std::size_t>> picks;
  for (std::size_t t = 0; t < results.size(); ++t) {
    for (std::size_t k = 0; k < results[t].supervised.size(); ++k) {
      if (targets_only && streams[t].types[results[t].supervised[k]] != TokenType::Target) continue;
      picks.emplace_back(t, k);
    }
  }
  if (picks.empty()) throw DataError("supervised_representations: nothing supervised");
  const Matrix& first = rep == MiRepresentation::Penultimate ? results[picks[0].first].hidden
                                                             : results[picks[0].first].logits;
  s.reps = Matrix(picks.size(), first.cols());
  for (std::size_t i = 0; i < picks.size(); ++i) {
    const auto& r = results[picks[i].first];
    const Matrix& src = rep == MiRepresentation::Penultimate ? r.hidden : r.logits;
    auto dst = s.reps.row(i);
    auto row = src.row(picks[i].second);
    for (std::size_t j = 0; j < row.size(); ++j) {
      dst[j] = rep == MiRepresentation::Sigmoid ? 1.0 / (1.0 + std::exp(-row[j])) : row[j];
    }
    s.labels.push_back(r.labels[picks[i].second]);
  }
  return s;
}

// ---- receptive field ----

double attention_span(std::span<const double> row) {
  double h = 0.0;
  for (double p : row) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::exp(h);
}

ReceptiveFieldReport receptive_field_stats(const std::vector<std::vector<Matrix>>& weights,
                                           std::size_t bins) {
  if (bins == 0) throw ConfigError("receptive_field_stats: bins must be >= 1");
  ReceptiveFieldReport rep;
  for (const auto& heads : weights) {
    LayerSpan ls;
    ls.histogram.assign(bins, 0);
    if (heads.empty()) {
      rep.layers.push_back(ls);
      continue;
    }
    const std::size_t n = heads.front().rows();
    ls.bin_width = n > 1 ? static_cast<double>(n - 1) / static_cast<double>(bins) : 1.0;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double span = 0.0;
      for (const auto& h : heads) span += attention_span(h.row(i));
      span /= static_cast<double>(heads.size());
      total += span;
      // spans come out of exp(log), so nudge exact bin edges up
      auto b = static_cast<std::size_t>((span - 1.0) / ls.bin_width + 1e-9);
      ls.histogram[std::min(b, bins - 1)] += 1;
    }
    ls.mean_span = n ? total / static_cast<double>(n) : 0.0;
    rep.layers.push_back(std::move(ls));
  }
  return rep;
}

ReceptiveFieldReport receptive_field_stats(std::span<const ActivationTrace> traces,
                                           std::size_t bins) {
  if (traces.empty()) return {};
  const std::size_t depth = traces.front().layers.size();
  ReceptiveFieldReport pooled;
  std::vector<double> sums(depth, 0.0);
  std::vector<double> width(depth, 1.0);
  pooled.layers.resize(depth);
  for (const auto& t : traces) {
    std::vector<std::vector<Matrix>> w;
    for (const auto& l : t.layers) w.push_back(l.attn_weights);
    const auto r = receptive_field_stats(w, bins);
    for (std::size_t l = 0; l < depth; ++l) {
      auto& dst = pooled.layers[l];
      if (dst.histogram.empty()) {
        dst.histogram.assign(bins, 0);
        dst.bin_width = r.layers[l].bin_width;
      }
      for (std::size_t b = 0; b < bins; ++b) dst.histogram[b] += r.layers[l].histogram[b];
      sums[l] += r.layers[l].mean_span;
    }
  }
  for (std::size_t l = 0; l < depth; ++l) {
    pooled.layers[l].mean_span = sums[l] / static_cast<double>(traces.size());
  }
  return pooled;
}

// ---- exports ----

namespace {

void write_matrix_line(std::ostream& out, std::string_view stage, std::size_t layer,
                       const Matrix& m) {
  out << stage << ' ' << layer << ' ' << m.rows() << ' ' << m.cols();
  for (double v : m.values()) out << ' ' << kv::format_double(v);
  out << '\n';
}

}  // namespace

void write_trace(std::ostream& out, const ActivationTrace& trace) {
  write_matrix_line(out, "input", 0, trace.x0);
  for (std::size_t l = 0; l < trace.layers.size(); ++l) {
    const auto& b = trace.layers[l];
    write_matrix_line(out, "attn_out", l, b.attn_out);
    write_matrix_line(out, "gated_out", l, b.gated_out);
    write_matrix_line(out, "attn_residual", l, b.attn_residual);
    write_matrix_line(out, "ffn_out", l, b.ffn_out);
    write_matrix_line(out, "block_out", l, b.block_out);
    for (std::size_t h = 0; h < b.attn_weights.size(); ++h) {
      write_matrix_line(out, "attn_weights." + std::to_string(h), l, b.attn_weights[h]);
    }
  }
}

ActivationTrace read_trace(std::istream& in) {
  ActivationTrace t;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string stage;
    std::size_t layer = 0, rows = 0, cols = 0;
    if (!(ls >> stage >> layer >> rows >> cols)) throw DataError("trace: malformed header");
    Matrix m(rows, cols);
    for (double& v : m.values()) {
      std::string tok;
      if (!(ls >> tok)) throw DataError("trace: too few values for " + stage);
      v = std::stod(tok);
    }
    if (stage == "input") {
      t.x0 = std::move(m);
      continue;
    }
    if (layer >= t.layers.size()) t.layers.resize(layer + 1);
    auto& b = t.layers[layer];
    if (stage == "attn_out") b.attn_out = std::move(m);
    else if (stage == "gated_out") b.gated_out = std::move(m);
    else if (stage == "attn_residual") b.attn_residual = std::move(m);
    else if (stage == "ffn_out") b.ffn_out = std::move(m);
    else if (stage == "block_out") b.block_out = std::move(m);
    else if (stage.rfind("attn_weights.", 0) == 0) b.attn_weights.push_back(std::move(m));
    else throw DataError("trace: unknown stage '" + stage + "'");
  }
  return t;
}

std::string spectral_json(const SpectralReport& r) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& e : r.entries) {
    j.push_back({{"layer", e.layer},
                 {"stage", stage_name(e.stage)},
                 {"effective_rank", e.rank.r_eff},
                 {"tokens", e.rank.rows_used},
                 {"degenerate", e.rank.degenerate},
                 {"normalized_spectrum", e.rank.spectrum}});
  }
  return nlohmann::json{{"spectral", j}}.dump(2);
}

std::string mi_json(const MiReport& r) {
  nlohmann::json j;
  j["representation"] = to_string(r.representation);
  j["samples"] = r.samples;
  j["cluster_counts"] = r.cluster_counts;
  j["weights"] = r.weights;
  j["ksg_per_action"] = r.ksg_per_action;
  j["ksg_mean_per_action"] = r.ksg_mean_per_action;
  j["kmeans_per_action"] = r.kmeans_per_action;
  j["ksg_weighted"] = r.ksg_weighted;
  j["kmeans_weighted"] = r.kmeans_weighted;
  return nlohmann::json{{"mi", j}}.dump(2);
}

std::string receptive_json(const ReceptiveFieldReport& r) {
  nlohmann::json j = nlohmann::json::array();
  for (std::size_t l = 0; l < r.layers.size(); ++l) {
    j.push_back({{"layer", l},
                 {"mean_span", r.layers[l].mean_span},
                 {"bin_width", r.layers[l].bin_width},
                 {"histogram", r.layers[l].histogram}});
  }
  return nlohmann::json{{"receptive_field", j}}.dump(2);
}

void write_spectral_csv(std::ostream& out, const SpectralReport& r, std::string_view tag) {
  for (const auto& e : r.entries) {
    const std::string pre = std::string(tag) + ",spectral," + std::to_string(e.layer) + "," +
                            std::string(stage_name(e.stage)) + ",";
    out << pre << "effective_rank," << kv::format_double(e.rank.r_eff) << '\n';
    out << pre << "tokens," << e.rank.rows_used << '\n';
    for (std::size_t k = 0; k < e.rank.spectrum.size(); ++k) {
      out << pre << "s" << k + 1 << ',' << kv::format_double(e.rank.spectrum[k]) << '\n';
    }
  }
}

void write_mi_csv(std::ostream& out, const MiReport& r, std::string_view tag) {
  const std::string pre = std::string(tag) + ",mi,,";
  out << pre << "ksg_weighted," << kv::format_double(r.ksg_weighted) << '\n';
  for (std::size_t a = 0; a < r.ksg_per_action.size(); ++a) {
    out << pre << "ksg_a" << a << ',' << kv::format_double(r.ksg_per_action[a]) << '\n';
  }
  for (std::size_t ki = 0; ki < r.cluster_counts.size(); ++ki) {
    out << pre << "kmeans_K" << r.cluster_counts[ki] << ','
        << kv::format_double(r.kmeans_weighted[ki]) << '\n';
  }
}

void write_receptive_csv(std::ostream& out, const ReceptiveFieldReport& r, std::string_view tag) {
  for (std::size_t l = 0; l < r.layers.size(); ++l) {
    out << tag << ",receptive_field," << l << ",,mean_span,"
        << kv::format_double(r.layers[l].mean_span) << '\n';
  }
}

}  // namespace tokenformer
