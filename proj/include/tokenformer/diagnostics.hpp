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
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tokenformer/backbone.hpp"
#include "tokenformer/matrix.hpp"
#include "tokenformer/token_stream.hpp"

namespace tokenformer {

// ---- spectral ----

inline constexpr std::size_t kMaxRankRows = 10000;

// Column means subtracted.
Matrix center_columns(const Matrix& x);
// Uniform subsample of `cap` rows without replacement (row order kept); x itself
// when it already has <= cap rows.
Matrix subsample_rows(const Matrix& x, std::size_t cap, std::uint64_t seed);

struct RankResult {
  double r_eff = 0.0;
  std::vector<double> spectrum;  // normalized, descending, s_1 = 1 (empty if degenerate)
  std::vector<double> singular_values;
  std::size_t rows_used = 0;
  bool degenerate = false;  // centered matrix is all zero
};

// exp(entropy of s_k / sum s) of the centered rows. Needs >= 2 rows.
RankResult rank_summary(const Matrix& x, std::uint64_t seed = 0, std::size_t cap = kMaxRankRows);
double effective_rank(const Matrix& x, std::uint64_t seed = 0, std::size_t cap = kMaxRankRows);
// s_k / s_1 of the centered rows. Throws NumericalError when s_1 = 0.
std::vector<double> normalized_spectrum(const Matrix& x, std::uint64_t seed = 0,
                                        std::size_t cap = kMaxRankRows);

enum class Stage { Input, AttnOut, AttnResidual, FfnOut, BlockOut };
std::string_view stage_name(Stage s);
Stage parse_stage(std::string_view s);
// The four per-layer stages, in block order.
std::span<const Stage> layer_stages();

// Rows of one stage. Input uses layer 0 and reads trace.x0.
const Matrix& stage_matrix(const ActivationTrace& trace, std::size_t layer, Stage s);

struct TokenFilter {
  bool items = true;
  bool targets = false;
  std::vector<std::size_t> rows(const TokenStream& stream) const;
};

struct SpectralEntry {
  std::size_t layer = 0;  // Input entry uses 0
  Stage stage = Stage::Input;
  RankResult rank;
};

struct SpectralReport {
  std::vector<SpectralEntry> entries;  // input, then 4 per layer
  const SpectralEntry& at(std::size_t layer, Stage s) const;
};

// Pools the filtered rows of every trace per (layer, stage) before ranking.
SpectralReport spectral_trajectory(std::span<const ActivationTrace> traces,
                                   std::span<const TokenStream> streams,
                                   const TokenFilter& filter = {}, std::uint64_t seed = 0,
                                   std::size_t cap = kMaxRankRows);

// ---- clustering and mutual information ----

struct KMeansResult {
  std::vector<std::size_t> assignment;
  Matrix centroids;
  double inertia = 0.0;
  std::vector<double> inertia_history;  // after each assignment step
  std::size_t iterations = 0;
};

// k-means++ seeding then Lloyd iterations until the relative inertia drop is
// <= tol or max_iter. Needs K >= 2 and rows >= K.
KMeansResult kmeans(const Matrix& x, std::size_t k, std::uint64_t seed,
                    std::size_t max_iter = 300, double tol = 1e-6);

// Plug-in MI in nats from joint counts.
double discrete_mi(std::span<const std::size_t> a, std::span<const std::size_t> b);
double discrete_entropy(std::span<const std::size_t> a);

double digamma(double x);

struct KsgResult {
  std::vector<double> per_dim;
  double sum = 0.0;
  double mean = 0.0;
  std::vector<std::size_t> degenerate_dims;  // constant columns, counted as 0
};

// Mixed continuous/discrete kNN estimator applied to each column against a
// discrete label; k-th neighbour searched within the point's own class.
KsgResult ksg_mi(const Matrix& x, std::span<const std::size_t> labels, std::size_t k = 3);
double ksg_mi_1d(std::span<const double> x, std::span<const std::size_t> labels,
                 std::size_t k = 3);

double weighted_mi(std::span<const double> mi, std::span<const double> weights);

enum class MiRepresentation { Logits, Sigmoid, Penultimate };
std::string_view to_string(MiRepresentation r);
MiRepresentation parse_mi_representation(std::string_view s);

inline constexpr std::size_t kDefaultClusterCounts[] = {4, 8, 16, 32, 48, 64, 96};

struct MiReport {
  MiRepresentation representation = MiRepresentation::Logits;
  std::size_t samples = 0;
  std::vector<std::size_t> cluster_counts;
  std::vector<double> weights;                      // positives per action
  std::vector<double> ksg_per_action;               // summed over dims
  std::vector<double> ksg_mean_per_action;          // averaged over dims
  std::vector<std::vector<double>> kmeans_per_action;  // [action][K index]
  double ksg_weighted = 0.0;
  std::vector<double> kmeans_weighted;              // per K
  double kmeans_at(std::size_t k) const;            // weighted value at cluster count k
};

// One clustering per K shared by every action; Y_a = [label == a].
// Actions without both classes get weight 0 and are skipped.
MiReport mi_report(const Matrix& reps, std::span<const std::size_t> labels, std::size_t actions,
                   std::span<const std::size_t> cluster_counts, std::uint64_t seed,
                   std::size_t ksg_k = 3, MiRepresentation rep = MiRepresentation::Logits);

// Final supervised representation of every stream, pooled.
struct SupervisedSet {
  Matrix reps;
  std::vector<std::size_t> labels;
};
SupervisedSet supervised_representations(std::span<const ForwardResult> results,
                                         std::span<const TokenStream> streams,
                                         MiRepresentation rep, bool targets_only);

// ---- receptive field ----

struct LayerSpan {
  double mean_span = 0.0;
  std::vector<std::size_t> histogram;  // counts per bin over [1, S_L]
  double bin_width = 1.0;
};

struct ReceptiveFieldReport {
  std::vector<LayerSpan> layers;
};

// Span of a query row = exp(entropy of its attention distribution).
double attention_span(std::span<const double> row);

// weights[layer][head] is S_L x S_L. Per layer the span of every query row is
// averaged over heads, then over queries.
ReceptiveFieldReport receptive_field_stats(const std::vector<std::vector<Matrix>>& weights,
                                           std::size_t bins = 16);
ReceptiveFieldReport receptive_field_stats(std::span<const ActivationTrace> traces,
                                           std::size_t bins = 16);

// ---- exports ----

// Columnar text: one line per matrix `stage layer rows cols v0 v1 ...`.
void write_trace(std::ostream& out, const ActivationTrace& trace);
ActivationTrace read_trace(std::istream& in);

std::string spectral_json(const SpectralReport& r);
std::string mi_json(const MiReport& r);
std::string receptive_json(const ReceptiveFieldReport& r);
// Flat CSV rows `kind,layer,stage,key,value` for plotting.
void write_spectral_csv(std::ostream& out, const SpectralReport& r, std::string_view tag = "");
void write_mi_csv(std::ostream& out, const MiReport& r, std::string_view tag = "");
void write_receptive_csv(std::ostream& out, const ReceptiveFieldReport& r,
                         std::string_view tag = "");

}  // namespace tokenformer
