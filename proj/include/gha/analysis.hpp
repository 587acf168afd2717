/*
 * Copyright (c) 2026, The GHA Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include "gha/block.hpp"

#include <iosfwd>
#include <vector>

namespace gha {

inline constexpr std::size_t kDefaultProbeCap = 4096;

// One-hot probing: with V = I the output row i holds the coefficient every
// token's value receives in z_i. Probes run in column batches.

Matrix effective_attention_matrix(const Hierarchy& hierarchy, const EmbeddingConfig& embedding = {},
                                  std::size_t probe_cap = kDefaultProbeCap);
Vector effective_attention_row(const Hierarchy& hierarchy, Index query, const EmbeddingConfig& embedding = {},
                               std::size_t probe_cap = kDefaultProbeCap);

Matrix dense_attention_matrix(const AttentionInputs& inputs, std::size_t probe_cap = kDefaultProbeCap);
Matrix local_attention_matrix(const AttentionInputs& inputs, const NeighborhoodTopology& topology,
                              std::size_t probe_cap = kDefaultProbeCap);

/// Seeded random Q/K/V over the tokens of a cloud (points, or voxels for
/// the voxel flavor).
struct AnalysisSetup {
  Flavor flavor = Flavor::kPoint;
  int k = 8;
  int r = 2;
  double voxel_size = 0.1;
  int dim = 8;
  std::uint64_t seed = 0;
  EmbeddingMode embedding_mode = EmbeddingMode::kNone;
  std::size_t probe_cap = kDefaultProbeCap;
};

struct AnalysisProblem {
  AnalysisSetup setup;
  Positions positions;  // token positions at level 0
  Hierarchy hierarchy;  // holds level-0 Q, K, V
  EmbeddingConfig embedding;

  AttentionInputs level0_inputs() const;
};

AnalysisProblem make_problem(const PointCloud& cloud, const AnalysisSetup& setup);

/// Effective N x N weights of the chosen mechanism on the problem.
Matrix mechanism_weights(const AnalysisProblem& problem, Mechanism mechanism);

struct DistanceHistogram {
  Mechanism mechanism = Mechanism::kGha;
  std::vector<double> edges;  // bins + 1, uniform over [0, max pairwise distance]
  std::vector<double> mass;
  double knn_radius = 0.0;    // largest level-0 neighbor distance
  double mass_beyond_neighborhood = 0.0;  // per-query: weight on tokens outside that query's radius

  std::size_t bin_of(double distance) const;
  double total_mass() const;
  /// Mass in bins strictly above the bin holding knn_radius.
  double mass_beyond_radius_bins() const;
};

DistanceHistogram attention_histogram(const AnalysisProblem& problem, Mechanism mechanism, std::size_t bins = 64);
DistanceHistogram attention_histogram(const PointCloud& cloud, const AnalysisSetup& setup, Mechanism mechanism,
                                      std::size_t bins = 64);

struct ApproximationReport {
  Eigen::Index n = 0;
  int depth = 0;
  double max_rel_error = 0.0;
  double mean_rel_error = 0.0;
  double locality_ratio = 0.0;  // mean weight on 5 nearest / 5 farthest other tokens
  double min_weight = 0.0;
  double max_row_sum_error = 0.0;
  double min_normalizer = 0.0;
  std::uint64_t gha_weight_count = 0;
};

ApproximationReport approximation_report(const AnalysisProblem& problem);
ApproximationReport approximation_report(const PointCloud& cloud, const AnalysisSetup& setup);

/// Probability rows (nonnegative, sum to 1 within 1e-10) and finite, positive normalizers.
bool report_invariants_hold(const ApproximationReport& report);

struct LocalityNeighbors {
  int near = 5;
  int far = 5;
};
double locality_ratio(const Matrix& weights, const Positions& positions, LocalityNeighbors counts = {});

struct ScalingRow {
  Eigen::Index n = 0;
  Mechanism mechanism = Mechanism::kGha;
  Flavor flavor = Flavor::kPoint;
  int k = 0;
  int r = 0;
  int depth = 0;
  std::uint64_t weight_count = 0;
  double bound = 0.0;  // k * r / (r - 1) * N; N^2 for dense
  std::uint64_t peak_bytes_estimate = 0;
  double wall_seconds = 0.0;
};

struct ScalingReport {
  std::vector<ScalingRow> rows;
  double slope = 0.0;      // least-squares weight_count vs N over GHA rows
  double intercept = 0.0;
  double r_squared = 0.0;

  bool bound_holds() const;
};

struct ScalingSetup {
  Flavor flavor = Flavor::kPoint;
  int k = 8;
  int r = 2;
  int dim = 8;
  std::uint64_t seed = 0;
  bool include_dense = false;
  Eigen::Index dense_cap = 1 << 15;  // dense rows only up to this N
  double voxel_points_per_cell = 1.0;
};

ScalingReport scaling_sweep(const std::vector<Eigen::Index>& sizes, const ScalingSetup& setup);

/// Linear least squares of y on x; returns {slope, intercept, r_squared}.
std::array<double, 3> linear_fit(const std::vector<double>& x, const std::vector<double>& y);

// CSV writers.
void write_scaling_csv(std::ostream& out, const ScalingReport& report);
void write_histogram_csv(std::ostream& out, const std::vector<DistanceHistogram>& hists);
void write_report_csv(std::ostream& out, const ApproximationReport& report, const AnalysisSetup& setup);
void write_heatmap_csv(std::ostream& out, const Positions& positions, const Vector& weights);

}  // namespace gha
