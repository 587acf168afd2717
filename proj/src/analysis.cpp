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

#include "gha/analysis.hpp"

#include "gha/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <numeric>
#include <ostream>

namespace gha {

namespace {

constexpr Eigen::Index kProbeBatch = 256;

void check_cap(Eigen::Index n, std::size_t cap) {
  if (static_cast<std::size_t>(n) > cap) {
    throw CapacityError("one-hot probing needs N <= " + std::to_string(cap) + ", got N = " + std::to_string(n));
  }
}

/// Runs `run(V)` with V = columns [c0, c1) of the identity and stitches the
/// outputs into one N x N matrix.
Matrix probe(Eigen::Index n, const std::function<Matrix(const Matrix&)>& run) {
  Matrix w(n, n);
  for (Eigen::Index c0 = 0; c0 < n; c0 += kProbeBatch) {
    const Eigen::Index width = std::min(kProbeBatch, n - c0);
    Matrix basis = Matrix::Zero(n, width);
    for (Eigen::Index c = 0; c < width; ++c) basis(c0 + c, c) = 1.0;
    w.middleCols(c0, width) = run(basis);
  }
  return w;
}

double distance(const Positions& p, Eigen::Index i, Eigen::Index j) {
  return std::sqrt(squared_distance(p.row(i).transpose(), p.row(j).transpose()));
}

}  // namespace

Matrix effective_attention_matrix(const Hierarchy& hierarchy, const EmbeddingConfig& embedding,
                                  std::size_t probe_cap) {
  const Eigen::Index n = hierarchy.token_count();
  check_cap(n, probe_cap);
  return probe(n, [&](const Matrix& v) { return gha_forward(with_values(hierarchy, v), embedding).z; });
}

Vector effective_attention_row(const Hierarchy& hierarchy, Index query, const EmbeddingConfig& embedding,
                               std::size_t probe_cap) {
  if (query < 0 || query >= hierarchy.token_count()) throw InvalidInput("effective_attention_row: bad query index");
  return effective_attention_matrix(hierarchy, embedding, probe_cap).row(query).transpose();
}

Matrix dense_attention_matrix(const AttentionInputs& inputs, std::size_t probe_cap) {
  check_cap(inputs.q.rows(), probe_cap);
  return probe(inputs.q.rows(), [&](const Matrix& v) {
    return dense_attention(AttentionInputs{inputs.q, inputs.k, v, inputs.positions, inputs.embedding}).z;
  });
}

Matrix local_attention_matrix(const AttentionInputs& inputs, const NeighborhoodTopology& topology,
                              std::size_t probe_cap) {
  check_cap(inputs.q.rows(), probe_cap);
  return probe(inputs.q.rows(), [&](const Matrix& v) {
    return local_attention(AttentionInputs{inputs.q, inputs.k, v, inputs.positions, inputs.embedding}, topology).z;
  });
}

AttentionInputs AnalysisProblem::level0_inputs() const {
  const LevelFeatures& f = hierarchy.features.front();
  return AttentionInputs{f.q, f.k, f.v, positions, embedding};
}

AnalysisProblem make_problem(const PointCloud& cloud, const AnalysisSetup& setup) {
  AnalysisProblem p;
  p.setup = setup;
  std::shared_ptr<const HierarchyStructure> structure;
  if (setup.flavor == Flavor::kPoint) {
    structure = build_point_structure(cloud.positions(), setup.k, setup.r);
  } else {
    structure = build_voxel_structure(voxelize(cloud, setup.voxel_size));
  }
  p.positions = structure->levels.front().positions;
  const Eigen::Index n = p.positions.rows();
  Rng rng = substream(setup.seed, "qkv");
  const Matrix q = random_normal(rng, n, setup.dim);
  const Matrix k = random_normal(rng, n, setup.dim);
  const Matrix v = random_normal(rng, n, setup.dim);
  p.hierarchy = attach_features(std::move(structure), q, k, v);
  p.embedding.mode = setup.embedding_mode;
  if (setup.embedding_mode != EmbeddingMode::kNone) {
    if (setup.dim % 2 != 0) throw ConfigError("positional embedding needs an even dimension");
    Rng frng = substream(setup.seed, "fourier");
    p.embedding.fourier = FourierEmbedding::sample(frng, setup.dim / 2);
  }
  return p;
}

Matrix mechanism_weights(const AnalysisProblem& problem, Mechanism mechanism) {
  const std::size_t cap = problem.setup.probe_cap;
  switch (mechanism) {
    case Mechanism::kGha: return effective_attention_matrix(problem.hierarchy, problem.embedding, cap);
    case Mechanism::kLocal:
      return local_attention_matrix(problem.level0_inputs(), problem.hierarchy.level(0).topology, cap);
    case Mechanism::kDense: return dense_attention_matrix(problem.level0_inputs(), cap);
  }
  throw ConfigError("unknown mechanism");
}

std::size_t DistanceHistogram::bin_of(double d) const {
  const std::size_t bins = mass.size();
  const double top = edges.back();
  if (top <= 0.0) return 0;
  const auto b = static_cast<std::size_t>(std::floor(d / top * static_cast<double>(bins)));
  return std::min(b, bins - 1);
}

double DistanceHistogram::total_mass() const { return std::accumulate(mass.begin(), mass.end(), 0.0); }

double DistanceHistogram::mass_beyond_radius_bins() const {
  double sum = 0.0;
  for (std::size_t b = bin_of(knn_radius) + 1; b < mass.size(); ++b) sum += mass[b];
  return sum;
}

DistanceHistogram attention_histogram(const AnalysisProblem& problem, Mechanism mechanism, std::size_t bins) {
  if (bins < 1) throw InvalidInput("attention_histogram: need at least one bin");
  const Positions& p = problem.positions;
  const Eigen::Index n = p.rows();
  check_cap(n, problem.setup.probe_cap);
  const Matrix w = mechanism_weights(problem, mechanism);

  double max_d = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) max_d = std::max(max_d, distance(p, i, j));

  DistanceHistogram h;
  h.mechanism = mechanism;
  h.edges.resize(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b) h.edges[b] = max_d * static_cast<double>(b) / static_cast<double>(bins);
  h.mass.assign(bins, 0.0);

  const NeighborhoodTopology& topo = problem.hierarchy.level(0).topology;
  for (Eigen::Index i = 0; i < n; ++i) {
    double radius = 0.0;
    for (Index j : topo.neighbors(static_cast<std::size_t>(i))) radius = std::max(radius, distance(p, i, j));
    h.knn_radius = std::max(h.knn_radius, radius);
    for (Eigen::Index j = 0; j < n; ++j) {
      const double d = distance(p, i, j);
      h.mass[h.bin_of(d)] += w(i, j);
      if (d > radius) h.mass_beyond_neighborhood += w(i, j);
    }
  }
  return h;
}

DistanceHistogram attention_histogram(const PointCloud& cloud, const AnalysisSetup& setup, Mechanism mechanism,
                                      std::size_t bins) {
  return attention_histogram(make_problem(cloud, setup), mechanism, bins);
}

double locality_ratio(const Matrix& weights, const Positions& positions, LocalityNeighbors counts) {
  const Eigen::Index n = positions.rows();
  if (n < 2) return 1.0;
  double near_sum = 0.0, far_sum = 0.0;
  std::size_t near_n = 0, far_n = 0;
  std::vector<std::pair<double, Index>> order;
  for (Eigen::Index i = 0; i < n; ++i) {
    order.clear();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i) order.emplace_back(squared_distance(positions.row(i).transpose(), positions.row(j).transpose()),
                                     static_cast<Index>(j));
    }
    std::sort(order.begin(), order.end());
    const auto m = static_cast<Eigen::Index>(order.size());
    const Eigen::Index nn = std::min<Eigen::Index>(counts.near, m), nf = std::min<Eigen::Index>(counts.far, m);
    for (Eigen::Index t = 0; t < nn; ++t) near_sum += weights(i, order[t].second);
    for (Eigen::Index t = 0; t < nf; ++t) far_sum += weights(i, order[m - 1 - t].second);
    near_n += static_cast<std::size_t>(nn);
    far_n += static_cast<std::size_t>(nf);
  }
  return (near_sum / static_cast<double>(near_n)) / (far_sum / static_cast<double>(far_n));
}

ApproximationReport approximation_report(const AnalysisProblem& problem) {
  const Eigen::Index n = problem.positions.rows();
  check_cap(n, problem.setup.probe_cap);
  ApproximationReport rep;
  rep.n = n;
  rep.depth = problem.hierarchy.depth();

  const AttentionResult gha = gha_forward(problem.hierarchy, problem.embedding);
  const AttentionResult dense = dense_attention(problem.level0_inputs());
  rep.gha_weight_count = gha.weight_count;
  double sum_err = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double denom = dense.z.row(i).norm();
    const double diff = (gha.z.row(i) - dense.z.row(i)).norm();
    const double err = denom > 0.0 ? diff / denom : diff;
    rep.max_rel_error = std::max(rep.max_rel_error, err);
    sum_err += err;
  }
  rep.mean_rel_error = sum_err / static_cast<double>(n);
  rep.min_normalizer = gha.normalizers.minCoeff();

  const Matrix w = effective_attention_matrix(problem.hierarchy, problem.embedding, problem.setup.probe_cap);
  rep.min_weight = w.minCoeff();
  rep.max_row_sum_error = (w.rowwise().sum().array() - 1.0).abs().maxCoeff();
  if (!w.allFinite()) rep.max_row_sum_error = std::numeric_limits<double>::quiet_NaN();
  rep.locality_ratio = locality_ratio(w, problem.positions);
  return rep;
}

ApproximationReport approximation_report(const PointCloud& cloud, const AnalysisSetup& setup) {
  return approximation_report(make_problem(cloud, setup));
}

bool report_invariants_hold(const ApproximationReport& r) {
  // NaN compares false, so corrupted values fail every check.
  return r.min_weight >= 0.0 && r.max_row_sum_error <= 1e-10 && r.min_normalizer > 0.0 &&
         std::isfinite(r.min_normalizer);
}

// ---------------------------------------------------------------------------

std::array<double, 3> linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<double>(x.size());
  if (x.size() < 2 || x.size() != y.size()) return {0.0, 0.0, 0.0};
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  const double slope = sxy / sxx;
  const double intercept = my - slope * mx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = y[i] - (slope * x[i] + intercept);
    ss_res += e * e;
  }
  const double r2 = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
  return {slope, intercept, r2};
}

bool ScalingReport::bound_holds() const {
  return std::all_of(rows.begin(), rows.end(),
                     [](const ScalingRow& r) { return static_cast<double>(r.weight_count) <= r.bound; });
}

ScalingReport scaling_sweep(const std::vector<Eigen::Index>& sizes, const ScalingSetup& setup) {
  if (!std::is_sorted(sizes.begin(), sizes.end())) throw InvalidInput("scaling_sweep: sizes must be ascending");
  using Clock = std::chrono::steady_clock;
  ScalingReport rep;
  std::vector<double> xs, ys;
  for (std::size_t s = 0; s < sizes.size(); ++s) {
    const Eigen::Index n_points = sizes[s];
    Rng crng = substream(setup.seed, "cloud-gen", static_cast<std::uint64_t>(n_points));
    const Positions cloud = random_cloud(crng, n_points);

    const auto t0 = Clock::now();
    std::shared_ptr<const HierarchyStructure> structure;
    if (setup.flavor == Flavor::kPoint) {
      structure = build_point_structure(cloud, setup.k, setup.r);
    } else {
      const double cells = std::max(1.0, static_cast<double>(n_points) / setup.voxel_points_per_cell);
      structure = build_voxel_structure(voxelize(PointCloud(cloud), 1.0 / std::cbrt(cells)));
    }
    const Eigen::Index n = structure->token_count();
    Rng rng = substream(setup.seed, "qkv", static_cast<std::uint64_t>(n_points));
    const Matrix q = random_normal(rng, n, setup.dim), k = random_normal(rng, n, setup.dim),
                 v = random_normal(rng, n, setup.dim);
    const Hierarchy hier = attach_features(structure, q, k, v);
    const AttentionResult res = gha_forward(hier);
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();

    ScalingRow row;
    row.n = n;
    row.mechanism = Mechanism::kGha;
    row.flavor = setup.flavor;
    row.k = structure->neighborhood_k;
    row.r = structure->coarsen_ratio;
    row.depth = structure->depth();
    row.weight_count = res.weight_count;
    row.bound = static_cast<double>(row.k) * row.r / (row.r - 1.0) * static_cast<double>(n);
    // Scores plus per-token (Y, D, m) accumulators for every level.
    std::uint64_t tokens = 0;
    for (const auto& l : structure->levels) tokens += static_cast<std::uint64_t>(l.size());
    row.peak_bytes_estimate = 8 * (res.weight_count + tokens * static_cast<std::uint64_t>(setup.dim + 2));
    row.wall_seconds = secs;
    rep.rows.push_back(row);
    xs.push_back(static_cast<double>(n));
    ys.push_back(static_cast<double>(row.weight_count));

    if (setup.include_dense && n <= setup.dense_cap) {
      const auto d0 = Clock::now();
      const AttentionResult dense = dense_attention(AttentionInputs{q, k, v, structure->levels.front().positions, {}});
      ScalingRow drow;
      drow.n = n;
      drow.mechanism = Mechanism::kDense;
      drow.flavor = setup.flavor;
      drow.weight_count = dense.weight_count;
      drow.bound = static_cast<double>(n) * static_cast<double>(n);
      drow.peak_bytes_estimate = 8 * (dense.weight_count + static_cast<std::uint64_t>(n) * (setup.dim + 2));
      drow.wall_seconds = std::chrono::duration<double>(Clock::now() - d0).count();
      rep.rows.push_back(drow);
    }
  }
  const auto fit = linear_fit(xs, ys);
  rep.slope = fit[0];
  rep.intercept = fit[1];
  rep.r_squared = fit[2];
  return rep;
}

// ---------------------------------------------------------------------------

void write_scaling_csv(std::ostream& out, const ScalingReport& report) {
  out << "# weight_count counts materialized attention weights (the quantity the linear bound applies to); "
         "it is not a GPU memory measurement\n";
  out << "# fit: slope=" << std::setprecision(10) << report.slope << " intercept=" << report.intercept
      << " r_squared=" << report.r_squared << '\n';
  out << "n,mechanism,flavor,k,r,depth,weight_count,bound,weight_per_token,peak_bytes_estimate,wall_seconds\n";
  for (const ScalingRow& r : report.rows) {
    out << r.n << ',' << to_string(r.mechanism) << ',' << to_string(r.flavor) << ',' << r.k << ',' << r.r << ','
        << r.depth << ',' << r.weight_count << ',' << std::setprecision(17) << r.bound << ','
        << static_cast<double>(r.weight_count) / static_cast<double>(r.n) << ',' << r.peak_bytes_estimate << ','
        << std::setprecision(6) << r.wall_seconds << '\n';
  }
}

void write_histogram_csv(std::ostream& out, const std::vector<DistanceHistogram>& hists) {
  out << "mechanism,bin,lower,upper,mass\n" << std::setprecision(17);
  for (const DistanceHistogram& h : hists) {
    for (std::size_t b = 0; b < h.mass.size(); ++b) {
      out << to_string(h.mechanism) << ',' << b << ',' << h.edges[b] << ',' << h.edges[b + 1] << ',' << h.mass[b]
          << '\n';
    }
  }
}

void write_report_csv(std::ostream& out, const ApproximationReport& r, const AnalysisSetup& s) {
  out << "n,flavor,k,r,depth,max_rel_error,mean_rel_error,locality_ratio,min_weight,max_row_sum_error,"
         "min_normalizer,gha_weight_count\n";
  out << std::setprecision(17) << r.n << ',' << to_string(s.flavor) << ',' << s.k << ',' << s.r << ',' << r.depth
      << ',' << r.max_rel_error << ',' << r.mean_rel_error << ',' << r.locality_ratio << ',' << r.min_weight << ','
      << r.max_row_sum_error << ',' << r.min_normalizer << ',' << r.gha_weight_count << '\n';
}

void write_heatmap_csv(std::ostream& out, const Positions& positions, const Vector& weights) {
  out << "x,y,z,weight\n" << std::setprecision(17);
  for (Eigen::Index i = 0; i < positions.rows(); ++i) {
    out << positions(i, 0) << ',' << positions(i, 1) << ',' << positions(i, 2) << ',' << weights[i] << '\n';
  }
}

}  // namespace gha
