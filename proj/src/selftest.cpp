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

#include "gha/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace gha {

namespace {

GhaKernel or_default(const GhaKernel& kernel) {
  if (kernel) return kernel;
  return [](const Hierarchy& h, const EmbeddingConfig& e) { return gha_forward(h, e); };
}

EmbeddingConfig make_embedding(EmbeddingMode mode, int d, Rng& rng) {
  EmbeddingConfig e;
  e.mode = mode;
  if (mode != EmbeddingMode::kNone) e.fourier = FourierEmbedding::sample(rng, d / 2);
  return e;
}

std::string fmt(double x) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(3) << x;
  return s.str();
}

}  // namespace

double max_row_relative_error(const Matrix& a, const Matrix& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double denom = std::max(b.row(i).norm(), 1e-300);
    worst = std::max(worst, (a.row(i) - b.row(i)).norm() / denom);
  }
  return worst;
}

Positions four_point_layout() {
  Positions p(4, 3);
  p << 0.0, 0.0, 0.0,
       1.0, 0.0, 0.0,
       4.0, 1.0, 0.0,
       5.0, 1.0, 0.0;
  return p;
}

Matrix four_point_closed_form(const Matrix& q, const Matrix& k, const Matrix& v) {
  const double sd = std::sqrt(static_cast<double>(q.cols()));
  const std::array<std::array<int, 2>, 2> pairs{{{0, 1}, {2, 3}}};
  Matrix z(4, v.cols());
  for (int g = 0; g < 2; ++g) {
    const int a = pairs[g][0], b = pairs[g][1];
    const Eigen::RowVectorXd q_coarse = q.row(a) + q.row(b);  // twice the level-1 query
    const double w_own = std::exp(q_coarse.dot(k.row(a) + k.row(b)) / (4.0 * sd));
    const double w_other = std::exp(q_coarse.dot(k.row(pairs[1 - g][0]) + k.row(pairs[1 - g][1])) / (4.0 * sd));
    const Eigen::RowVectorXd v_own = (v.row(a) + v.row(b)) / 2.0;
    const Eigen::RowVectorXd v_other = (v.row(pairs[1 - g][0]) + v.row(pairs[1 - g][1])) / 2.0;
    for (int i : {a, b}) {
      const double wa = std::exp(q.row(i).dot(k.row(a)) / sd);
      const double wb = std::exp(q.row(i).dot(k.row(b)) / sd);
      const double d = wa + wb + w_own + w_other;
      z.row(i) = (wa * v.row(a) + wb * v.row(b) + w_own * v_own + w_other * v_other) / d;
    }
  }
  return z;
}

CheckResult check_four_point_golden(const GhaKernel& kernel, std::uint64_t seed) {
  CheckResult r{"four-point golden example", false, 0.0, 1e-12, ""};
  Rng rng = substream(seed, "golden");
  const Matrix q = random_normal(rng, 4, 4), k = random_normal(rng, 4, 4), v = random_normal(rng, 4, 4);
  const Hierarchy h = build_point_hierarchy(four_point_layout(), q, k, v, 2, 2);
  if (h.level_count() != 2) {
    r.detail = "expected 2 levels, got " + std::to_string(h.level_count());
    return r;
  }
  const Matrix z = or_default(kernel)(h, EmbeddingConfig::none()).z;
  r.metric = (z - four_point_closed_form(q, k, v)).cwiseAbs().maxCoeff();
  r.passed = r.metric < r.tolerance;
  r.detail = "max abs error " + fmt(r.metric);
  return r;
}

CheckResult check_oracle_equivalence(const GhaKernel& kernel, int instances, std::uint64_t seed) {
  CheckResult r{"oracle equivalence (k >= N)", true, 0.0, 1e-12, ""};
  const GhaKernel run = or_default(kernel);
  const std::array<int, 3> dims{2, 4, 8};
  const std::array<EmbeddingMode, 3> modes{EmbeddingMode::kNone, EmbeddingMode::kAbsolute, EmbeddingMode::kRelative};
  for (int t = 0; t < instances; ++t) {
    Rng rng = substream(seed, "oracle", static_cast<std::uint64_t>(t));
    const int n = 2 + t % 31;
    const int d = dims[static_cast<std::size_t>(t) % dims.size()];
    const EmbeddingMode mode = modes[static_cast<std::size_t>(t / 3) % modes.size()];
    const Positions p = random_cloud(rng, n);
    const Matrix q = random_normal(rng, n, d), k = random_normal(rng, n, d), v = random_normal(rng, n, d);
    const EmbeddingConfig emb = make_embedding(mode, d, rng);
    const int kk = n + static_cast<int>(t % 3);
    const Matrix zg = run(build_point_hierarchy(p, q, k, v, kk, 2), emb).z;
    const Matrix zd = dense_attention(AttentionInputs{q, k, v, p, emb}).z;
    r.metric = std::max(r.metric, max_row_relative_error(zg, zd));
  }
  r.passed = r.metric < r.tolerance;
  r.detail = std::to_string(instances) + " instances, max row-relative error " + fmt(r.metric);
  return r;
}

CheckResult check_truncation_equivalence(const GhaKernel& kernel, int instances, std::uint64_t seed) {
  CheckResult r{"truncation equivalence (local attention)", true, 0.0, 1e-12, ""};
  const GhaKernel run = or_default(kernel);
  const std::array<EmbeddingMode, 3> modes{EmbeddingMode::kNone, EmbeddingMode::kAbsolute, EmbeddingMode::kRelative};
  for (int t = 0; t < instances; ++t) {
    Rng rng = substream(seed, "truncation", static_cast<std::uint64_t>(t));
    const int n = 8 + t % 40;
    const int d = 2 * (1 + t % 4);
    const int kk = 2 + t % 7;
    const Positions p = random_cloud(rng, n);
    const Matrix q = random_normal(rng, n, d), k = random_normal(rng, n, d), v = random_normal(rng, n, d);
    const EmbeddingConfig emb = make_embedding(modes[static_cast<std::size_t>(t) % modes.size()], d, rng);
    const Hierarchy full = build_point_hierarchy(p, q, k, v, kk, 2);
    const Matrix zg = run(truncated(full, 1), emb).z;
    const Matrix zl = local_attention(AttentionInputs{q, k, v, p, emb}, full.level(0).topology).z;
    r.metric = std::max(r.metric, max_row_relative_error(zg, zl));
  }
  r.passed = r.metric < r.tolerance;
  r.detail = std::to_string(instances) + " instances, max row-relative error " + fmt(r.metric);
  return r;
}

GradientCheck finite_difference_check(const Hierarchy& hierarchy, const EmbeddingConfig& embedding,
                                      const Matrix& dz, double step) {
  const LevelFeatures& base = hierarchy.features.front();
  const AttentionResult fwd = gha_forward(hierarchy, embedding);
  const AttentionGradients g = gha_backward(hierarchy, embedding, fwd, dz);

  auto loss = [&](const Matrix& q, const Matrix& k, const Matrix& v) {
    return gha_forward(attach_features(hierarchy.structure, q, k, v), embedding).z.cwiseProduct(dz).sum();
  };
  GradientCheck out;
  auto compare = [&](int which, const Matrix& analytic) {
    for (Eigen::Index i = 0; i < analytic.rows(); ++i) {
      for (Eigen::Index j = 0; j < analytic.cols(); ++j) {
        Matrix q = base.q, k = base.k, v = base.v;
        Matrix& target = which == 0 ? q : which == 1 ? k : v;
        const double x0 = target(i, j);
        target(i, j) = x0 + step;
        const double up = loss(q, k, v);
        target(i, j) = x0 - step;
        const double down = loss(q, k, v);
        const double numeric = (up - down) / (2.0 * step);
        const double a = analytic(i, j);
        const double abs_err = std::abs(a - numeric);
        // Floor keeps near-zero entries from turning round-off into large ratios.
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-3});
        out.max_abs_error = std::max(out.max_abs_error, abs_err);
        out.max_rel_error = std::max(out.max_rel_error, abs_err / denom);
      }
    }
  };
  compare(0, g.dq);
  compare(1, g.dk);
  compare(2, g.dv);
  return out;
}

CheckResult check_gradients(int instances, std::uint64_t seed) {
  CheckResult r{"gradient check (central differences, h = 1e-5)", true, 0.0, 1e-5, ""};
  for (int t = 0; t < instances; ++t) {
    Rng rng = substream(seed, "gradient", static_cast<std::uint64_t>(t));
    const bool voxel = t % 2 == 1;
    const int d = 2 * (1 + (t / 2) % 4);  // 2, 4, 6, 8
    const EmbeddingMode mode = (t / 2) % 2 == 0 ? EmbeddingMode::kNone : EmbeddingMode::kRelative;
    Hierarchy h;
    if (!voxel) {
      const int n = 6 + t % 11;  // <= 16
      const Positions p = random_cloud(rng, n);
      h = build_point_hierarchy(p, random_normal(rng, n, d), random_normal(rng, n, d), random_normal(rng, n, d),
                                3, 2);
    } else {
      // Points scattered in a small voxel box; at most 16 occupied cells.
      std::uniform_real_distribution<double> u(0.0, 6.0);
      Positions p(16, 3);
      for (Eigen::Index i = 0; i < 16; ++i)
        for (int c = 0; c < 3; ++c) p(i, c) = u(rng);
      const SparseVoxelGrid grid = voxelize(PointCloud(p), 1.0);
      const Eigen::Index n = grid.size();
      h = build_voxel_hierarchy(grid, random_normal(rng, n, d), random_normal(rng, n, d), random_normal(rng, n, d));
    }
    const EmbeddingConfig emb = make_embedding(mode, d, rng);
    const Matrix dz = random_normal(rng, h.token_count(), d);
    const GradientCheck gc = finite_difference_check(h, emb, dz, 1e-5);
    r.metric = std::max(r.metric, gc.max_rel_error);
  }
  r.passed = r.metric < r.tolerance;
  r.detail = std::to_string(instances) + " instances, max relative error " + fmt(r.metric);
  return r;
}

int run_selftest(std::ostream& out, const GhaKernel& kernel) {
  std::vector<CheckResult> results;
  auto guarded = [&](const char* name, auto&& fn) {
    try {
      results.push_back(fn());
    } catch (const std::exception& e) {
      results.push_back(CheckResult{name, false, 0.0, 0.0, std::string("error: ") + e.what()});
    }
  };
  guarded("four-point golden example", [&] { return check_four_point_golden(kernel); });
  guarded("oracle equivalence (k >= N)", [&] { return check_oracle_equivalence(kernel); });
  guarded("truncation equivalence (local attention)", [&] { return check_truncation_equivalence(kernel); });
  guarded("gradient check", [&] { return check_gradients(); });

  bool all = true;
  for (const CheckResult& c : results) {
    out << (c.passed ? "[PASS] " : "[FAIL] ") << std::left << std::setw(48) << c.name << ' ' << c.detail;
    if (c.tolerance > 0.0) out << " (tolerance " << fmt(c.tolerance) << ')';
    out << '\n';
    all = all && c.passed;
  }
  out << (all ? "selftest passed\n" : "selftest FAILED\n");
  return all ? 0 : 1;
}

}  // namespace gha
