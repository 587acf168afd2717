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

// Acceptance gate: one line per criterion, nonzero exit if any fails.

#include "gha/analysis.hpp"
#include "gha/io.hpp"
#include "gha/parallel.hpp"
#include "test_util.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

namespace {

using namespace gha;
using Clock = std::chrono::steady_clock;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string sci(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", x);
  return buf;
}

std::string secs(double s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f s", s);
  return buf;
}

double row_rel(const Matrix& a, const Matrix& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    worst = std::max(worst, (a.row(i) - b.row(i)).norm() / std::max(b.row(i).norm(), 1e-300));
  return worst;
}

EmbeddingConfig embedding(EmbeddingMode mode, int d, Rng& rng) {
  EmbeddingConfig e;
  e.mode = mode;
  if (mode != EmbeddingMode::kNone) e.fourier = FourierEmbedding::sample(rng, d / 2);
  return e;
}

// 1 -------------------------------------------------------------------------
Outcome golden() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng = substream(seed, "accept-golden");
    const int d = 4;
    const Matrix q = random_normal(rng, 4, d), k = random_normal(rng, 4, d), v = random_normal(rng, 4, d);
    const Hierarchy h = build_point_hierarchy(testing::four_point(), q, k, v, 2, 2);
    if (h.level_count() != 2) return {false, "expected two levels"};
    const Matrix z = gha_forward(h).z;
    // Level-0 weights inside each pair; level-1 weights between pair means
    // (pair-sum queries and keys carry a factor 1/4).
    const double s = 1.0 / std::sqrt(double(d));
    for (int i = 0; i < 4; ++i) {
      const int pair = i / 2, mate = i ^ 1;
      const double w_self = std::exp(q.row(i).dot(k.row(i)) * s), w_mate = std::exp(q.row(i).dot(k.row(mate)) * s);
      Eigen::RowVectorXd y = w_self * v.row(i) + w_mate * v.row(mate);
      double den = w_self + w_mate;
      for (int b = 0; b < 2; ++b) {
        const double w = std::exp((q.row(2 * pair) + q.row(2 * pair + 1)).dot(k.row(2 * b) + k.row(2 * b + 1)) * s /
                                  4.0);
        y += w * 0.5 * (v.row(2 * b) + v.row(2 * b + 1));
        den += w;
      }
      worst = std::max(worst, (z.row(i) - y / den).cwiseAbs().maxCoeff());
    }
  }
  const double t = std::chrono::duration<double>(Clock::now() - t0).count();
  return {worst < 1e-12 && t < 1.0,
          "max abs error " + sci(worst) + " (< 1e-12), " + secs(t) + " (< 1 s), 10 seeds"};
}

// 2 -------------------------------------------------------------------------
Outcome oracle() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  const int dims[3] = {2, 4, 8};
  for (int t = 0; t < 50; ++t) {
    Rng rng = substream(2, "accept-oracle", t);
    const int n = 2 + (t * 7) % 31, d = dims[t % 3];
    const auto mode = static_cast<EmbeddingMode>((t / 3) % 3);
    const AttentionInputs in{random_normal(rng, n, d), random_normal(rng, n, d), random_normal(rng, n, d),
                             random_cloud(rng, n), embedding(mode, d, rng)};
    const Hierarchy h = build_point_hierarchy(in.positions, in.q, in.k, in.v, n + t % 4);
    worst = std::max(worst, row_rel(gha_forward(h, in.embedding).z, testing::reference_dense(in)));
  }
  const double t = std::chrono::duration<double>(Clock::now() - t0).count();
  return {worst < 1e-12 && t < 10.0, "50 instances, N in [2, 32], max row-relative error " + sci(worst) +
                                         " (< 1e-12), " + secs(t) + " (< 10 s)"};
}

// 3 -------------------------------------------------------------------------
Outcome truncation() {
  double worst_local = 0.0, worst_mask = 0.0;
  for (int t = 0; t < 50; ++t) {
    Rng rng = substream(3, "accept-trunc", t);
    const int n = 10 + t * 3, d = 2 * (1 + t % 4), k = 2 + t % 8;
    const auto mode = static_cast<EmbeddingMode>(t % 3);
    const AttentionInputs in{random_normal(rng, n, d), random_normal(rng, n, d), random_normal(rng, n, d),
                             random_cloud(rng, n), embedding(mode, d, rng)};
    const Hierarchy full = build_point_hierarchy(in.positions, in.q, in.k, in.v, k);
    const Matrix z = gha_forward(truncated(full, 1), in.embedding).z;
    const NeighborhoodTopology& topo = full.level(0).topology;
    worst_local = std::max(worst_local, row_rel(z, local_attention(in, topo).z));
    const Matrix masked = testing::reference_attention(in, [&](Eigen::Index i, Eigen::Index j) {
      for (Index m : topo.neighbors(static_cast<std::size_t>(i)))
        if (m == j) return true;
      return false;
    });
    worst_mask = std::max(worst_mask, row_rel(z, masked));
  }
  return {worst_local < 1e-12 && worst_mask < 1e-12,
          "50 instances, vs local_attention " + sci(worst_local) + ", vs masked softmax oracle " + sci(worst_mask) +
              " (< 1e-12)"};
}

// 4 -------------------------------------------------------------------------
double finite_difference(const Hierarchy& h, const EmbeddingConfig& emb, const Matrix& dz) {
  const AttentionGradients g = gha_backward(h, emb, gha_forward(h, emb), dz);
  const LevelFeatures& f = h.features[0];
  const double step = 1e-5;
  double worst = 0.0;
  for (int which = 0; which < 3; ++which) {
    const Matrix& a = which == 0 ? g.dq : which == 1 ? g.dk : g.dv;
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      for (Eigen::Index j = 0; j < a.cols(); ++j) {
        double loss[2];
        for (int side = 0; side < 2; ++side) {
          Matrix m[3] = {f.q, f.k, f.v};
          m[which](i, j) += side == 0 ? step : -step;
          loss[side] = gha_forward(attach_features(h.structure, m[0], m[1], m[2]), emb).z.cwiseProduct(dz).sum();
        }
        const double num = (loss[0] - loss[1]) / (2 * step);
        worst = std::max(worst, std::abs(a(i, j) - num) / std::max({std::abs(a(i, j)), std::abs(num), 1e-3}));
      }
  }
  return worst;
}

Outcome gradients() {
  double worst = 0.0;
  int voxel = 0, point = 0;
  for (int t = 0; t < 20; ++t) {
    Rng rng = substream(4, "accept-grad", t);
    const int d = 2 + 2 * (t % 4);
    const auto mode = (t / 2) % 2 ? EmbeddingMode::kRelative : EmbeddingMode::kNone;
    Hierarchy h;
    if (t % 2 == 0) {
      const int n = 8 + t % 9;
      h = build_point_hierarchy(random_cloud(rng, n), random_normal(rng, n, d), random_normal(rng, n, d),
                                random_normal(rng, n, d), 3);
      ++point;
    } else {
      const SparseVoxelGrid g = voxelize(PointCloud(random_cloud(rng, 16, 6.0)), 1.0);
      const Eigen::Index n = g.size();
      h = build_voxel_hierarchy(g, random_normal(rng, n, d), random_normal(rng, n, d), random_normal(rng, n, d));
      ++voxel;
    }
    const EmbeddingConfig emb = embedding(mode, d, rng);
    worst = std::max(worst, finite_difference(h, emb, random_normal(rng, h.token_count(), d)));
  }
  return {worst < 1e-5, std::to_string(point) + " point + " + std::to_string(voxel) +
                            " voxel instances, max relative error " + sci(worst) + " (< 1e-5)"};
}

// 5 -------------------------------------------------------------------------
Outcome scaling() {
  const auto t0 = Clock::now();
  ScalingSetup s;
  s.k = 8;
  s.r = 2;
  s.include_dense = true;
  const ScalingReport r = scaling_sweep({1000, 2000, 4000, 8000, 16000, 32000}, s);
  const double t = std::chrono::duration<double>(Clock::now() - t0).count();
  bool bound = true, dense_exact = true;
  int dense_rows = 0;
  double worst_ratio = 0.0;
  for (const ScalingRow& row : r.rows) {
    if (row.mechanism == Mechanism::kDense) {
      ++dense_rows;
      dense_exact = dense_exact && row.weight_count == static_cast<std::uint64_t>(row.n) * row.n;
    } else {
      bound = bound && row.weight_count <= 16 * static_cast<std::uint64_t>(row.n);
      worst_ratio = std::max(worst_ratio, double(row.weight_count) / row.n);
    }
  }
  std::ostringstream d;
  d << "max weight_count/N " << worst_ratio << " (<= 16), R^2 " << r.r_squared << " (> 0.999), " << dense_rows
    << " dense rows = N^2: " << (dense_exact ? "yes" : "no") << ", " << secs(t) << " (< 60 s)";
  return {bound && r.r_squared > 0.999 && dense_exact && dense_rows == 6 && t < 60.0, d.str()};
}

// 6, 7 ----------------------------------------------------------------------
AnalysisProblem seeded_problem(std::uint64_t seed, Eigen::Index n) {
  Rng rng = substream(seed, "cloud-gen");
  AnalysisSetup s;
  s.k = 8;
  s.r = 2;
  s.seed = seed;
  return make_problem(PointCloud(random_cloud(rng, n)), s);
}

Outcome global_connectivity() {
  int gha_hits = 0, gha_query_hits = 0;
  bool local_zero = true;
  double min_mass = 1e300;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const AnalysisProblem p = seeded_problem(seed, 512);
    const DistanceHistogram g = attention_histogram(p, Mechanism::kGha);
    const DistanceHistogram l = attention_histogram(p, Mechanism::kLocal);
    gha_hits += g.mass_beyond_radius_bins() > 0.0;
    gha_query_hits += g.mass_beyond_neighborhood > 0.0;
    min_mass = std::min(min_mass, g.mass_beyond_radius_bins());
    local_zero = local_zero && l.mass_beyond_radius_bins() == 0.0 && l.mass_beyond_neighborhood == 0.0;
  }
  return {gha_hits >= 99 && local_zero,
          "GHA mass beyond kNN radius in " + std::to_string(gha_hits) + "/100 seeds (>= 99; min mass " +
              sci(min_mass) + ", per-query radius " + std::to_string(gha_query_hits) + "/100), local mass zero: " +
              (local_zero ? "all seeds" : "NO")};
}

Outcome locality() {
  int above = 0;
  double lo = 1e300, hi = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const AnalysisProblem p = seeded_problem(1000 + seed, 256);
    const double r = locality_ratio(effective_attention_matrix(p.hierarchy, p.embedding), p.positions);
    above += r > 1.0;
    lo = std::min(lo, r);
    hi = std::max(hi, r);
  }
  return {above >= 95, "ratio > 1 in " + std::to_string(above) + "/100 seeds (>= 95), range [" + sci(lo) + ", " +
                           sci(hi) + "]"};
}

// 8 -------------------------------------------------------------------------
Outcome probability_rows() {
  double worst_sum = 0.0, min_w = 1e300;
  int point = 0, voxel = 0;
  for (int t = 0; t < 100; ++t) {
    Rng rng = substream(8, "accept-prob", t);
    AnalysisSetup s;
    s.seed = t;
    s.k = 3 + t % 10;
    s.dim = 2 * (1 + t % 4);
    s.embedding_mode = static_cast<EmbeddingMode>((t / 2) % 3);
    if (t % 2 == 1) {
      s.flavor = Flavor::kVoxel;
      s.voxel_size = 0.08 + 0.02 * (t % 5);
      ++voxel;
    } else {
      ++point;
    }
    const AnalysisProblem p = make_problem(PointCloud(random_cloud(rng, 100 + 7 * t)), s);
    const Matrix w = effective_attention_matrix(p.hierarchy, p.embedding);
    min_w = std::min(min_w, w.minCoeff());
    worst_sum = std::max(worst_sum, (w.rowwise().sum().array() - 1.0).abs().maxCoeff());
  }
  return {min_w >= 0.0 && worst_sum < 1e-10, std::to_string(point) + " point + " + std::to_string(voxel) +
                                                 " voxel instances, min weight " + sci(min_w) +
                                                 ", max |row sum - 1| " + sci(worst_sum) + " (< 1e-10)"};
}

// 9 -------------------------------------------------------------------------
Outcome invariance() {
  bool perm_exact = true;
  double worst_translation = 0.0;
  for (int t = 0; t < 20; ++t) {
    Rng rng = substream(9, "accept-inv", t);
    const int n = 100 + 37 * t, d = 4;
    const auto mode = static_cast<EmbeddingMode>(t % 3);
    const Positions p = random_cloud(rng, n);
    const Matrix q = random_normal(rng, n, d), k = random_normal(rng, n, d), v = random_normal(rng, n, d);
    const EmbeddingConfig emb = embedding(mode, d, rng);
    const Matrix z = gha_forward(build_point_hierarchy(p, q, k, v, 8), emb).z;
    const auto perm = testing::random_permutation(rng, n);
    using testing::permute_rows;
    const Matrix zp = gha_forward(build_point_hierarchy(permute_rows(p, perm), permute_rows(q, perm),
                                                        permute_rows(k, perm), permute_rows(v, perm), 8),
                                  emb)
                          .z;
    perm_exact = perm_exact && permute_rows(z, perm) == zp;
    if (mode != EmbeddingMode::kAbsolute) {
      Positions moved = p;
      moved.rowwise() += Eigen::RowVector3d(10.0 * rng() / double(rng.max()) - 5.0, 7.25, -3.5);
      const Matrix zt = gha_forward(build_point_hierarchy(moved, q, k, v, 8), emb).z;
      worst_translation = std::max(worst_translation, (zt - z).cwiseAbs().maxCoeff());
    }
  }

  // Voxel flavor: integer voxel shifts move every coordinate exactly; shifts
  // by a multiple of 2^levels also keep the whole pooling pyramid aligned.
  bool voxel_ok = true;
  double worst_voxel_rel = 0.0;
  for (int t = 0; t < 10; ++t) {
    Rng rng = substream(9, "accept-voxel", t);
    const double size = 0.125;
    const Positions p = (random_cloud(rng, 400, 2.0) * 1048576.0).array().floor() / 1048576.0;
    const Matrix f = random_normal(rng, 400, 4);
    const SparseVoxelGrid a = voxelize(PointCloud(p, f), size);
    for (const VoxelCoord shift : {VoxelCoord{3, -5, 7}, VoxelCoord{256, -512, 1024}}) {
      Positions moved = p;
      moved.rowwise() += Eigen::RowVector3d(shift[0] * size, shift[1] * size, shift[2] * size);
      const SparseVoxelGrid b = voxelize(PointCloud(moved, f), size);
      bool same = a.size() == b.size() && a.cell_count == b.cell_count && a.point_to_voxel == b.point_to_voxel &&
                  a.cell_features == b.cell_features;
      for (Eigen::Index i = 0; same && i < a.size(); ++i)
        for (int c = 0; c < 3; ++c) same = same && b.occupied[i][c] == a.occupied[i][c] + shift[c];
      voxel_ok = voxel_ok && same;
      if (shift[0] != 256 || !same) continue;
      const Hierarchy ha = build_voxel_hierarchy(a, a.cell_features, a.cell_features, a.cell_features);
      const Hierarchy hb = build_voxel_hierarchy(b, b.cell_features, b.cell_features, b.cell_features);
      bool pyramid = ha.level_count() == hb.level_count();
      for (std::size_t l = 0; pyramid && l < ha.level_count(); ++l) {
        pyramid = ha.level(l).size() == hb.level(l).size() && ha.level(l).parent_of == hb.level(l).parent_of;
        for (Eigen::Index i = 0; pyramid && i < ha.level(l).size(); ++i)
          for (int c = 0; c < 3; ++c) {
            const std::int64_t da = hb.level(l).voxel_coords[i][c] - ha.level(l).voxel_coords[i][c];
            pyramid = pyramid && da == hb.level(l).voxel_coords[0][c] - ha.level(l).voxel_coords[0][c];
          }
      }
      voxel_ok = voxel_ok && pyramid && gha_forward(ha).z == gha_forward(hb).z;
      Rng erng = substream(9, "accept-voxel-emb", t);
      const EmbeddingConfig emb = embedding(EmbeddingMode::kRelative, 4, erng);
      worst_voxel_rel = std::max(worst_voxel_rel, (gha_forward(ha, emb).z - gha_forward(hb, emb).z).cwiseAbs().maxCoeff());
    }
  }
  return {perm_exact && worst_translation < 1e-10 && voxel_ok && worst_voxel_rel < 1e-10,
          std::string("permutation exact: ") + (perm_exact ? "yes" : "NO") + " (20 clouds, all modes), translation " +
              sci(worst_translation) + " (< 1e-10), voxel shifts exact: " + (voxel_ok ? "yes" : "NO") +
              " (relative-embedding drift " + sci(worst_voxel_rel) + ")"};
}

// 10 ------------------------------------------------------------------------
Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / ("gha_accept_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  Rng rng = substream(10, "accept-det");
  write_point_cloud_binary(dir / "cloud.gpc", PointCloud(random_cloud(rng, 3000), random_normal(rng, 3000, 8)));
  auto slurp = [](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  };
  bool ok = true;
  int runs = 0;
  for (const std::string flavor : {"--flavor point", "--flavor voxel --voxel-size 0.05"}) {
    std::vector<std::string> outputs;
    for (const std::string threads : {"1", "1", "8", "8"}) {
      const fs::path out = dir / ("out" + std::to_string(runs++) + ".gpc");
      const std::string cmd = std::string(GHA_CLI_PATH) + " run --input " + (dir / "cloud.gpc").string() +
                              " --output " + out.string() + " " + flavor +
                              " --layers 2 --heads 2 --seed 5 --threads " + threads + " > /dev/null 2>&1";
      const int rc = std::system(cmd.c_str());
      ok = ok && WIFEXITED(rc) && WEXITSTATUS(rc) == 0;
      outputs.push_back(slurp(out));
    }
    for (const std::string& o : outputs) ok = ok && !o.empty() && o == outputs.front();
  }
  fs::remove_all(dir);
  return {ok, std::to_string(runs) + " cmd_run invocations (point + voxel, --threads 1 and 8): " +
                  (ok ? "byte-identical outputs" : "OUTPUTS DIFFER or a run failed")};
}

// 11 ------------------------------------------------------------------------
Outcome block_identity() {
  double worst = 0.0;
  int cases = 0;
  Rng rng = substream(11, "accept-block");
  const Positions p = random_cloud(rng, 300);
  const Matrix x = random_normal(rng, 300, 16);
  for (int layers : {1, 6})
    for (int heads : {1, 4})
      for (bool drop : {false, true})
        for (Mechanism m : {Mechanism::kGha, Mechanism::kLocal}) {
          BlockConfig cfg;
          cfg.n_layers = layers;
          cfg.model_dim = 16;
          cfg.ffn_dim = 32;
          cfg.n_heads = heads;
          cfg.dropout_enabled = drop;
          const Matrix y = block_forward(x, p, zero_params(cfg), 8, 2, {m});
          worst = std::max(worst, (y - x).cwiseAbs().maxCoeff());
          ++cases;
        }
  return {worst <= 1e-15, std::to_string(cases) + " configurations (L in {1, 6}), max |y - x| " + sci(worst)};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {"golden four-point example", golden},
      {"oracle equivalence", oracle},
      {"truncation equivalence", truncation},
      {"gradient check", gradients},
      {"linear complexity", scaling},
      {"global connectivity", global_connectivity},
      {"locality bias", locality},
      {"probability rows", probability_rows},
      {"equivariance / invariance", invariance},
      {"determinism", determinism},
      {"block identity", block_identity},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("[%s] %2zu %-26s %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
