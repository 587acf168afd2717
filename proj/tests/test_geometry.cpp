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

#include "gha/geometry.hpp"
#include "gha/rng.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <limits>

namespace gha {
namespace {

using testing::as_vector;
using testing::brute_knn;

Positions line_of(int n) {
  Positions p = Positions::Zero(n, 3);
  for (int i = 0; i < n; ++i) p(i, 0) = i;
  return p;
}

TEST(Knn, FourPointPairs) {
  const NeighborhoodTopology t = knn(testing::four_point(), 2);
  EXPECT_EQ(as_vector(t.neighbors(0)), (std::vector<Index>{0, 1}));
  EXPECT_EQ(as_vector(t.neighbors(1)), (std::vector<Index>{1, 0}));
  EXPECT_EQ(as_vector(t.neighbors(2)), (std::vector<Index>{2, 3}));
  EXPECT_EQ(as_vector(t.neighbors(3)), (std::vector<Index>{3, 2}));
}

TEST(Knn, SelfOnly) {
  Rng rng = substream(1, "test");
  const NeighborhoodTopology t = knn(random_cloud(rng, 20), 1);
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(as_vector(t.neighbors(i)), (std::vector<Index>{Index(i)}));
}

TEST(Knn, CollinearTieGoesToLowerIndex) {
  const NeighborhoodTopology t = knn(line_of(5), 3);
  EXPECT_EQ(as_vector(t.neighbors(0)), (std::vector<Index>{0, 1, 2}));
  EXPECT_EQ(as_vector(t.neighbors(2)), (std::vector<Index>{2, 1, 3}));
}

TEST(Knn, EmptyCloudRejected) {
  EXPECT_THROW(knn(Positions(0, 3), 3), InvalidInput);
  EXPECT_THROW(PointCloud(Positions(0, 3)), InvalidInput);
}

TEST(Knn, KLargerThanCloud) {
  const NeighborhoodTopology t = knn(line_of(3), 10);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(t.neighbors(i).size(), 3u);
}

TEST(Knn, MatchesBruteForce) {
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng = substream(2, "knn", trial);
    const int n = 5 + trial * 37;
    Positions p = random_cloud(rng, n);
    if (trial % 4 == 0) p = (p * 4.0).array().round() / 4.0;  // lattice: many exact ties
    const int k = 1 + trial % 9;
    const NeighborhoodTopology t = knn(p, k);
    const auto ref = brute_knn(p, k);
    for (int i = 0; i < n; ++i) ASSERT_EQ(as_vector(t.neighbors(i)), ref[i]) << "trial " << trial << " i " << i;
  }
}

TEST(Knn, DuplicatePoints) {
  Positions p(3, 3);
  p << 0, 0, 0, 0, 0, 0, 0, 0, 0;
  const NeighborhoodTopology t = knn(p, 2);
  EXPECT_EQ(as_vector(t.neighbors(0)), (std::vector<Index>{0, 1}));
  EXPECT_EQ(as_vector(t.neighbors(2)), (std::vector<Index>{2, 0}));
}

TEST(KnnProperty, PermutationAndTranslation) {
  for (int trial = 0; trial < 10; ++trial) {
    Rng rng = substream(3, "perm", trial);
    const int n = 50 + trial;
    const Positions p = random_cloud(rng, n);
    const auto perm = testing::random_permutation(rng, n);
    const Positions pp = testing::permute_rows(p, perm);
    const NeighborhoodTopology a = knn(p, 6), b = knn(pp, 6);
    for (int i = 0; i < n; ++i) {
      std::vector<Index> mapped;
      for (Index j : a.neighbors(i)) mapped.push_back(perm[j]);
      EXPECT_EQ(mapped, as_vector(b.neighbors(perm[i])));
    }
    // Translation by a power of two keeps coordinate differences exact.
    Positions shifted = p;
    shifted.rowwise() += Eigen::RowVector3d(8.0, -16.0, 4.0);
    EXPECT_EQ(knn(shifted, 6).lists, a.lists);
  }
}

TEST(KnnProperty, SelfFirstAndNonTrivial) {
  Rng rng = substream(4, "t");
  const Positions p = random_cloud(rng, 100);
  const NeighborhoodTopology t = knn(p, 5);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto row = t.neighbors(i);
    ASSERT_EQ(row.size(), 5u);
    EXPECT_EQ(row[0], Index(i));
    for (Index j : row) EXPECT_TRUE(j >= 0 && j < 100);
    EXPECT_TRUE(std::any_of(row.begin(), row.end(), [&](Index j) { return j != Index(i); }));
  }
}

TEST(KdTree, NearestOneMatchesScan) {
  Rng rng = substream(5, "t");
  const Positions p = random_cloud(rng, 300);
  const KdTree tree(p);
  const Positions queries = random_cloud(rng, 50, 1.5);
  for (Eigen::Index qi = 0; qi < queries.rows(); ++qi) {
    const Vec3 q = queries.row(qi).transpose();
    Index best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < p.rows(); ++j) {
      const double d = squared_distance(q, p.row(j).transpose());
      if (d < bd) bd = d, best = static_cast<Index>(j);
    }
    EXPECT_EQ(tree.nearest_one(q), best);
  }
}

// Brute-force reference for the greedy max-min rule with the stated ties.
std::vector<Index> reference_fps(const Positions& p, Eigen::Index m) {
  const Eigen::Index n = p.rows();
  auto before = [&](Eigen::Index a, Eigen::Index b) {  // "a wins a tie against b"
    for (int c = 0; c < 3; ++c)
      if (p(a, c) != p(b, c)) return p(a, c) < p(b, c);
    return a < b;
  };
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[i] = static_cast<Index>(i);
  std::sort(order.begin(), order.end(), [&](Index a, Index b) { return before(a, b); });
  Eigen::RowVector3d c = Eigen::RowVector3d::Zero();
  for (Index i : order) c += p.row(i);
  c /= static_cast<double>(n);
  std::vector<Index> chosen;
  std::vector<double> mind(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) mind[i] = (p.row(i) - c).squaredNorm();
  while (static_cast<Eigen::Index>(chosen.size()) < m) {
    Eigen::Index best = -1;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (std::find(chosen.begin(), chosen.end(), i) != chosen.end()) continue;
      if (best < 0 || mind[i] > mind[best] || (mind[i] == mind[best] && before(i, best))) best = i;
    }
    chosen.push_back(static_cast<Index>(best));
    for (Eigen::Index i = 0; i < n; ++i) mind[i] = std::min(mind[i], (p.row(i) - p.row(best)).squaredNorm());
    if (chosen.size() == 1)
      for (Eigen::Index i = 0; i < n; ++i) mind[i] = (p.row(i) - p.row(best)).squaredNorm();
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

TEST(Fps, FullSample) {
  Rng rng = substream(6, "t");
  const auto s = farthest_point_sample(random_cloud(rng, 17), 17);
  for (Index i = 0; i < 17; ++i) EXPECT_EQ(s[i], i);
}

TEST(Fps, UnitSquareDiagonal) {
  Positions p(4, 3);
  p << 0, 0, 0, 1, 0, 0, 0, 1, 0, 1, 1, 0;
  // Every diagonal pair has the maximal min-distance sqrt(2); the tie rule
  // starts at (0,0), whose farthest point is (1,1).
  EXPECT_EQ(farthest_point_sample(p, 2), (std::vector<Index>{0, 3}));
  EXPECT_EQ(reference_fps(p, 2), (std::vector<Index>{0, 3}));
}

TEST(Fps, FourPointOnePerPair) {
  const auto s = farthest_point_sample(testing::four_point(), 2);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_TRUE(s[0] <= 1 && s[1] >= 2);
}

TEST(Fps, Errors) {
  EXPECT_THROW(farthest_point_sample(line_of(3), 4), InvalidInput);
  EXPECT_THROW(farthest_point_sample(line_of(3), 0), InvalidInput);
}

TEST(FpsProperty, MatchesReferenceAndIsStrictlyIncreasing) {
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng = substream(7, "fps", trial);
    const int n = 3 + trial * 11;
    Positions p = random_cloud(rng, n);
    if (trial % 3 == 0) p = (p * 3.0).array().round();
    const Eigen::Index m = 1 + trial % n;
    const auto s = farthest_point_sample(p, m);
    ASSERT_EQ(static_cast<Eigen::Index>(s.size()), m);
    for (std::size_t i = 1; i < s.size(); ++i) EXPECT_LT(s[i - 1], s[i]);
    EXPECT_EQ(s, reference_fps(p, m)) << "trial " << trial;
  }
}

TEST(FpsProperty, PermutationInvariant) {
  for (int trial = 0; trial < 10; ++trial) {
    Rng rng = substream(8, "fps", trial);
    const int n = 40 + trial;
    const Positions p = random_cloud(rng, n);
    const auto perm = testing::random_permutation(rng, n);
    std::vector<Index> mapped;
    for (Index i : farthest_point_sample(p, n / 3)) mapped.push_back(perm[i]);
    std::sort(mapped.begin(), mapped.end());
    EXPECT_EQ(mapped, farthest_point_sample(testing::permute_rows(p, perm), n / 3));
  }
}

TEST(Voxelize, TwoPointsOneCell) {
  Positions p(2, 3);
  p << 0.1, 0.1, 0.1, 0.2, 0.2, 0.2;
  const SparseVoxelGrid g = voxelize(PointCloud(p), 1.0);
  ASSERT_EQ(g.size(), 1);
  EXPECT_EQ(g.occupied[0], (VoxelCoord{0, 0, 0}));
  EXPECT_EQ(g.cell_count[0], 2);
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(g.cell_centroid(0, c), 0.15, 1e-15);
}

TEST(Voxelize, SinglePointKeepsFeature) {
  Positions p(1, 3);
  p << -3.7, 2.2, 9.1;
  Matrix f(1, 2);
  f << 0.25, -7.5;
  const SparseVoxelGrid g = voxelize(PointCloud(p, f), 0.3);
  ASSERT_EQ(g.size(), 1);
  EXPECT_EQ(g.cell_features, f);
  EXPECT_EQ(g.occupied[0], (VoxelCoord{-13, 7, 30}));
}

TEST(Voxelize, UniformCubeEightCells) {
  Rng rng = substream(9, "t");
  const Positions p = random_cloud(rng, 1000);
  const SparseVoxelGrid g = voxelize(PointCloud(p), 0.5);
  ASSERT_EQ(g.size(), 8);
  // Direct counting oracle.
  std::array<int, 8> counts{};
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    counts[(p(i, 0) >= 0.5) * 4 + (p(i, 1) >= 0.5) * 2 + (p(i, 2) >= 0.5)]++;
  int total = 0;
  for (Eigen::Index v = 0; v < 8; ++v) {
    const VoxelCoord& c = g.occupied[v];
    EXPECT_EQ(g.cell_count[v], counts[c[0] * 4 + c[1] * 2 + c[2]]);
    total += g.cell_count[v];
  }
  EXPECT_EQ(total, 1000);
}

TEST(Voxelize, RejectsBadSize) {
  EXPECT_THROW(voxelize(PointCloud(line_of(2)), 0.0), InvalidInput);
  EXPECT_THROW(voxelize(PointCloud(line_of(2)), -1.0), InvalidInput);
}

TEST(VoxelizeProperty, SortedUniqueAndFeatureMeans) {
  Rng rng = substream(10, "t");
  const Positions p = random_cloud(rng, 500, 3.0);
  const Matrix f = random_normal(rng, 500, 3);
  const SparseVoxelGrid g = voxelize(PointCloud(p, f), 0.7);
  for (Eigen::Index v = 1; v < g.size(); ++v) EXPECT_LT(g.occupied[v - 1], g.occupied[v]);
  Matrix sum = Matrix::Zero(g.size(), 3);
  std::vector<int> cnt(static_cast<std::size_t>(g.size()));
  for (Eigen::Index i = 0; i < 500; ++i) {
    const Index v = g.point_to_voxel[i];
    for (int c = 0; c < 3; ++c) EXPECT_EQ(g.occupied[v][c], static_cast<std::int64_t>(std::floor(p(i, c) / 0.7)));
    sum.row(v) += f.row(i);
    cnt[v]++;
  }
  for (Eigen::Index v = 0; v < g.size(); ++v) {
    EXPECT_EQ(cnt[v], g.cell_count[v]);
    EXPECT_GE(g.cell_count[v], 1);
    EXPECT_LT((sum.row(v) / cnt[v] - g.cell_features.row(v)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(VoxelizeProperty, IntegerShiftInvariance) {
  Rng rng = substream(11, "t");
  // Points on a dyadic lattice so the shifted coordinates are exact.
  const Positions p = (random_cloud(rng, 300, 4.0) * 64.0).array().floor() / 64.0;
  const double size = 0.5;
  const SparseVoxelGrid a = voxelize(PointCloud(p), size);
  Positions shifted = p;
  shifted.rowwise() += Eigen::RowVector3d(3 * size, -5 * size, 7 * size);
  const SparseVoxelGrid b = voxelize(PointCloud(shifted), size);
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(a.cell_count, b.cell_count);
  EXPECT_EQ(a.point_to_voxel, b.point_to_voxel);
  for (Eigen::Index v = 0; v < a.size(); ++v)
    EXPECT_EQ(b.occupied[v], (VoxelCoord{a.occupied[v][0] + 3, a.occupied[v][1] - 5, a.occupied[v][2] + 7}));
}

TEST(KernelWindow, Examples) {
  std::vector<VoxelCoord> one{{0, 0, 0}};
  EXPECT_EQ(as_vector(kernel_window_topology(one).neighbors(0)), (std::vector<Index>{0}));
  std::vector<VoxelCoord> apart{{0, 0, 0}, {5, 5, 5}};
  const NeighborhoodTopology t = kernel_window_topology(apart);
  EXPECT_EQ(as_vector(t.neighbors(0)), (std::vector<Index>{0}));
  EXPECT_EQ(as_vector(t.neighbors(1)), (std::vector<Index>{1}));
}

TEST(KernelWindow, FullBlock) {
  std::vector<VoxelCoord> block;
  for (int x = 0; x < 3; ++x)
    for (int y = 0; y < 3; ++y)
      for (int z = 0; z < 3; ++z) block.push_back({x, y, z});
  const NeighborhoodTopology t = kernel_window_topology(block);
  EXPECT_EQ(t.neighbors(13).size(), 27u);  // (1,1,1)
  EXPECT_EQ(t.neighbors(0).size(), 8u);    // (0,0,0)
}

TEST(KernelWindowProperty, ChebyshevOracle) {
  Rng rng = substream(12, "t");
  const SparseVoxelGrid g = voxelize(PointCloud(random_cloud(rng, 400, 2.0)), 0.25);
  const NeighborhoodTopology t = kernel_window_topology(g);
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    std::vector<Index> ref;
    for (Eigen::Index j = 0; j < g.size(); ++j) {
      bool near = true;
      for (int c = 0; c < 3; ++c) near = near && std::abs(g.occupied[i][c] - g.occupied[j][c]) <= 1;
      if (near) ref.push_back(static_cast<Index>(j));
    }
    EXPECT_EQ(testing::sorted(as_vector(t.neighbors(i))), ref);
    EXPECT_LE(t.neighbors(i).size(), 27u);
  }
}

TEST(PointCloud, RejectsNonFiniteAndMismatchedFeatures) {
  Positions p = line_of(2);
  p(1, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(PointCloud{p}, InvalidInput);
  EXPECT_THROW(PointCloud(line_of(2), Matrix::Zero(3, 1)), InvalidInput);
}

}  // namespace
}  // namespace gha
