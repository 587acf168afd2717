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

#include "gha/common.hpp"

#include <optional>
#include <vector>

namespace gha {

/// N positions in meters, optionally with one feature row per point.
class PointCloud {
 public:
  explicit PointCloud(Positions positions, std::optional<Matrix> features = std::nullopt);

  const Positions& positions() const { return positions_; }
  const std::optional<Matrix>& features() const { return features_; }
  Eigen::Index size() const { return positions_.rows(); }
  Eigen::Index feature_dim() const { return features_ ? features_->cols() : 0; }

 private:
  Positions positions_;
  std::optional<Matrix> features_;
};

/// Occupied voxels in lexicographic (x, y, z) order.
struct SparseVoxelGrid {
  double voxel_size = 1.0;
  std::vector<VoxelCoord> occupied;
  Matrix cell_features;   // one row per occupied voxel; zero columns if the cloud had none
  Positions cell_centroid;
  std::vector<Index> cell_count;
  std::vector<Index> point_to_voxel;  // source point -> row in `occupied`

  Eigen::Index size() const { return static_cast<Eigen::Index>(occupied.size()); }
};

enum class TopologyKind { kKnn, kKernelWindow };

/// T_i for every token of one level. Self is always a member.
struct NeighborhoodTopology {
  TopologyKind kind = TopologyKind::kKnn;
  int k = 0;  // knn only
  Csr lists;

  std::size_t size() const { return lists.rows(); }
  std::span<const Index> neighbors(std::size_t i) const { return lists.row(i); }
  std::size_t total_entries() const { return lists.indices.size(); }
};

/// Static kd-tree over a borrowed position matrix. Queries order results by
/// (squared distance, index) so ties resolve to the lower index, matching a
/// brute-force sort bit for bit.
class KdTree {
 public:
  explicit KdTree(const Positions& points, int leaf_size = 12);

  /// The min(k, N) nearest points to `query`, nearest first.
  std::vector<Index> nearest(const Vec3& query, int k) const;
  Index nearest_one(const Vec3& query) const;

 private:
  struct Node {
    int axis = -1;  // -1 marks a leaf
    double split = 0.0;
    std::int32_t begin = 0, end = 0;
    std::int32_t left = -1, right = -1;
  };
  std::int32_t build(std::int32_t begin, std::int32_t end, int leaf_size);

  const Positions& points_;
  std::vector<Index> order_;
  std::vector<Node> nodes_;
};

/// Squared Euclidean distance, evaluated in one fixed order everywhere.
inline double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a.x() - b.x(), dy = a.y() - b.y(), dz = a.z() - b.z();
  return dx * dx + dy * dy + dz * dz;
}

NeighborhoodTopology knn(const Positions& positions, int k);
inline NeighborhoodTopology knn(const PointCloud& cloud, int k) { return knn(cloud.positions(), k); }

/// Greedy max-min subsampling. The first pick is the point farthest from the
/// centroid; ties go to the lexicographically smallest coordinates, then the
/// lowest index. Returned indices are ascending.
std::vector<Index> farthest_point_sample(const Positions& positions, Eigen::Index m);
inline std::vector<Index> farthest_point_sample(const PointCloud& cloud, Eigen::Index m) {
  return farthest_point_sample(cloud.positions(), m);
}

SparseVoxelGrid voxelize(const PointCloud& cloud, double voxel_size);

/// 3x3x3 window over sorted voxel coordinates (binary search per offset).
NeighborhoodTopology kernel_window_topology(std::span<const VoxelCoord> occupied);
inline NeighborhoodTopology kernel_window_topology(const SparseVoxelGrid& grid) {
  return kernel_window_topology(grid.occupied);
}

}  // namespace gha
