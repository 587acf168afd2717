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

#include "gha/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>

namespace gha {

std::string to_string(Flavor f) { return f == Flavor::kPoint ? "point" : "voxel"; }

Flavor parse_flavor(const std::string& s) {
  if (s == "point") return Flavor::kPoint;
  if (s == "voxel") return Flavor::kVoxel;
  throw ConfigError("unknown flavor '" + s + "' (expected point or voxel)");
}

PointCloud::PointCloud(Positions positions, std::optional<Matrix> features)
    : positions_(std::move(positions)), features_(std::move(features)) {
  if (positions_.rows() < 1) throw InvalidInput("point cloud must contain at least one point");
  if (!positions_.allFinite()) throw InvalidInput("point cloud has non-finite coordinates");
  if (features_) {
    if (features_->rows() != positions_.rows())
      throw InvalidInput("feature row count does not match point count");
    if (!features_->allFinite()) throw InvalidInput("point cloud has non-finite features");
  }
}

// ---------------------------------------------------------------------------
// KdTree

namespace {

struct Candidate {
  double d2;
  Index index;
  bool operator<(const Candidate& o) const {
    return d2 < o.d2 || (d2 == o.d2 && index < o.index);
  }
};

}  // namespace

KdTree::KdTree(const Positions& points, int leaf_size) : points_(points) {
  order_.resize(static_cast<std::size_t>(points.rows()));
  std::iota(order_.begin(), order_.end(), 0);
  nodes_.reserve(2 * order_.size() / std::max(leaf_size, 1) + 1);
  if (!order_.empty()) build(0, static_cast<std::int32_t>(order_.size()), std::max(leaf_size, 1));
}

std::int32_t KdTree::build(std::int32_t begin, std::int32_t end, int leaf_size) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(Node{-1, 0.0, begin, end, -1, -1});
  if (end - begin <= leaf_size) return id;

  Vec3 lo = points_.row(order_[begin]).transpose(), hi = lo;
  for (std::int32_t i = begin + 1; i < end; ++i) {
    const Vec3 p = points_.row(order_[i]).transpose();
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  if (hi[axis] == lo[axis]) return id;  // all coincident

  const std::int32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](Index a, Index b) {
                     const double pa = points_(a, axis), pb = points_(b, axis);
                     return pa < pb || (pa == pb && a < b);
                   });
  const double split = points_(order_[mid], axis);
  const std::int32_t left = build(begin, mid, leaf_size);
  const std::int32_t right = build(mid, end, leaf_size);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

std::vector<Index> KdTree::nearest(const Vec3& query, int k) const {
  const auto want = static_cast<std::size_t>(std::min<Eigen::Index>(k, points_.rows()));
  std::priority_queue<Candidate> heap;  // worst candidate on top
  if (want == 0 || nodes_.empty()) return {};

  // Left subtree holds coordinates <= split, right holds >= split.
  auto visit = [&](auto&& self, std::int32_t id) -> void {
    const Node& node = nodes_[id];
    if (node.axis < 0) {
      for (std::int32_t i = node.begin; i < node.end; ++i) {
        const Index idx = order_[i];
        const Candidate c{squared_distance(query, points_.row(idx).transpose()), idx};
        if (heap.size() < want) {
          heap.push(c);
        } else if (c < heap.top()) {
          heap.pop();
          heap.push(c);
        }
      }
      return;
    }
    const double delta = query[node.axis] - node.split;
    const std::int32_t near = delta <= 0 ? node.left : node.right;
    const std::int32_t far = delta <= 0 ? node.right : node.left;
    self(self, near);
    if (heap.size() < want || delta * delta <= heap.top().d2) self(self, far);
  };
  visit(visit, 0);

  std::vector<Index> out(heap.size());
  for (auto i = out.size(); i-- > 0;) {
    out[i] = heap.top().index;
    heap.pop();
  }
  return out;
}

Index KdTree::nearest_one(const Vec3& query) const { return nearest(query, 1).front(); }

// ---------------------------------------------------------------------------

NeighborhoodTopology knn(const Positions& positions, int k) {
  if (positions.rows() < 1) throw InvalidInput("knn: empty point set");
  if (k < 1) throw InvalidInput("knn: k must be positive");
  const auto n = static_cast<std::size_t>(positions.rows());
  const KdTree tree(positions);

  std::vector<std::vector<Index>> rows(n);
  parallel_for(n, [&](std::size_t i) {
    auto found = tree.nearest(positions.row(static_cast<Eigen::Index>(i)).transpose(), k);
    // Self leads the list; an exact duplicate with a lower index may have
    // displaced it, in which case it replaces the farthest candidate.
    const auto self = static_cast<Index>(i);
    auto it = std::find(found.begin(), found.end(), self);
    if (it != found.end()) {
      found.erase(it);
    } else {
      found.pop_back();
    }
    found.insert(found.begin(), self);
    rows[i] = std::move(found);
  });

  NeighborhoodTopology topo;
  topo.kind = TopologyKind::kKnn;
  topo.k = k;
  topo.lists.indices.reserve(n * static_cast<std::size_t>(std::min<Eigen::Index>(k, positions.rows())));
  for (const auto& r : rows) topo.lists.push_row(r);
  return topo;
}

namespace {

bool lex_less(const Positions& p, Index a, Index b) {
  for (int c = 0; c < 3; ++c) {
    if (p(a, c) != p(b, c)) return p(a, c) < p(b, c);
  }
  return a < b;
}

// Strictly better pick: larger distance, then smaller coordinates, then lower index.
bool better_pick(const Positions& p, const std::vector<double>& score, Index a, Index b) {
  if (score[a] != score[b]) return score[a] > score[b];
  return lex_less(p, a, b);
}

}  // namespace

std::vector<Index> farthest_point_sample(const Positions& positions, Eigen::Index m) {
  const Eigen::Index n = positions.rows();
  if (n < 1) throw InvalidInput("farthest_point_sample: empty point set");
  if (m < 1 || m > n) {
    throw InvalidInput("farthest_point_sample: sample count " + std::to_string(m) +
                       " outside [1, " + std::to_string(n) + "]");
  }
  const auto un = static_cast<std::size_t>(n);

  // Centroid summed in lexicographic point order so it does not depend on
  // the input permutation.
  std::vector<Index> lex(un);
  std::iota(lex.begin(), lex.end(), 0);
  std::sort(lex.begin(), lex.end(), [&](Index a, Index b) { return lex_less(positions, a, b); });
  Vec3 centroid = Vec3::Zero();
  for (Index i : lex) centroid += positions.row(i).transpose();
  centroid /= static_cast<double>(n);

  std::vector<double> score(un);
  for (std::size_t i = 0; i < un; ++i)
    score[i] = squared_distance(positions.row(static_cast<Eigen::Index>(i)).transpose(), centroid);

  auto argbest = [&]() {
    Index best = 0;
    for (Index i = 1; i < static_cast<Index>(n); ++i) {
      if (better_pick(positions, score, i, best)) best = i;
    }
    return best;
  };

  std::vector<Index> picked;
  picked.reserve(static_cast<std::size_t>(m));
  std::vector<char> taken(un, 0);
  Index current = argbest();
  picked.push_back(current);
  taken[current] = 1;

  if (m > 1) {
    std::fill(score.begin(), score.end(), std::numeric_limits<double>::infinity());
  }
  while (static_cast<Eigen::Index>(picked.size()) < m) {
    const Vec3 c = positions.row(current).transpose();
    for (std::size_t i = 0; i < un; ++i) {
      if (taken[i]) {
        score[i] = -1.0;
        continue;
      }
      const double d2 = squared_distance(positions.row(static_cast<Eigen::Index>(i)).transpose(), c);
      if (d2 < score[i]) score[i] = d2;
    }
    current = argbest();
    picked.push_back(current);
    taken[current] = 1;
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

SparseVoxelGrid voxelize(const PointCloud& cloud, double voxel_size) {
  if (!(voxel_size > 0.0) || !std::isfinite(voxel_size))
    throw InvalidInput("voxelize: voxel_size must be positive and finite");
  const Eigen::Index n = cloud.size();
  const Positions& p = cloud.positions();

  std::vector<VoxelCoord> coord(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c)
      coord[i][c] = static_cast<std::int64_t>(std::floor(p(i, c) / voxel_size));
  }
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  // Within a cell, points are ordered by coordinates so the accumulated means
  // do not depend on the input order (exact duplicates fall back to index).
  std::sort(order.begin(), order.end(), [&](Index a, Index b) {
    if (coord[a] != coord[b]) return coord[a] < coord[b];
    for (int c = 0; c < 3; ++c)
      if (p(a, c) != p(b, c)) return p(a, c) < p(b, c);
    return a < b;
  });

  SparseVoxelGrid grid;
  grid.voxel_size = voxel_size;
  grid.point_to_voxel.resize(static_cast<std::size_t>(n));
  for (Index i : order) {
    if (grid.occupied.empty() || grid.occupied.back() != coord[i]) {
      grid.occupied.push_back(coord[i]);
      grid.cell_count.push_back(0);
    }
    grid.point_to_voxel[i] = static_cast<Index>(grid.occupied.size() - 1);
    ++grid.cell_count.back();
  }

  const auto nv = static_cast<Eigen::Index>(grid.occupied.size());
  const Eigen::Index d = cloud.feature_dim();
  grid.cell_centroid = Positions::Zero(nv, 3);
  grid.cell_features = Matrix::Zero(nv, d);
  for (Index i : order) {
    const Index v = grid.point_to_voxel[i];
    grid.cell_centroid.row(v) += p.row(i);
    if (d > 0) grid.cell_features.row(v) += cloud.features()->row(i);
  }
  for (Eigen::Index v = 0; v < nv; ++v) {
    const double inv = 1.0 / grid.cell_count[v];
    grid.cell_centroid.row(v) *= inv;
    if (d > 0) grid.cell_features.row(v) *= inv;
  }
  return grid;
}

NeighborhoodTopology kernel_window_topology(std::span<const VoxelCoord> occupied) {
  if (occupied.empty()) throw InvalidInput("kernel_window_topology: empty grid");
  const std::size_t n = occupied.size();
  std::vector<std::vector<Index>> rows(n);
  parallel_for(n, [&](std::size_t i) {
    auto& row = rows[i];
    row.reserve(27);
    for (int dx = -1; dx <= 1; ++dx) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dz = -1; dz <= 1; ++dz) {
          const VoxelCoord probe{occupied[i][0] + dx, occupied[i][1] + dy, occupied[i][2] + dz};
          auto it = std::lower_bound(occupied.begin(), occupied.end(), probe);
          if (it != occupied.end() && *it == probe)
            row.push_back(static_cast<Index>(it - occupied.begin()));
        }
      }
    }
  });
  NeighborhoodTopology topo;
  topo.kind = TopologyKind::kKernelWindow;
  for (const auto& r : rows) topo.lists.push_row(r);
  return topo;
}

}  // namespace gha
