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

#include "gha/geometry.hpp"

#include <iosfwd>
#include <memory>
#include <optional>

namespace gha {

/// Feature-independent part of one hierarchy level.
struct LevelStructure {
  Positions positions;
  std::vector<VoxelCoord> voxel_coords;  // voxel flavor only
  NeighborhoodTopology topology;

  // Link to the next coarser level; empty on the top level.
  std::vector<Index> parent_of;  // n_h entries
  Csr children_of;               // n_{h+1} rows, partitions [0, n_h)

  // Rows of the previous level averaged into each token here; empty on level 0.
  Csr pooled_from;

  Eigen::Index size() const { return positions.rows(); }
  bool is_top() const { return parent_of.empty(); }
};

/// Levels h = 0..H. Topology, sampling and parent maps depend only on
/// positions, so one structure is shared by every layer and head of a block.
struct HierarchyStructure {
  Flavor flavor = Flavor::kPoint;
  int neighborhood_k = 0;
  int coarsen_ratio = 2;
  std::vector<LevelStructure> levels;

  int depth() const { return static_cast<int>(levels.size()) - 1; }
  Eigen::Index token_count() const { return levels.front().size(); }
};

struct LevelFeatures {
  Matrix q, k, v;
};

/// A structure plus Q~, K~, V~ for every level.
struct Hierarchy {
  std::shared_ptr<const HierarchyStructure> structure;
  std::vector<LevelFeatures> features;

  std::size_t level_count() const { return features.size(); }
  int depth() const { return static_cast<int>(features.size()) - 1; }
  const LevelStructure& level(std::size_t h) const { return structure->levels[h]; }
  Flavor flavor() const { return structure->flavor; }
  Eigen::Index token_count() const { return structure->token_count(); }
};

/// One coarsening step: the parent map for `level` and the next level.
struct CoarsenStep {
  std::vector<Index> parent_of;
  Csr children_of;
  LevelStructure next;
};

/// Neighborhood mean over knn(k) then farthest-point subsample to
/// ceil(n_h / r) tokens; parent = nearest selected token (ties -> lower index).
CoarsenStep coarsen_point(const LevelStructure& level, int r, int k);

/// Stride-2 average pooling of voxel coordinates. If no two voxels merge,
/// the stride keeps doubling until some do or the pooled level fits in one
/// 3x3x3 window.
CoarsenStep coarsen_voxel(const LevelStructure& level);

/// Mean of `rows` over each pooling group.
Matrix pool_rows(const Matrix& rows, const Csr& pooled_from);

/// Row i of the result is values.row(parent_of[i]) for level from_level - 1.
Matrix interpolate(const Matrix& values, std::size_t from_level, const HierarchyStructure& structure);
inline Matrix interpolate(const Matrix& values, std::size_t from_level, const Hierarchy& hierarchy) {
  return interpolate(values, from_level, *hierarchy.structure);
}

/// True when every token's neighborhood spans the whole level.
bool satisfies_stopping_rule(const LevelStructure& level, Flavor flavor, int k);

std::shared_ptr<const HierarchyStructure> build_point_structure(const Positions& positions, int k, int r = 2);

/// Voxel tokens: lexicographically sorted integer coordinates and one
/// position per voxel (usually the cell centroid).
std::shared_ptr<const HierarchyStructure> build_voxel_structure(std::vector<VoxelCoord> coords,
                                                                Positions positions);
inline std::shared_ptr<const HierarchyStructure> build_voxel_structure(const SparseVoxelGrid& grid) {
  return build_voxel_structure(grid.occupied, grid.cell_centroid);
}

/// Level-0 features are taken unchanged; coarser levels are pooled.
Hierarchy attach_features(std::shared_ptr<const HierarchyStructure> structure, const Matrix& q,
                          const Matrix& k, const Matrix& v);

/// Replaces only V~ (one-hot probing reuses Q~ and K~).
Hierarchy with_values(const Hierarchy& hierarchy, const Matrix& v);

Hierarchy build_point_hierarchy(const Positions& positions, const Matrix& q, const Matrix& k,
                                const Matrix& v, int neighborhood_k, int r = 2);
Hierarchy build_voxel_hierarchy(const SparseVoxelGrid& grid, const Matrix& q, const Matrix& k,
                                const Matrix& v);

/// First `levels` levels only; the new top level has no parent map.
Hierarchy truncated(const Hierarchy& hierarchy, std::size_t levels);

/// Text dump, one section per level:
///   level <h> tokens <n_h>
///   <i> <x> <y> <z> [<vx> <vy> <vz>] <parent or -1>
void dump_hierarchy(std::ostream& out, const HierarchyStructure& structure);

}  // namespace gha
