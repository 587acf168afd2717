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

#include "gha/hierarchy.hpp"

#include "gha/parallel.hpp"

#include <algorithm>
#include <iomanip>
#include <ostream>

namespace gha {

namespace {

Csr invert_parent_map(const std::vector<Index>& parent_of, std::size_t n_parents) {
  std::vector<std::vector<Index>> groups(n_parents);
  for (std::size_t i = 0; i < parent_of.size(); ++i) groups[parent_of[i]].push_back(static_cast<Index>(i));
  Csr out;
  for (const auto& g : groups) out.push_row(g);
  return out;
}

Positions pool_positions(const Positions& rows, const Csr& pooled_from) {
  const auto n = static_cast<Eigen::Index>(pooled_from.rows());
  Positions out = Positions::Zero(n, 3);
  for (Eigen::Index s = 0; s < n; ++s) {
    const auto src = pooled_from.row(static_cast<std::size_t>(s));
    for (Index j : src) out.row(s) += rows.row(j);
    out.row(s) /= static_cast<double>(src.size());
  }
  return out;
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

bool within_single_window(const std::vector<VoxelCoord>& coords) {
  for (int c = 0; c < 3; ++c) {
    auto [lo, hi] = std::minmax_element(coords.begin(), coords.end(),
                                        [c](const VoxelCoord& a, const VoxelCoord& b) { return a[c] < b[c]; });
    if ((*hi)[c] - (*lo)[c] > 1) return false;
  }
  return true;
}

}  // namespace

Matrix pool_rows(const Matrix& rows, const Csr& pooled_from) {
  const auto n = static_cast<Eigen::Index>(pooled_from.rows());
  Matrix out = Matrix::Zero(n, rows.cols());
  if (rows.cols() == 0) return out;
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t s) {
    const auto src = pooled_from.row(s);
    auto dst = out.row(static_cast<Eigen::Index>(s));
    for (Index j : src) dst += rows.row(j);
    dst /= static_cast<double>(src.size());
  });
  return out;
}

CoarsenStep coarsen_point(const LevelStructure& level, int r, int k) {
  const Eigen::Index n = level.size();
  if (n < 2) throw CoarsenError("coarsen_point: level has fewer than 2 tokens");
  if (r < 2) throw ConfigError("coarsen_point: ratio must be at least 2");
  if (level.topology.kind != TopologyKind::kKnn || level.topology.size() != static_cast<std::size_t>(n))
    throw CoarsenError("coarsen_point: level does not carry a knn topology");

  const Eigen::Index m = (n + r - 1) / r;
  const std::vector<Index> selected = farthest_point_sample(level.positions, m);

  // Pool in lexicographic position order, not neighbor order: two selected
  // tokens with the same neighborhood then produce bit-identical coarse
  // tokens, so index tie-breaks among such duplicates cannot leak the input
  // labeling into the result.
  auto lex_less = [&](Index a, Index b) {
    for (int c = 0; c < 3; ++c)
      if (level.positions(a, c) != level.positions(b, c)) return level.positions(a, c) < level.positions(b, c);
    return a < b;
  };
  CoarsenStep step;
  std::vector<Index> group;
  for (Index s : selected) {
    const auto nb = level.topology.neighbors(static_cast<std::size_t>(s));
    group.assign(nb.begin(), nb.end());
    std::sort(group.begin(), group.end(), lex_less);
    step.next.pooled_from.push_row(group);
  }
  step.next.positions = pool_positions(level.positions, step.next.pooled_from);
  step.next.topology = knn(step.next.positions, k);

  // Nearest selected token measured at this level's positions.
  Positions anchors(m, 3);
  for (Eigen::Index s = 0; s < m; ++s) anchors.row(s) = level.positions.row(selected[s]);
  const KdTree tree(anchors);
  std::vector<Index> slot_of(static_cast<std::size_t>(n), -1);
  for (Eigen::Index s = 0; s < m; ++s) slot_of[selected[s]] = static_cast<Index>(s);
  step.parent_of.resize(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    step.parent_of[i] = slot_of[i] >= 0
                            ? slot_of[i]
                            : tree.nearest_one(level.positions.row(static_cast<Eigen::Index>(i)).transpose());
  });
  step.children_of = invert_parent_map(step.parent_of, static_cast<std::size_t>(m));
  return step;
}

CoarsenStep coarsen_voxel(const LevelStructure& level) {
  const std::size_t n = level.voxel_coords.size();
  if (n == 0 || n != static_cast<std::size_t>(level.size()))
    throw CoarsenError("coarsen_voxel: level does not carry voxel coordinates");
  if (!std::is_sorted(level.voxel_coords.begin(), level.voxel_coords.end()))
    throw CoarsenError("coarsen_voxel: voxel coordinates are not sorted");

  std::vector<VoxelCoord> pooled(n);
  for (std::int64_t stride = 2;; stride *= 2) {
    for (std::size_t i = 0; i < n; ++i) {
      for (int c = 0; c < 3; ++c) pooled[i][c] = floor_div(level.voxel_coords[i][c], stride);
    }
    std::vector<VoxelCoord> unique = pooled;
    std::sort(unique.begin(), unique.end());
    unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
    if (unique.size() < n || within_single_window(unique) || stride > (std::int64_t{1} << 62) / 2) {
      CoarsenStep step;
      step.next.voxel_coords = std::move(unique);
      step.parent_of.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        auto it = std::lower_bound(step.next.voxel_coords.begin(), step.next.voxel_coords.end(), pooled[i]);
        step.parent_of[i] = static_cast<Index>(it - step.next.voxel_coords.begin());
      }
      step.children_of = invert_parent_map(step.parent_of, step.next.voxel_coords.size());
      step.next.pooled_from = step.children_of;
      step.next.positions = pool_positions(level.positions, step.next.pooled_from);
      step.next.topology = kernel_window_topology(step.next.voxel_coords);
      return step;
    }
  }
}

Matrix interpolate(const Matrix& values, std::size_t from_level, const HierarchyStructure& structure) {
  if (from_level == 0 || from_level >= structure.levels.size())
    throw InvalidInput("interpolate: from_level must name a coarse level");
  const LevelStructure& fine = structure.levels[from_level - 1];
  if (values.rows() != structure.levels[from_level].size())
    throw InvalidInput("interpolate: row count does not match the coarse level");
  Matrix out(fine.size(), values.cols());
  for (Eigen::Index i = 0; i < fine.size(); ++i) out.row(i) = values.row(fine.parent_of[i]);
  return out;
}

bool satisfies_stopping_rule(const LevelStructure& level, Flavor flavor, int k) {
  if (level.size() <= 1) return true;
  if (flavor == Flavor::kPoint) return level.size() <= k;
  return within_single_window(level.voxel_coords);
}

std::shared_ptr<const HierarchyStructure> build_point_structure(const Positions& positions, int k, int r) {
  if (positions.rows() < 1) throw InvalidInput("build_hierarchy: no tokens");
  if (k < 1) throw ConfigError("build_hierarchy: k must be positive");
  if (r < 2) throw ConfigError("build_hierarchy: coarsening ratio must be at least 2");
  if (!positions.allFinite()) throw InvalidInput("build_hierarchy: non-finite positions");

  auto out = std::make_shared<HierarchyStructure>();
  out->flavor = Flavor::kPoint;
  out->neighborhood_k = k;
  out->coarsen_ratio = r;
  LevelStructure base;
  base.positions = positions;
  base.topology = knn(positions, k);
  out->levels.push_back(std::move(base));
  while (!satisfies_stopping_rule(out->levels.back(), Flavor::kPoint, k)) {
    CoarsenStep step = coarsen_point(out->levels.back(), r, k);
    out->levels.back().parent_of = std::move(step.parent_of);
    out->levels.back().children_of = std::move(step.children_of);
    out->levels.push_back(std::move(step.next));
  }
  return out;
}

std::shared_ptr<const HierarchyStructure> build_voxel_structure(std::vector<VoxelCoord> coords,
                                                                Positions positions) {
  if (coords.empty()) throw InvalidInput("build_hierarchy: no voxels");
  if (static_cast<Eigen::Index>(coords.size()) != positions.rows())
    throw InvalidInput("build_hierarchy: voxel coordinate and position counts differ");
  if (!std::is_sorted(coords.begin(), coords.end()) ||
      std::adjacent_find(coords.begin(), coords.end()) != coords.end())
    throw InvalidInput("build_hierarchy: voxel coordinates must be strictly sorted");

  auto out = std::make_shared<HierarchyStructure>();
  out->flavor = Flavor::kVoxel;
  out->neighborhood_k = 27;
  out->coarsen_ratio = 2;
  LevelStructure base;
  base.topology = kernel_window_topology(coords);
  base.voxel_coords = std::move(coords);
  base.positions = std::move(positions);
  out->levels.push_back(std::move(base));
  while (!satisfies_stopping_rule(out->levels.back(), Flavor::kVoxel, 27)) {
    CoarsenStep step = coarsen_voxel(out->levels.back());
    out->levels.back().parent_of = std::move(step.parent_of);
    out->levels.back().children_of = std::move(step.children_of);
    out->levels.push_back(std::move(step.next));
  }
  return out;
}

Hierarchy attach_features(std::shared_ptr<const HierarchyStructure> structure, const Matrix& q,
                          const Matrix& k, const Matrix& v) {
  const Eigen::Index n = structure->token_count();
  if (q.rows() != n || k.rows() != n || v.rows() != n)
    throw InvalidInput("attach_features: Q/K/V row counts must equal the token count");
  if (q.cols() != k.cols()) throw InvalidInput("attach_features: Q and K widths differ");
  Hierarchy h;
  h.features.reserve(structure->levels.size());
  h.features.push_back(LevelFeatures{q, k, v});
  for (std::size_t l = 1; l < structure->levels.size(); ++l) {
    const Csr& pool = structure->levels[l].pooled_from;
    const LevelFeatures& prev = h.features.back();
    h.features.push_back(LevelFeatures{pool_rows(prev.q, pool), pool_rows(prev.k, pool), pool_rows(prev.v, pool)});
  }
  h.structure = std::move(structure);
  return h;
}

Hierarchy with_values(const Hierarchy& hierarchy, const Matrix& v) {
  if (v.rows() != hierarchy.token_count()) throw InvalidInput("with_values: row count mismatch");
  Hierarchy h;
  h.structure = hierarchy.structure;
  h.features.reserve(hierarchy.features.size());
  for (std::size_t l = 0; l < hierarchy.features.size(); ++l) {
    Matrix pooled = l == 0 ? v : pool_rows(h.features.back().v, hierarchy.level(l).pooled_from);
    h.features.push_back(LevelFeatures{hierarchy.features[l].q, hierarchy.features[l].k, std::move(pooled)});
  }
  return h;
}

Hierarchy build_point_hierarchy(const Positions& positions, const Matrix& q, const Matrix& k,
                                const Matrix& v, int neighborhood_k, int r) {
  return attach_features(build_point_structure(positions, neighborhood_k, r), q, k, v);
}

Hierarchy build_voxel_hierarchy(const SparseVoxelGrid& grid, const Matrix& q, const Matrix& k,
                                const Matrix& v) {
  return attach_features(build_voxel_structure(grid), q, k, v);
}

Hierarchy truncated(const Hierarchy& hierarchy, std::size_t levels) {
  if (levels == 0 || levels > hierarchy.level_count())
    throw InvalidInput("truncated: level count out of range");
  auto s = std::make_shared<HierarchyStructure>(*hierarchy.structure);
  s->levels.resize(levels);
  s->levels.back().parent_of.clear();
  s->levels.back().children_of = Csr{};
  Hierarchy h;
  h.structure = std::move(s);
  h.features.assign(hierarchy.features.begin(), hierarchy.features.begin() + static_cast<std::ptrdiff_t>(levels));
  return h;
}

void dump_hierarchy(std::ostream& out, const HierarchyStructure& structure) {
  out << "# gha hierarchy v1\n"
      << "flavor " << to_string(structure.flavor) << '\n'
      << "neighborhood_k " << structure.neighborhood_k << '\n'
      << "coarsen_ratio " << structure.coarsen_ratio << '\n'
      << "levels " << structure.levels.size() << '\n';
  out << std::setprecision(17);
  for (std::size_t h = 0; h < structure.levels.size(); ++h) {
    const LevelStructure& l = structure.levels[h];
    out << "level " << h << " tokens " << l.size() << '\n';
    for (Eigen::Index i = 0; i < l.size(); ++i) {
      out << i << ' ' << l.positions(i, 0) << ' ' << l.positions(i, 1) << ' ' << l.positions(i, 2);
      if (!l.voxel_coords.empty())
        out << ' ' << l.voxel_coords[i][0] << ' ' << l.voxel_coords[i][1] << ' ' << l.voxel_coords[i][2];
      out << ' ' << (l.is_top() ? -1 : l.parent_of[i]) << '\n';
    }
  }
}

}  // namespace gha
