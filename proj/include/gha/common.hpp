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

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gha {

// Token-major storage: one row per point / voxel / coarse token.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Positions = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Vec3 = Eigen::Vector3d;

using Index = std::int32_t;
using VoxelCoord = std::array<std::int64_t, 3>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class CoarsenError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class CapacityError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class UnsupportedVersion : public FormatError {
 public:
  using FormatError::FormatError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Compressed adjacency lists: row i owns indices[offsets[i], offsets[i+1]).
struct Csr {
  std::vector<std::int64_t> offsets{0};
  std::vector<Index> indices;

  std::size_t rows() const { return offsets.size() - 1; }
  std::span<const Index> row(std::size_t i) const {
    return {indices.data() + offsets[i], static_cast<std::size_t>(offsets[i + 1] - offsets[i])};
  }
  std::size_t row_size(std::size_t i) const {
    return static_cast<std::size_t>(offsets[i + 1] - offsets[i]);
  }
  void push_row(std::span<const Index> r) {
    indices.insert(indices.end(), r.begin(), r.end());
    offsets.push_back(static_cast<std::int64_t>(indices.size()));
  }
  bool operator==(const Csr&) const = default;
};

enum class Flavor { kPoint, kVoxel };

std::string to_string(Flavor f);
Flavor parse_flavor(const std::string& s);

}  // namespace gha
