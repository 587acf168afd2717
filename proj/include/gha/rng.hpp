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

#include <cstdint>
#include <random>
#include <string_view>

namespace gha {

using Rng = std::mt19937_64;

/// Independent generator for a named purpose ("params", "cloud-gen",
/// "dropout", ...) derived from one master seed.
Rng substream(std::uint64_t seed, std::string_view name, std::uint64_t index = 0);

Matrix random_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols);
Matrix random_uniform(Rng& rng, Eigen::Index rows, Eigen::Index cols, double lo, double hi);
Positions random_cloud(Rng& rng, Eigen::Index n, double extent = 1.0);

}  // namespace gha
