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

#include <filesystem>
#include <iosfwd>

namespace gha {

// Text: one point per line, `x y z [f1 ... fd]`, '#' starts a comment.
// Binary: "GPC1", u32 N, u32 d, then N*(3+d) little-endian f32, row-major.

PointCloud parse_point_cloud_text(std::istream& in);
PointCloud parse_point_cloud_binary(std::istream& in);

/// Sniffs the magic and dispatches to the binary or text parser.
PointCloud read_point_cloud(const std::filesystem::path& path);

void write_point_cloud_text(std::ostream& out, const PointCloud& cloud);
void write_point_cloud_binary(std::ostream& out, const PointCloud& cloud);
void write_point_cloud_binary(const std::filesystem::path& path, const PointCloud& cloud);

}  // namespace gha
