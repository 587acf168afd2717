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

#include "gha/io.hpp"

#include "gha/wire.hpp"

#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

namespace gha {

namespace {

constexpr char kCloudMagic[4] = {'G', 'P', 'C', '1'};

}  // namespace

PointCloud parse_point_cloud_text(std::istream& in) {
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0, width = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::vector<double> row;
    std::string tok;
    while (fields >> tok) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw FormatError("line " + std::to_string(line_no) + ": not a number: '" + tok + "'");
      }
    }
    if (row.empty()) continue;
    if (row.size() < 3)
      throw FormatError("line " + std::to_string(line_no) + ": expected at least 3 columns");
    if (rows.empty()) {
      width = row.size();
    } else if (row.size() != width) {
      throw FormatError("line " + std::to_string(line_no) + ": expected " + std::to_string(width) +
                        " columns, found " + std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw FormatError("point cloud file contains no points");

  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto d = static_cast<Eigen::Index>(width - 3);
  Positions pos(n, 3);
  Matrix feat(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) pos(i, c) = rows[i][c];
    for (Eigen::Index c = 0; c < d; ++c) feat(i, c) = rows[i][3 + c];
  }
  if (d == 0) return PointCloud(std::move(pos));
  return PointCloud(std::move(pos), std::move(feat));
}

PointCloud parse_point_cloud_binary(std::istream& in) {
  wire::Reader r(in);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kCloudMagic, 4) != 0) throw FormatError("bad point cloud magic");
  const std::uint32_t n = r.u32();
  const std::uint32_t d = r.u32();
  if (n == 0) throw FormatError("binary point cloud has zero points");
  Positions pos(n, 3);
  Matrix feat(n, d);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) pos(i, c) = r.f32();
    for (std::uint32_t c = 0; c < d; ++c) feat(i, c) = r.f32();
  }
  if (d == 0) return PointCloud(std::move(pos));
  return PointCloud(std::move(pos), std::move(feat));
}

PointCloud read_point_cloud(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  char head[4] = {};
  in.read(head, 4);
  const bool binary = in.gcount() == 4 && std::memcmp(head, kCloudMagic, 4) == 0;
  in.clear();
  in.seekg(0);
  return binary ? parse_point_cloud_binary(in) : parse_point_cloud_text(in);
}

void write_point_cloud_text(std::ostream& out, const PointCloud& cloud) {
  out << std::setprecision(17);
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    out << cloud.positions()(i, 0) << ' ' << cloud.positions()(i, 1) << ' ' << cloud.positions()(i, 2);
    for (Eigen::Index c = 0; c < cloud.feature_dim(); ++c) out << ' ' << (*cloud.features())(i, c);
    out << '\n';
  }
}

void write_point_cloud_binary(std::ostream& out, const PointCloud& cloud) {
  wire::Writer w(out);
  w.bytes(kCloudMagic, 4);
  w.u32(static_cast<std::uint32_t>(cloud.size()));
  w.u32(static_cast<std::uint32_t>(cloud.feature_dim()));
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    for (int c = 0; c < 3; ++c) w.f32(static_cast<float>(cloud.positions()(i, c)));
    for (Eigen::Index c = 0; c < cloud.feature_dim(); ++c)
      w.f32(static_cast<float>((*cloud.features())(i, c)));
  }
}

void write_point_cloud_binary(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  write_point_cloud_binary(out, cloud);
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace gha
