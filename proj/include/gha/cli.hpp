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

#include "gha/analysis.hpp"
#include "gha/selftest.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace gha::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailed = 1;
inline constexpr int kExitUsage = 2;

struct RunConfig {
  std::string input;
  std::string output;
  std::string params;  // optional GHAB file replacing seeded init
  Flavor flavor = Flavor::kPoint;
  int k = 8;
  int r = 2;
  double voxel_size = 0.0;
  int model_dim = 0;  // 0: feature width of the input, or 8 without features
  int ffn_dim = 0;    // 0: 2 * model_dim
  int n_layers = 1;
  int n_heads = 1;
  EmbeddingMode embedding_mode = EmbeddingMode::kRelative;
  bool embed_every_layer = true;
  std::uint64_t seed = 0;
  Mechanism mechanism = Mechanism::kGha;
  int threads = 0;
  std::size_t probe_cap = kDefaultProbeCap;

  // compare / hist / heatmap without an input file
  Eigen::Index points = 256;
  int dim = 8;
  std::size_t bins = 64;
  Index query = 0;

  // bench
  std::vector<Eigen::Index> sizes{1000, 2000, 4000};
  bool include_dense = false;

  void validate() const;
};

/// Validated input cloud, or a seeded uniform cloud of `points` points.
PointCloud load_or_generate(const RunConfig& config);

AnalysisSetup analysis_setup(const RunConfig& config);

// Each command returns an exit code: 0 success, 1 invariant failure,
// 2 I/O or usage error.
int cmd_run(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_compare(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_bench(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_hist(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_heatmap(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_selftest(std::ostream& out, const GhaKernel& kernel = {});

/// compare's CSV + invariant gate on an already-built problem.
int compare_problem(const AnalysisProblem& problem, const std::string& output, std::ostream& out,
                    std::ostream& err);

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace gha::cli
