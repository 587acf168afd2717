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

// Verification routines shared by `gha selftest` and the acceptance suite.
// Each check compares the kernels against an independent evaluation.

#include "gha/attention.hpp"

#include <functional>
#include <iosfwd>
#include <string>

namespace gha {

using GhaKernel = std::function<AttentionResult(const Hierarchy&, const EmbeddingConfig&)>;

/// Two mutually-nearest pairs, (P0, P1) and (P2, P3).
Positions four_point_layout();

/// Closed-form output for the four-point, two-level case (k = 2, r = 2, no
/// positional terms): every query sees its own pair at level 0 and both pair
/// means at level 1.
Matrix four_point_closed_form(const Matrix& q, const Matrix& k, const Matrix& v);

struct CheckResult {
  std::string name;
  bool passed = false;
  double metric = 0.0;     // worst observed error
  double tolerance = 0.0;
  std::string detail;
};

/// max |gha - closed form|, tolerance 1e-12.
CheckResult check_four_point_golden(const GhaKernel& kernel, std::uint64_t seed = 7);

/// `instances` random problems with k >= N against dense attention, cycling
/// through every embedding mode; row-relative L2 error < 1e-12.
CheckResult check_oracle_equivalence(const GhaKernel& kernel, int instances = 50, std::uint64_t seed = 11);

/// Single-level GHA against local attention on the same topology, < 1e-12.
CheckResult check_truncation_equivalence(const GhaKernel& kernel, int instances = 50, std::uint64_t seed = 13);

/// Analytic backward against central differences of L = sum(dZ * Z).
struct GradientCheck {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};
GradientCheck finite_difference_check(const Hierarchy& hierarchy, const EmbeddingConfig& embedding,
                                      const Matrix& dz, double step = 1e-5);

/// `instances` seeded problems (N <= 16, d <= 8, both flavors), rel error < 1e-5.
CheckResult check_gradients(int instances = 20, std::uint64_t seed = 17);

/// Runs every check, prints a pass/fail table, returns 0 iff all pass.
int run_selftest(std::ostream& out, const GhaKernel& kernel = {});

/// Row-relative L2 error max_i |a_i - b_i| / max(|b_i|, tiny).
double max_row_relative_error(const Matrix& a, const Matrix& b);

}  // namespace gha
