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

#include "gha/hierarchy.hpp"
#include "gha/rng.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>

namespace gha {

/// gamma(p) = [cos(2 pi b_1.p), sin(2 pi b_1.p), ..., cos(2 pi b_m.p), sin(2 pi b_m.p)].
class FourierEmbedding {
 public:
  explicit FourierEmbedding(Matrix frequencies);

  /// b_i ~ N(0, 1), drawn once.
  static FourierEmbedding sample(Rng& rng, int pair_count);

  const Matrix& frequencies() const { return frequencies_; }
  int pair_count() const { return static_cast<int>(frequencies_.rows()); }
  int output_dim() const { return 2 * pair_count(); }

  Vector embed(const Vec3& p) const;
  void embed_into(const Vec3& p, std::span<double> out) const;

 private:
  Matrix frequencies_;  // m x 3
};

enum class EmbeddingMode { kNone, kAbsolute, kRelative };

std::string to_string(EmbeddingMode m);
EmbeddingMode parse_embedding_mode(const std::string& s);

/// How positions enter the scores:
///   absolute:  (q_i + g(p_i)) . (k_j + g(p_j))
///   relative:  q_i . (k_j + g(p_i - p_j))
struct EmbeddingConfig {
  EmbeddingMode mode = EmbeddingMode::kNone;
  std::optional<FourierEmbedding> fourier;

  static EmbeddingConfig none() { return {}; }
};

struct AttentionInputs {
  Matrix q, k, v;
  Positions positions;
  EmbeddingConfig embedding;
};

/// z_i = Y_i / D_i. Normalizers are stored relative to the row's largest
/// score: the exact D_i equals normalizers[i] * exp(row_max[i]).
struct AttentionResult {
  Matrix z;
  Vector normalizers;
  Vector row_max;
  std::uint64_t weight_count = 0;
  std::vector<std::uint64_t> per_level_weight_count;
};

/// Softmax over all N keys (rows are streamed; no N x N buffer).
AttentionResult dense_attention(const AttentionInputs& inputs);

/// Softmax restricted to j in T_i.
AttentionResult local_attention(const AttentionInputs& inputs, const NeighborhoodTopology& topology);

/// Top-down hierarchical recursion: every level contributes its local
/// attention, coarse sums are copied to children, and all exponentials are
/// accumulated against a per-token running maximum.
AttentionResult gha_forward(const Hierarchy& hierarchy, const EmbeddingConfig& embedding = {});

struct AttentionGradients {
  Matrix dq, dk, dv;
};

/// Exact gradients of gha_forward with respect to level-0 Q, K and V, for a
/// fixed structure. `forward` must be gha_forward(hierarchy, embedding).
AttentionGradients gha_backward(const Hierarchy& hierarchy, const EmbeddingConfig& embedding,
                                const AttentionResult& forward, const Matrix& dz);

/// Throws ConfigError if the embedding cannot be combined with width d.
void validate_embedding(const EmbeddingConfig& embedding, Eigen::Index d);

}  // namespace gha
