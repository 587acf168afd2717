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

#include "gha/attention.hpp"

#include <filesystem>
#include <iosfwd>

namespace gha {

struct BlockConfig {
  int n_layers = 1;
  int model_dim = 8;
  int ffn_dim = 16;
  int n_heads = 1;
  double attn_dropout = 0.1;
  double ffn_dropout = 0.3;
  bool dropout_enabled = false;
  std::uint64_t seed = 0;
  EmbeddingMode embedding_mode = EmbeddingMode::kRelative;
  bool embed_every_layer = true;  // false: positions enter only the first layer

  int head_dim() const { return model_dim / n_heads; }
  void validate() const;
  bool operator==(const BlockConfig&) const = default;
};

/// Row-vector convention: y = x * W + b, so W is (fan_in x fan_out).
struct LayerParams {
  Matrix w_q, w_k, w_v, w_o;
  Vector b_q, b_k, b_v, b_o;
  Vector ln1_gain, ln1_shift;
  Matrix w_ff1, w_ff2;
  Vector b_ff1, b_ff2;
  Vector ln2_gain, ln2_shift;
};

struct GhaBlockParams {
  BlockConfig config;
  std::vector<LayerParams> layers;
  std::optional<FourierEmbedding> fourier;  // head_dim / 2 frequencies, shared by all layers and heads
};

/// Xavier-uniform projections, zero biases, unit LayerNorm gains; fully
/// determined by config.seed.
GhaBlockParams init_params(const BlockConfig& config);

/// Same shapes as init_params, every tensor zero except LayerNorm gains.
GhaBlockParams zero_params(const BlockConfig& config);

enum class Mechanism { kGha, kLocal, kDense };

std::string to_string(Mechanism m);
Mechanism parse_mechanism(const std::string& s);

struct BlockOptions {
  Mechanism mechanism = Mechanism::kGha;
  bool layer_norm = true;  // false replaces both LayerNorms with the identity (testing)
};

struct BlockStats {
  std::uint64_t weight_count = 0;
};

/// L layers of x += MHA(LN(x)); x += FFN(LN(x)). The structure is
/// computed once by the caller and shared by every layer and head.
Matrix block_forward(const Matrix& x, const HierarchyStructure& structure, const GhaBlockParams& params,
                     const BlockOptions& options = {}, BlockStats* stats = nullptr);

/// Builds the point-flavor structure from positions, then runs the block.
Matrix block_forward(const Matrix& x, const Positions& positions, const GhaBlockParams& params, int k,
                     int r = 2, const BlockOptions& options = {}, BlockStats* stats = nullptr);

/// Per-row normalization to zero mean and unit (biased) variance, eps 1e-5.
Matrix layer_norm(const Matrix& x, const Vector& gain, const Vector& shift, double eps = 1e-5);

/// Multi-head attention of one layer on already-normalized input.
Matrix multi_head_attention(const Matrix& x, const HierarchyStructure& structure, const LayerParams& layer,
                            const BlockConfig& config, const EmbeddingConfig& embedding,
                            Mechanism mechanism, std::uint64_t* weight_count = nullptr);

// GHAB parameter file: "GHAB", u32 version, config block, u32 tensor count,
// then per tensor u32 rows, u32 cols and rows*cols little-endian f64.
inline constexpr std::uint32_t kParamsVersion = 1;

void save_params(std::ostream& out, const GhaBlockParams& params);
void save_params(const GhaBlockParams& params, const std::filesystem::path& path);
GhaBlockParams load_params(std::istream& in);
GhaBlockParams load_params(const std::filesystem::path& path);

}  // namespace gha
