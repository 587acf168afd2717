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

#include "gha/block.hpp"

#include "gha/wire.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace gha {

void BlockConfig::validate() const {
  if (n_layers < 1) throw ConfigError("n_layers must be at least 1");
  if (model_dim < 1 || ffn_dim < 1) throw ConfigError("model_dim and ffn_dim must be positive");
  if (n_heads < 1 || model_dim % n_heads != 0) throw ConfigError("n_heads must divide model_dim");
  for (double p : {attn_dropout, ffn_dropout}) {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probabilities must lie in [0, 1)");
  }
  if (embedding_mode != EmbeddingMode::kNone && head_dim() % 2 != 0)
    throw ConfigError("Fourier embedding needs an even head width (model_dim / n_heads)");
}

std::string to_string(Mechanism m) {
  switch (m) {
    case Mechanism::kGha: return "gha";
    case Mechanism::kLocal: return "local";
    case Mechanism::kDense: return "dense";
  }
  return "gha";
}

Mechanism parse_mechanism(const std::string& s) {
  if (s == "gha") return Mechanism::kGha;
  if (s == "local") return Mechanism::kLocal;
  if (s == "dense") return Mechanism::kDense;
  throw ConfigError("unknown mechanism '" + s + "' (expected gha, local or dense)");
}

namespace {

Matrix xavier(Rng& rng, int fan_in, int fan_out) {
  const double s = std::sqrt(6.0 / (fan_in + fan_out));
  return random_uniform(rng, fan_in, fan_out, -s, s);
}

GhaBlockParams shaped(const BlockConfig& config, bool random) {
  config.validate();
  GhaBlockParams p;
  p.config = config;
  const int c = config.model_dim, cf = config.ffn_dim;
  for (int l = 0; l < config.n_layers; ++l) {
    Rng rng = substream(config.seed, "params", static_cast<std::uint64_t>(l));
    auto proj = [&](int in, int out) { return random ? xavier(rng, in, out) : Matrix(Matrix::Zero(in, out)); };
    LayerParams lp;
    lp.w_q = proj(c, c);
    lp.w_k = proj(c, c);
    lp.w_v = proj(c, c);
    lp.w_o = proj(c, c);
    lp.w_ff1 = proj(c, cf);
    lp.w_ff2 = proj(cf, c);
    lp.b_q = lp.b_k = lp.b_v = lp.b_o = Vector::Zero(c);
    lp.b_ff1 = Vector::Zero(cf);
    lp.b_ff2 = Vector::Zero(c);
    lp.ln1_gain = lp.ln2_gain = Vector::Ones(c);
    lp.ln1_shift = lp.ln2_shift = Vector::Zero(c);
    p.layers.push_back(std::move(lp));
  }
  if (config.head_dim() % 2 == 0) {
    Rng rng = substream(config.seed, "fourier");
    p.fourier = FourierEmbedding::sample(rng, config.head_dim() / 2);
  }
  return p;
}

/// Inverted dropout with a mask keyed by (seed, layer, role).
void dropout(Matrix& x, double p, std::uint64_t seed, int layer, int role) {
  if (p <= 0.0) return;
  Rng rng = substream(seed, "dropout", static_cast<std::uint64_t>(layer) * 8 + static_cast<std::uint64_t>(role));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double keep = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = u(rng) < p ? 0.0 : x(i, j) * keep;
}

Matrix affine(const Matrix& x, const Matrix& w, const Vector& b) {
  Matrix y = x * w;
  y.rowwise() += b.transpose();
  return y;
}

}  // namespace

GhaBlockParams init_params(const BlockConfig& config) { return shaped(config, true); }

GhaBlockParams zero_params(const BlockConfig& config) { return shaped(config, false); }

Matrix layer_norm(const Matrix& x, const Vector& gain, const Vector& shift, double eps) {
  if (gain.size() != x.cols() || shift.size() != x.cols())
    throw InvalidInput("layer_norm: gain/shift width mismatch");
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).mean();
    const Eigen::RowVectorXd centered = x.row(i).array() - mean;
    const double var = centered.squaredNorm() / static_cast<double>(x.cols());
    y.row(i) = (centered / std::sqrt(var + eps)).cwiseProduct(gain.transpose()) + shift.transpose();
  }
  return y;
}

Matrix multi_head_attention(const Matrix& x, const HierarchyStructure& structure, const LayerParams& layer,
                            const BlockConfig& config, const EmbeddingConfig& embedding,
                            Mechanism mechanism, std::uint64_t* weight_count) {
  const Matrix q = affine(x, layer.w_q, layer.b_q);
  const Matrix k = affine(x, layer.w_k, layer.b_k);
  const Matrix v = affine(x, layer.w_v, layer.b_v);
  const int hd = config.head_dim();
  Matrix heads(x.rows(), config.model_dim);

  // Aliasing shared_ptr: the caller owns the structure for the whole call.
  const std::shared_ptr<const HierarchyStructure> view(std::shared_ptr<const HierarchyStructure>{}, &structure);
  const std::shared_ptr<const HierarchyStructure> local_view =
      mechanism == Mechanism::kLocal && structure.levels.size() > 1
          ? [&] {
              auto s = std::make_shared<HierarchyStructure>(structure);
              s->levels.resize(1);
              s->levels.front().parent_of.clear();
              s->levels.front().children_of = Csr{};
              return std::shared_ptr<const HierarchyStructure>(std::move(s));
            }()
          : view;

  for (int h = 0; h < config.n_heads; ++h) {
    const Matrix qh = q.middleCols(h * hd, hd), kh = k.middleCols(h * hd, hd), vh = v.middleCols(h * hd, hd);
    AttentionResult r;
    if (mechanism == Mechanism::kDense) {
      r = dense_attention(AttentionInputs{qh, kh, vh, structure.levels.front().positions, embedding});
    } else {
      r = gha_forward(attach_features(local_view, qh, kh, vh), embedding);
    }
    heads.middleCols(h * hd, hd) = r.z;
    if (weight_count) *weight_count += r.weight_count;
  }
  return affine(heads, layer.w_o, layer.b_o);
}

Matrix block_forward(const Matrix& x, const HierarchyStructure& structure, const GhaBlockParams& params,
                     const BlockOptions& options, BlockStats* stats) {
  const BlockConfig& cfg = params.config;
  cfg.validate();
  if (x.cols() != cfg.model_dim) throw InvalidInput("block_forward: feature width does not match model_dim");
  if (x.rows() != structure.token_count())
    throw InvalidInput("block_forward: feature rows do not match the token count");
  if (static_cast<int>(params.layers.size()) != cfg.n_layers)
    throw InvalidInput("block_forward: parameter layer count does not match config");
  if (cfg.embedding_mode != EmbeddingMode::kNone && !params.fourier)
    throw ConfigError("block_forward: positional embedding requested but parameters carry no frequencies");

  Matrix h = x;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const LayerParams& lp = params.layers[l];
    EmbeddingConfig emb;
    if (cfg.embedding_mode != EmbeddingMode::kNone && (l == 0 || cfg.embed_every_layer)) {
      emb.mode = cfg.embedding_mode;
      emb.fourier = params.fourier;
    }

    const Matrix n1 = options.layer_norm ? layer_norm(h, lp.ln1_gain, lp.ln1_shift) : h;
    std::uint64_t count = 0;
    Matrix attn = multi_head_attention(n1, structure, lp, cfg, emb, options.mechanism, &count);
    if (cfg.dropout_enabled) dropout(attn, cfg.attn_dropout, cfg.seed, l, 0);
    h += attn;
    if (stats) stats->weight_count += count;

    const Matrix n2 = options.layer_norm ? layer_norm(h, lp.ln2_gain, lp.ln2_shift) : h;
    Matrix hidden = affine(n2, lp.w_ff1, lp.b_ff1).cwiseMax(0.0);
    if (cfg.dropout_enabled) dropout(hidden, cfg.ffn_dropout, cfg.seed, l, 1);
    Matrix ffn = affine(hidden, lp.w_ff2, lp.b_ff2);
    if (cfg.dropout_enabled) dropout(ffn, cfg.ffn_dropout, cfg.seed, l, 2);
    h += ffn;
  }
  return h;
}

Matrix block_forward(const Matrix& x, const Positions& positions, const GhaBlockParams& params, int k, int r,
                     const BlockOptions& options, BlockStats* stats) {
  const auto structure = build_point_structure(positions, k, r);
  return block_forward(x, *structure, params, options, stats);
}

// ---------------------------------------------------------------------------
// GHAB files

namespace {

constexpr char kParamsMagic[4] = {'G', 'H', 'A', 'B'};

void put_tensor(wire::Writer& w, const Matrix& m) {
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) w.f64(m(i, j));
}

void put_tensor(wire::Writer& w, const Vector& v) { put_tensor(w, Matrix(v.transpose())); }

Matrix get_tensor(wire::Reader& r, Eigen::Index rows, Eigen::Index cols, const char* name) {
  const std::uint32_t gr = r.u32(), gc = r.u32();
  if (gr != rows || gc != cols) {
    throw FormatError(std::string("tensor '") + name + "' has shape " + std::to_string(gr) + "x" +
                      std::to_string(gc) + ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = r.f64();
  if (!m.allFinite()) throw FormatError(std::string("tensor '") + name + "' holds non-finite values");
  return m;
}

Vector get_vector(wire::Reader& r, Eigen::Index n, const char* name) {
  return get_tensor(r, 1, n, name).row(0).transpose();
}

constexpr std::uint32_t kTensorsPerLayer = 16;

}  // namespace

void save_params(std::ostream& out, const GhaBlockParams& params) {
  const BlockConfig& c = params.config;
  wire::Writer w(out);
  w.bytes(kParamsMagic, 4);
  w.u32(kParamsVersion);
  w.u32(static_cast<std::uint32_t>(c.n_layers));
  w.u32(static_cast<std::uint32_t>(c.model_dim));
  w.u32(static_cast<std::uint32_t>(c.ffn_dim));
  w.u32(static_cast<std::uint32_t>(c.n_heads));
  w.f64(c.attn_dropout);
  w.f64(c.ffn_dropout);
  w.u8(c.dropout_enabled ? 1 : 0);
  w.u64(c.seed);
  w.u32(static_cast<std::uint32_t>(c.embedding_mode));
  w.u8(c.embed_every_layer ? 1 : 0);

  w.u32(1 + kTensorsPerLayer * static_cast<std::uint32_t>(params.layers.size()));
  put_tensor(w, params.fourier ? params.fourier->frequencies() : Matrix(0, 3));
  for (const LayerParams& l : params.layers) {
    put_tensor(w, l.w_q);
    put_tensor(w, l.b_q);
    put_tensor(w, l.w_k);
    put_tensor(w, l.b_k);
    put_tensor(w, l.w_v);
    put_tensor(w, l.b_v);
    put_tensor(w, l.w_o);
    put_tensor(w, l.b_o);
    put_tensor(w, l.ln1_gain);
    put_tensor(w, l.ln1_shift);
    put_tensor(w, l.w_ff1);
    put_tensor(w, l.b_ff1);
    put_tensor(w, l.w_ff2);
    put_tensor(w, l.b_ff2);
    put_tensor(w, l.ln2_gain);
    put_tensor(w, l.ln2_shift);
  }
}

void save_params(const GhaBlockParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  save_params(out, params);
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

GhaBlockParams load_params(std::istream& in) {
  wire::Reader r(in);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kParamsMagic, 4) != 0) throw FormatError("not a GHAB parameter file");
  const std::uint32_t version = r.u32();
  if (version != kParamsVersion)
    throw UnsupportedVersion("unsupported GHAB version " + std::to_string(version));

  BlockConfig c;
  c.n_layers = static_cast<int>(r.u32());
  c.model_dim = static_cast<int>(r.u32());
  c.ffn_dim = static_cast<int>(r.u32());
  c.n_heads = static_cast<int>(r.u32());
  c.attn_dropout = r.f64();
  c.ffn_dropout = r.f64();
  c.dropout_enabled = r.u8() != 0;
  c.seed = r.u64();
  const std::uint32_t mode = r.u32();
  if (mode > static_cast<std::uint32_t>(EmbeddingMode::kRelative)) throw FormatError("bad embedding mode");
  c.embedding_mode = static_cast<EmbeddingMode>(mode);
  c.embed_every_layer = r.u8() != 0;
  if (c.n_layers < 1 || c.n_layers > 4096 || c.model_dim < 1 || c.ffn_dim < 1 || c.n_heads < 1 ||
      c.model_dim > (1 << 16) || c.ffn_dim > (1 << 16))
    throw FormatError("GHAB config block out of range");
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("GHAB config block invalid: ") + e.what());
  }

  const std::uint32_t count = r.u32();
  if (count != 1 + kTensorsPerLayer * static_cast<std::uint32_t>(c.n_layers))
    throw FormatError("GHAB tensor count does not match the layer count");

  GhaBlockParams p;
  p.config = c;
  const std::uint32_t fr = r.u32(), fc = r.u32();
  if (fc != 3 || (fr != 0 && static_cast<int>(fr) * 2 != c.head_dim()))
    throw FormatError("GHAB Fourier frequency tensor has the wrong shape");
  if (fr > 0) {
    Matrix f(fr, 3);
    for (std::uint32_t i = 0; i < fr; ++i)
      for (int j = 0; j < 3; ++j) f(i, j) = r.f64();
    if (!f.allFinite()) throw FormatError("GHAB Fourier frequencies are not finite");
    p.fourier = FourierEmbedding(std::move(f));
  }
  if (c.embedding_mode != EmbeddingMode::kNone && !p.fourier)
    throw FormatError("GHAB file requests a positional embedding but stores no frequencies");

  const int d = c.model_dim, f = c.ffn_dim;
  for (int l = 0; l < c.n_layers; ++l) {
    LayerParams lp;
    lp.w_q = get_tensor(r, d, d, "w_q");
    lp.b_q = get_vector(r, d, "b_q");
    lp.w_k = get_tensor(r, d, d, "w_k");
    lp.b_k = get_vector(r, d, "b_k");
    lp.w_v = get_tensor(r, d, d, "w_v");
    lp.b_v = get_vector(r, d, "b_v");
    lp.w_o = get_tensor(r, d, d, "w_o");
    lp.b_o = get_vector(r, d, "b_o");
    lp.ln1_gain = get_vector(r, d, "ln1_gain");
    lp.ln1_shift = get_vector(r, d, "ln1_shift");
    lp.w_ff1 = get_tensor(r, d, f, "w_ff1");
    lp.b_ff1 = get_vector(r, f, "b_ff1");
    lp.w_ff2 = get_tensor(r, f, d, "w_ff2");
    lp.b_ff2 = get_vector(r, d, "b_ff2");
    lp.ln2_gain = get_vector(r, d, "ln2_gain");
    lp.ln2_shift = get_vector(r, d, "ln2_shift");
    p.layers.push_back(std::move(lp));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after GHAB payload");
  return p;
}

GhaBlockParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return load_params(in);
}

}  // namespace gha
