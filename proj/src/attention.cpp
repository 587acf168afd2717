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

#include "gha/attention.hpp"

#include "gha/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace gha {

FourierEmbedding::FourierEmbedding(Matrix frequencies) : frequencies_(std::move(frequencies)) {
  if (frequencies_.cols() != 3) throw ConfigError("Fourier frequencies must be m x 3");
  if (frequencies_.rows() < 1) throw ConfigError("Fourier embedding needs at least one frequency");
  if (!frequencies_.allFinite()) throw ConfigError("Fourier frequencies must be finite");
}

FourierEmbedding FourierEmbedding::sample(Rng& rng, int pair_count) {
  return FourierEmbedding(random_normal(rng, pair_count, 3));
}

void FourierEmbedding::embed_into(const Vec3& p, std::span<double> out) const {
  const double two_pi = 2.0 * std::numbers::pi;
  for (Eigen::Index i = 0; i < frequencies_.rows(); ++i) {
    const double t = two_pi * (frequencies_(i, 0) * p.x() + frequencies_(i, 1) * p.y() +
                               frequencies_(i, 2) * p.z());
    out[2 * i] = std::cos(t);
    out[2 * i + 1] = std::sin(t);
  }
}

Vector FourierEmbedding::embed(const Vec3& p) const {
  Vector out(output_dim());
  embed_into(p, {out.data(), static_cast<std::size_t>(out.size())});
  return out;
}

std::string to_string(EmbeddingMode m) {
  switch (m) {
    case EmbeddingMode::kNone: return "none";
    case EmbeddingMode::kAbsolute: return "absolute";
    case EmbeddingMode::kRelative: return "relative";
  }
  return "none";
}

EmbeddingMode parse_embedding_mode(const std::string& s) {
  if (s == "none") return EmbeddingMode::kNone;
  if (s == "absolute") return EmbeddingMode::kAbsolute;
  if (s == "relative") return EmbeddingMode::kRelative;
  throw ConfigError("unknown embedding mode '" + s + "' (expected none, absolute or relative)");
}

void validate_embedding(const EmbeddingConfig& embedding, Eigen::Index d) {
  if (embedding.mode == EmbeddingMode::kNone) return;
  if (d % 2 != 0) throw ConfigError("Fourier positional embedding needs an even head width");
  if (!embedding.fourier) throw ConfigError("embedding mode set but no Fourier embedding given");
  if (embedding.fourier->output_dim() != d)
    throw ConfigError("Fourier embedding width " + std::to_string(embedding.fourier->output_dim()) +
                      " does not match head width " + std::to_string(d));
}

namespace {

/// Scores for one level: S_ij = qvec_i . kvec_ij / sqrt(d).
class LevelScorer {
 public:
  LevelScorer(const Matrix& q, const Matrix& k, const Positions& positions, const EmbeddingConfig& emb)
      : q_(q), k_(k), positions_(positions), emb_(emb), scale_(1.0 / std::sqrt(static_cast<double>(q.cols()))) {
    if (emb.mode == EmbeddingMode::kAbsolute) {
      Matrix g(q.rows(), q.cols());
      for (Eigen::Index i = 0; i < q.rows(); ++i)
        emb.fourier->embed_into(positions.row(i).transpose(), {g.row(i).data(), static_cast<std::size_t>(q.cols())});
      q_abs_ = q + g;
      k_abs_ = k + g;
    }
  }

  Eigen::Index width() const { return q_.cols(); }
  double scale() const { return scale_; }

  /// Query-side vector (gradient of S_ij w.r.t. k-side input, before scaling).
  auto query_vec(Index i) const {
    return emb_.mode == EmbeddingMode::kAbsolute ? q_abs_.row(i) : q_.row(i);
  }

  /// Key-side vector for the pair; `scratch` must hold width() doubles.
  void key_vec(Index i, Index j, std::span<double> scratch) const {
    Eigen::Map<Eigen::RowVectorXd> out(scratch.data(), width());
    switch (emb_.mode) {
      case EmbeddingMode::kNone: out = k_.row(j); break;
      case EmbeddingMode::kAbsolute: out = k_abs_.row(j); break;
      case EmbeddingMode::kRelative: {
        const Vec3 rel = (positions_.row(i) - positions_.row(j)).transpose();
        emb_.fourier->embed_into(rel, scratch);
        out += k_.row(j);
        break;
      }
    }
  }

  /// `scratch` must hold width() doubles.
  double operator()(Index i, Index j, std::span<double> scratch) const {
    if (emb_.mode == EmbeddingMode::kNone) return q_.row(i).dot(k_.row(j)) * scale_;
    if (emb_.mode == EmbeddingMode::kAbsolute) return q_abs_.row(i).dot(k_abs_.row(j)) * scale_;
    key_vec(i, j, scratch);
    return q_.row(i).dot(Eigen::Map<const Eigen::RowVectorXd>(scratch.data(), width())) * scale_;
  }

 private:
  const Matrix& q_;
  const Matrix& k_;
  const Positions& positions_;
  const EmbeddingConfig& emb_;
  double scale_;
  Matrix q_abs_, k_abs_;
};

void check_inputs(const Matrix& q, const Matrix& k, const Matrix& v, const Positions& positions) {
  const Eigen::Index n = q.rows();
  if (n < 1) throw InvalidInput("attention: no tokens");
  if (q.cols() < 1) throw InvalidInput("attention: feature width must be at least 1");
  if (k.rows() != n || v.rows() != n || positions.rows() != n)
    throw InvalidInput("attention: Q, K, V and positions must have the same row count");
  if (k.cols() != q.cols()) throw InvalidInput("attention: Q and K widths differ");
  if (!q.allFinite() || !k.allFinite() || !v.allFinite() || !positions.allFinite())
    throw InvalidInput("attention: non-finite input");
}

/// Rank of every token in lexicographic position order (index on exact ties).
/// All kernels accumulate keys in this order, so sums depend only on the
/// geometry, not on the input labeling, and a full neighborhood reproduces
/// dense attention bit for bit.
std::vector<Index> lexicographic_order(const Positions& p) {
  std::vector<Index> order(static_cast<std::size_t>(p.rows()));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](Index a, Index b) {
    for (int c = 0; c < 3; ++c)
      if (p(a, c) != p(b, c)) return p(a, c) < p(b, c);
    return a < b;
  });
  return order;
}

std::vector<Index> rank_of(const std::vector<Index>& order) {
  std::vector<Index> rank(order.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = static_cast<Index>(r);
  return rank;
}

std::span<const Index> in_rank_order(std::span<const Index> keys, const std::vector<Index>& rank,
                                     std::vector<Index>& buffer) {
  buffer.assign(keys.begin(), keys.end());
  std::sort(buffer.begin(), buffer.end(), [&](Index a, Index b) { return rank[a] < rank[b]; });
  return buffer;
}

/// Softmax-weighted sum of V over `keys` for query i, relative to the
/// local maximum score.
struct Partial {
  double max_score = -std::numeric_limits<double>::infinity();
  double sum = 0.0;
};

Partial local_partial(const LevelScorer& scorer, const Matrix& v, Index i, std::span<const Index> keys,
                      std::vector<double>& scores, std::vector<double>& scratch,
                      Eigen::Ref<Eigen::RowVectorXd> y) {
  scores.resize(keys.size());
  Partial p;
  for (std::size_t t = 0; t < keys.size(); ++t) {
    scores[t] = scorer(i, keys[t], scratch);
    p.max_score = std::max(p.max_score, scores[t]);
  }
  y.setZero();
  for (std::size_t t = 0; t < keys.size(); ++t) {
    const double w = std::exp(scores[t] - p.max_score);
    p.sum += w;
    y += w * v.row(keys[t]);
  }
  return p;
}

AttentionResult single_level(const AttentionInputs& in,
                             const std::function<std::span<const Index>(std::size_t, std::vector<Index>&)>& keys_of,
                             std::uint64_t weight_count) {
  check_inputs(in.q, in.k, in.v, in.positions);
  validate_embedding(in.embedding, in.q.cols());
  const LevelScorer scorer(in.q, in.k, in.positions, in.embedding);
  const Eigen::Index n = in.q.rows();
  AttentionResult out;
  out.z.resize(n, in.v.cols());
  out.normalizers.resize(n);
  out.row_max.resize(n);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    std::vector<double> scores, scratch(static_cast<std::size_t>(in.q.cols()));
    std::vector<Index> buf;
    Eigen::RowVectorXd y(in.v.cols());
    const Partial p = local_partial(scorer, in.v, static_cast<Index>(i), keys_of(i, buf), scores, scratch, y);
    out.z.row(static_cast<Eigen::Index>(i)) = y / p.sum;
    out.normalizers[static_cast<Eigen::Index>(i)] = p.sum;
    out.row_max[static_cast<Eigen::Index>(i)] = p.max_score;
  }, 16);
  out.weight_count = weight_count;
  out.per_level_weight_count = {weight_count};
  return out;
}

}  // namespace

AttentionResult dense_attention(const AttentionInputs& inputs) {
  const auto n = static_cast<std::size_t>(inputs.q.rows());
  const std::vector<Index> all = lexicographic_order(inputs.positions);
  return single_level(inputs, [&](std::size_t, std::vector<Index>&) { return std::span<const Index>(all); },
                      static_cast<std::uint64_t>(n) * n);
}

AttentionResult local_attention(const AttentionInputs& inputs, const NeighborhoodTopology& topology) {
  if (topology.size() != static_cast<std::size_t>(inputs.q.rows()))
    throw InvalidInput("local_attention: topology size does not match token count");
  for (Index j : topology.lists.indices) {
    if (j < 0 || j >= inputs.q.rows()) throw InvalidInput("local_attention: topology index out of range");
  }
  const std::vector<Index> rank = rank_of(lexicographic_order(inputs.positions));
  return single_level(
      inputs, [&](std::size_t i, std::vector<Index>& buf) { return in_rank_order(topology.neighbors(i), rank, buf); },
      static_cast<std::uint64_t>(topology.total_entries()));
}

AttentionResult gha_forward(const Hierarchy& hierarchy, const EmbeddingConfig& embedding) {
  if (!hierarchy.structure || hierarchy.features.empty() ||
      hierarchy.features.size() != hierarchy.structure->levels.size())
    throw InvalidInput("gha_forward: empty or inconsistent hierarchy");
  const LevelFeatures& base = hierarchy.features.front();
  check_inputs(base.q, base.k, base.v, hierarchy.level(0).positions);
  validate_embedding(embedding, base.q.cols());

  const std::size_t levels = hierarchy.level_count();
  const Eigen::Index dv = base.v.cols();

  // (Y, D) of the level above, scaled by exp(-m) per token.
  Matrix y_above;
  Vector d_above, m_above;
  AttentionResult out;
  out.per_level_weight_count.assign(levels, 0);

  for (std::size_t h = levels; h-- > 0;) {
    const LevelStructure& ls = hierarchy.level(h);
    const LevelFeatures& lf = hierarchy.features[h];
    const Eigen::Index n = ls.size();
    if (lf.q.rows() != n || lf.k.rows() != n || lf.v.rows() != n || static_cast<Eigen::Index>(ls.topology.size()) != n)
      throw InvalidInput("gha_forward: level " + std::to_string(h) + " is inconsistent");
    const bool has_parent = h + 1 < levels;
    const LevelScorer scorer(lf.q, lf.k, ls.positions, embedding);
    const std::vector<Index> rank = rank_of(lexicographic_order(ls.positions));

    Matrix y(n, dv);
    Vector d(n), m(n);
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t a) {
      std::vector<double> scores, scratch(static_cast<std::size_t>(lf.q.cols()));
      std::vector<Index> buf;
      const auto ai = static_cast<Eigen::Index>(a);
      const Partial p = local_partial(scorer, lf.v, static_cast<Index>(a),
                                      in_rank_order(ls.topology.neighbors(a), rank, buf), scores, scratch, y.row(ai));
      double mx = p.max_score, sum = p.sum;
      if (has_parent) {
        const Index parent = ls.parent_of[a];
        const double mp = m_above[parent];
        const double top = std::max(mx, mp);
        const double own = std::exp(mx - top), inherited = std::exp(mp - top);
        y.row(ai) = own * y.row(ai) + inherited * y_above.row(parent);
        sum = own * sum + inherited * d_above[parent];
        mx = top;
      }
      d[ai] = sum;
      m[ai] = mx;
    });
    out.per_level_weight_count[h] = ls.topology.total_entries();
    y_above = std::move(y);
    d_above = std::move(d);
    m_above = std::move(m);
  }

  out.z = y_above.array().colwise() / d_above.array();
  out.normalizers = std::move(d_above);
  out.row_max = std::move(m_above);
  for (auto c : out.per_level_weight_count) out.weight_count += c;
  return out;
}

AttentionGradients gha_backward(const Hierarchy& hierarchy, const EmbeddingConfig& embedding,
                                const AttentionResult& forward, const Matrix& dz) {
  if (!hierarchy.structure || hierarchy.features.empty())
    throw InvalidInput("gha_backward: empty hierarchy");
  const Eigen::Index n = hierarchy.token_count();
  const Eigen::Index dv = hierarchy.features.front().v.cols();
  const Eigen::Index dqk = hierarchy.features.front().q.cols();
  if (dz.rows() != n || dz.cols() != dv) throw InvalidInput("gha_backward: upstream gradient shape mismatch");
  if (forward.z.rows() != n || forward.z.cols() != dv || forward.normalizers.size() != n ||
      forward.row_max.size() != n)
    throw InvalidInput("gha_backward: forward result does not match the hierarchy");
  validate_embedding(embedding, dqk);

  // dL/dY_c = exp(-m_c) * g_c and dL/dD_c = exp(-m_c) * gd_c in exact arithmetic.
  Matrix g = dz.array().colwise() / forward.normalizers.array();
  Vector gd = -(dz.cwiseProduct(forward.z).rowwise().sum()).cwiseQuotient(forward.normalizers);

  const std::size_t levels = hierarchy.level_count();
  std::vector<AttentionGradients> per_level(levels);
  std::vector<Index> ancestor(static_cast<std::size_t>(n));
  for (Eigen::Index c = 0; c < n; ++c) ancestor[c] = static_cast<Index>(c);

  for (std::size_t h = 0; h < levels; ++h) {
    const LevelStructure& ls = hierarchy.level(h);
    const LevelFeatures& lf = hierarchy.features[h];
    const Eigen::Index nh = ls.size();
    const LevelScorer scorer(lf.q, lf.k, ls.positions, embedding);
    std::vector<double> scratch(static_cast<std::size_t>(dqk));

    Vector local_max(nh);
    std::vector<std::vector<double>> scores(static_cast<std::size_t>(nh));
    for (Eigen::Index a = 0; a < nh; ++a) {
      const auto keys = ls.topology.neighbors(static_cast<std::size_t>(a));
      auto& s = scores[a];
      s.resize(keys.size());
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t t = 0; t < keys.size(); ++t) {
        s[t] = scorer(static_cast<Index>(a), keys[t], scratch);
        mx = std::max(mx, s[t]);
      }
      local_max[a] = mx;
    }

    // Gather every level-0 query's upstream signal at its level-h ancestor,
    // rescaled to that ancestor's local maximum (exponent is never positive).
    Matrix acc_y = Matrix::Zero(nh, dv);
    Vector acc_d = Vector::Zero(nh);
    for (Eigen::Index c = 0; c < n; ++c) {
      const Index a = ancestor[c];
      const double w = std::exp(local_max[a] - forward.row_max[c]);
      acc_y.row(a) += w * g.row(c);
      acc_d[a] += w * gd[c];
    }

    AttentionGradients& lg = per_level[h];
    lg.dq = Matrix::Zero(nh, dqk);
    lg.dk = Matrix::Zero(nh, dqk);
    lg.dv = Matrix::Zero(nh, dv);
    Eigen::RowVectorXd kvec(dqk), qvec(dqk);
    for (Eigen::Index a = 0; a < nh; ++a) {
      const auto keys = ls.topology.neighbors(static_cast<std::size_t>(a));
      qvec = scorer.query_vec(static_cast<Index>(a));
      for (std::size_t t = 0; t < keys.size(); ++t) {
        const Index j = keys[t];
        const double e = std::exp(scores[a][t] - local_max[a]);
        lg.dv.row(j) += e * acc_y.row(a);
        const double ds = e * (acc_y.row(a).dot(lf.v.row(j)) + acc_d[a]) * scorer.scale();
        scorer.key_vec(static_cast<Index>(a), j, {kvec.data(), static_cast<std::size_t>(dqk)});
        lg.dq.row(a) += ds * kvec;
        lg.dk.row(j) += ds * qvec;
      }
    }

    if (!ls.is_top()) {
      for (Eigen::Index c = 0; c < n; ++c) ancestor[c] = ls.parent_of[ancestor[c]];
    }
  }

  // Transpose of the pooling averages, coarse to fine.
  for (std::size_t h = levels; h-- > 1;) {
    const Csr& pool = hierarchy.level(h).pooled_from;
    AttentionGradients& fine = per_level[h - 1];
    const AttentionGradients& coarse = per_level[h];
    for (std::size_t s = 0; s < pool.rows(); ++s) {
      const auto src = pool.row(s);
      const double w = 1.0 / static_cast<double>(src.size());
      for (Index j : src) {
        fine.dq.row(j) += w * coarse.dq.row(static_cast<Eigen::Index>(s));
        fine.dk.row(j) += w * coarse.dk.row(static_cast<Eigen::Index>(s));
        fine.dv.row(j) += w * coarse.dv.row(static_cast<Eigen::Index>(s));
      }
    }
  }
  return std::move(per_level.front());
}

}  // namespace gha
