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

#include "gha/cli.hpp"

#include "gha/io.hpp"
#include "gha/parallel.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>

namespace gha::cli {

void RunConfig::validate() const {
  if (flavor == Flavor::kVoxel && !(voxel_size > 0.0)) throw ConfigError("--flavor voxel requires --voxel-size > 0");
  if (k < 1) throw ConfigError("--k must be positive");
  if (r < 2) throw ConfigError("--r must be at least 2");
  if (n_layers < 1 || n_heads < 1) throw ConfigError("--layers and --heads must be positive");
  if (points < 1) throw ConfigError("--points must be positive");
  if (dim < 1) throw ConfigError("--dim must be positive");
}

PointCloud load_or_generate(const RunConfig& config) {
  if (!config.input.empty()) return read_point_cloud(config.input);
  Rng rng = substream(config.seed, "cloud-gen");
  return PointCloud(random_cloud(rng, config.points));
}

AnalysisSetup analysis_setup(const RunConfig& c) {
  AnalysisSetup s;
  s.flavor = c.flavor;
  s.k = c.k;
  s.r = c.r;
  s.voxel_size = c.voxel_size;
  s.dim = c.dim;
  s.seed = c.seed;
  s.embedding_mode = c.embedding_mode;
  s.probe_cap = c.probe_cap;
  return s;
}

namespace {

using Clock = std::chrono::steady_clock;

/// Writes to `path`, or to `fallback` when the path is empty or "-".
template <class Fn>
void with_output(const std::string& path, std::ostream& fallback, Fn&& fn) {
  if (path.empty() || path == "-") {
    fn(fallback);
    return;
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write '" + path + "'");
  fn(f);
  if (!f) throw IoError("write failed for '" + path + "'");
}

template <class Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const CapacityError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const InvalidInput& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailed;
  }
}

}  // namespace

int cmd_run(const RunConfig& config, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    config.validate();
    if (config.input.empty()) throw ConfigError("run: --input is required");
    if (config.output.empty()) throw ConfigError("run: --output is required");
    const auto t0 = Clock::now();
    const PointCloud cloud = read_point_cloud(config.input);

    std::shared_ptr<const HierarchyStructure> structure;
    Matrix features;
    std::optional<SparseVoxelGrid> grid;
    if (config.flavor == Flavor::kPoint) {
      features = cloud.features() ? *cloud.features() : Matrix(cloud.size(), 0);
    } else {
      grid = voxelize(cloud, config.voxel_size);
      features = grid->cell_features;
    }
    const Positions& token_pos = grid ? grid->cell_centroid : cloud.positions();
    const Eigen::Index n = token_pos.rows();
    if (config.mechanism == Mechanism::kDense && static_cast<std::size_t>(n) > config.probe_cap) {
      throw CapacityError("dense attention limited to N <= " + std::to_string(config.probe_cap) + " tokens, got " +
                          std::to_string(n));
    }
    structure = grid ? build_voxel_structure(*grid) : build_point_structure(token_pos, config.k, config.r);

    GhaBlockParams params;
    if (!config.params.empty()) {
      params = load_params(std::filesystem::path(config.params));
    } else {
      BlockConfig bc;
      bc.model_dim = config.model_dim > 0 ? config.model_dim
                                          : (features.cols() > 0 ? static_cast<int>(features.cols()) : 8);
      bc.ffn_dim = config.ffn_dim > 0 ? config.ffn_dim : 2 * bc.model_dim;
      bc.n_layers = config.n_layers;
      bc.n_heads = config.n_heads;
      bc.seed = config.seed;
      bc.embedding_mode = config.embedding_mode;
      bc.embed_every_layer = config.embed_every_layer;
      params = init_params(bc);
    }
    const int c = params.config.model_dim;

    Matrix x(n, c);
    if (features.cols() > 0) {
      if (features.cols() != c)
        throw ConfigError("input has " + std::to_string(features.cols()) + " feature columns but model_dim is " +
                          std::to_string(c));
      x = features;
    } else {
      // Without features, coordinates are tiled across the channels.
      for (Eigen::Index i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) x(i, j) = token_pos(i, j % 3);
    }

    BlockOptions opts;
    opts.mechanism = config.mechanism;
    BlockStats stats;
    const Matrix y = block_forward(x, *structure, params, opts, &stats);

    Matrix per_point(cloud.size(), c);
    if (grid) {
      for (Eigen::Index i = 0; i < cloud.size(); ++i) per_point.row(i) = y.row(grid->point_to_voxel[i]);
    } else {
      per_point = y;
    }
    write_point_cloud_binary(config.output, PointCloud(cloud.positions(), per_point));

    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    out << "points " << cloud.size() << " tokens " << n << " levels " << structure->levels.size() << " mechanism "
        << to_string(config.mechanism) << " weight_count " << stats.weight_count << " seconds " << std::fixed
        << std::setprecision(3) << secs << std::defaultfloat << '\n';
    return kExitOk;
  });
}

int compare_problem(const AnalysisProblem& problem, const std::string& output, std::ostream& out,
                    std::ostream& err) {
  return guarded(err, [&] {
    const ApproximationReport rep = approximation_report(problem);
    with_output(output, out, [&](std::ostream& o) { write_report_csv(o, rep, problem.setup); });
    if (!report_invariants_hold(rep)) {
      err << "invariant violated: min_weight=" << rep.min_weight << " max_row_sum_error=" << rep.max_row_sum_error
          << " min_normalizer=" << rep.min_normalizer << '\n';
      return kExitFailed;
    }
    return kExitOk;
  });
}

int cmd_compare(const RunConfig& config, std::ostream& out, std::ostream& err) {
  std::optional<AnalysisProblem> problem;
  const int rc = guarded(err, [&] {
    config.validate();
    problem = make_problem(load_or_generate(config), analysis_setup(config));
    return kExitOk;
  });
  if (rc != kExitOk) return rc;
  return compare_problem(*problem, config.output, out, err);
}

int cmd_bench(const RunConfig& config, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    config.validate();
    ScalingSetup s;
    s.flavor = config.flavor;
    s.k = config.k;
    s.r = config.r;
    s.dim = config.dim;
    s.seed = config.seed;
    s.include_dense = config.include_dense;
    std::vector<Eigen::Index> sizes = config.sizes;
    std::sort(sizes.begin(), sizes.end());
    const ScalingReport rep = scaling_sweep(sizes, s);
    with_output(config.output, out, [&](std::ostream& o) { write_scaling_csv(o, rep); });
    if (!rep.bound_holds()) {
      err << "linear bound violated\n";
      return kExitFailed;
    }
    return kExitOk;
  });
}

int cmd_hist(const RunConfig& config, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    config.validate();
    const AnalysisProblem p = make_problem(load_or_generate(config), analysis_setup(config));
    std::vector<DistanceHistogram> hists;
    hists.push_back(attention_histogram(p, Mechanism::kGha, config.bins));
    hists.push_back(attention_histogram(p, Mechanism::kLocal, config.bins));
    if (config.include_dense) hists.push_back(attention_histogram(p, Mechanism::kDense, config.bins));
    with_output(config.output, out, [&](std::ostream& o) { write_histogram_csv(o, hists); });
    for (const auto& h : hists) {
      err << to_string(h.mechanism) << ": knn_radius " << h.knn_radius << " mass beyond radius "
          << h.mass_beyond_radius_bins() << " total " << h.total_mass() << '\n';
    }
    return kExitOk;
  });
}

int cmd_heatmap(const RunConfig& config, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    config.validate();
    const AnalysisProblem p = make_problem(load_or_generate(config), analysis_setup(config));
    const Matrix w = mechanism_weights(p, config.mechanism);
    if (config.query < 0 || config.query >= w.rows()) throw ConfigError("--query out of range");
    with_output(config.output, out,
                [&](std::ostream& o) { write_heatmap_csv(o, p.positions, w.row(config.query).transpose()); });
    return kExitOk;
  });
}

int cmd_selftest(std::ostream& out, const GhaKernel& kernel) { return run_selftest(out, kernel); }

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Global hierarchical attention for 3D point sets", "gha"};
  app.set_config("--config", "", "Flat key=value file with the same keys as the long flags");
  app.require_subcommand(1);

  RunConfig c;
  std::string flavor = "point", mechanism = "gha", embedding = "relative";
  bool first_layer_only = false;
  app.add_option("--input", c.input, "Point cloud (text or GPC1 binary)");
  app.add_option("--output", c.output, "Output path (CSV commands default to stdout)");
  app.add_option("--params", c.params, "GHAB parameter file");
  app.add_option("--flavor", flavor, "point or voxel");
  app.add_option("--k", c.k, "Neighbors per token (point flavor)");
  app.add_option("--r", c.r, "Coarsening ratio (point flavor)");
  app.add_option("--voxel-size", c.voxel_size, "Voxel edge length in meters");
  app.add_option("--model-dim", c.model_dim, "Feature width c");
  app.add_option("--ffn-dim", c.ffn_dim, "FFN hidden width");
  app.add_option("--layers", c.n_layers, "GHA layers L");
  app.add_option("--heads", c.n_heads, "Attention heads");
  app.add_option("--embedding", embedding, "none, absolute or relative");
  app.add_flag("--first-layer-embedding", first_layer_only, "Inject positions only in the first layer");
  app.add_option("--seed", c.seed, "Master seed");
  app.add_option("--mechanism", mechanism, "gha, local or dense");
  app.add_option("--threads", c.threads, "Worker threads (fallback: GHA_THREADS)");
  app.add_option("--probe-cap", c.probe_cap, "Largest N for one-hot probing and dense attention");
  app.add_option("--points", c.points, "Generated cloud size when --input is absent");
  app.add_option("--dim", c.dim, "Q/K/V width for analysis commands");
  app.add_option("--bins", c.bins, "Histogram bins");
  app.add_option("--query", c.query, "Query token for heatmap");
  app.add_option("--sizes", c.sizes, "Comma-separated sweep sizes")->delimiter(',');
  app.add_flag("--include-dense", c.include_dense, "Add dense rows to bench / hist");

  auto* run_cmd = app.add_subcommand("run", "Run a seeded GHA block over a point cloud")->fallthrough();
  auto* compare_cmd = app.add_subcommand("compare", "GHA vs dense approximation report")->fallthrough();
  auto* bench_cmd = app.add_subcommand("bench", "Weight-count scaling sweep")->fallthrough();
  auto* hist_cmd = app.add_subcommand("hist", "Attention distance histograms")->fallthrough();
  auto* heatmap_cmd = app.add_subcommand("heatmap", "Effective attention of one query")->fallthrough();
  auto* selftest_cmd = app.add_subcommand("selftest", "Built-in verification suite")->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  const int rc = guarded(err, [&] {
    c.flavor = parse_flavor(flavor);
    c.mechanism = parse_mechanism(mechanism);
    c.embedding_mode = parse_embedding_mode(embedding);
    c.embed_every_layer = !first_layer_only;
    return kExitOk;
  });
  if (rc != kExitOk) return rc;
  if (c.threads > 0) set_thread_count(c.threads);

  if (run_cmd->parsed()) return cmd_run(c, out, err);
  if (compare_cmd->parsed()) return cmd_compare(c, out, err);
  if (bench_cmd->parsed()) return cmd_bench(c, out, err);
  if (hist_cmd->parsed()) return cmd_hist(c, out, err);
  if (heatmap_cmd->parsed()) return cmd_heatmap(c, out, err);
  if (selftest_cmd->parsed()) return cmd_selftest(out);
  return kExitUsage;
}

}  // namespace gha::cli
