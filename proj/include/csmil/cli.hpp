#pragma once

// Run configuration and the `csmil` subcommands.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "csmil/data.hpp"
#include "csmil/model.hpp"
#include "csmil/training.hpp"

namespace csmil::cli {

struct ClusterSection {
  std::string scale = "auto";  ///< auto, multi, a scale label or index
  int k = 8;
  int max_iter = 100;
  double tol = 1e-6;
};

struct ModelSection {
  std::string fusion = "cs-attn";  ///< cs-attn, concat, add, instance-pool, single-<label>
  std::string sharing = "shared";
  std::string activation = "relu";
  std::string pooling = "plain";
  int encoder_dim = 64;
  int attention_hidden = 32;
  std::string name;  ///< variant name; empty derives it from the fusion
};

struct EvalSection {
  std::string mode = "ensemble";
  int n_bootstrap = 1000;
  std::vector<std::string> variants;  ///< compare: empty means every evaluated variant
  std::string ref;                    ///< compare: empty means the first variant
};

struct RenderSection {
  std::vector<std::string> patients;  ///< empty means every test patient
  int passes = 1;                     ///< bags drawn per patient and model
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string dataset;  ///< manifest path; empty means <out-dir>/data/manifest.json
  data::SyntheticSpec data;
  ClusterSection cluster;
  train::TrainConfig train;
  ModelSection model;
  EvalSection eval;
  RenderSection render;

  /// Throws ConfigError on unknown keys or ill-typed values.
  static RunConfig from_json(const std::string& text);
  /// Canonical JSON without filesystem paths.
  std::string resolved_json() const;
  /// Throws ConfigError or ParameterError naming the field.
  void validate() const;

  /// Seed of one pipeline stage ("data", "cluster", "splits", "train", ...).
  std::uint64_t stage_seed(const std::string& stage) const;
};

RunConfig load_run_config(const std::filesystem::path& file);

std::string variant_name(const RunConfig& cfg);
model::ModelConfig model_config(const RunConfig& cfg, const data::Dataset& dataset);
/// Scale label ("multi" or a dataset label) the variant clusters on.
std::string clustering_label(const RunConfig& cfg, const data::Dataset& dataset);

/// Runs one command line. Exit codes: 0 success, 2 configuration or contract
/// error, 3 I/O error, 1 anything else.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace csmil::cli
