#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "csmil/clustering.hpp"
#include "csmil/data.hpp"
#include "csmil/model.hpp"

namespace csmil::train {

using model::ModelConfig;
using model::ModelParams;

struct TrainConfig {
  int epochs = 100;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int bag_size = 8;
  int n_splits = 10;
  bool bag_resample = true;
  double test_fraction = 0.25;  ///< share of each class held out as the fixed test set
  int threads = 1;              ///< splits trained concurrently
  std::uint64_t seed = 0;

  /// Throws ConfigError.
  void validate() const;
};

struct Split {
  std::vector<std::string> train;
  std::vector<std::string> validation;
};

struct SplitPlan {
  std::vector<Split> splits;
  std::vector<std::string> test;
  bool degenerate = false;  ///< n_splits == 1: validation reuses the training patients

  /// All non-test patients, sorted.
  std::vector<std::string> cohort() const;
};

/// Holds out `test_fraction` of each class as test patients, then deals the
/// remaining patients round-robin (class by class, shuffled) into n_splits
/// disjoint validation folds. Throws ParameterError when a split would be empty.
SplitPlan make_splits(const data::Dataset& dataset, int n_splits, std::uint64_t seed,
                      double test_fraction = 0.0);

void save_split_plan(const SplitPlan& plan, const std::filesystem::path& file);
SplitPlan load_split_plan(const std::filesystem::path& file);

/// -log_probs[label] for a 2-class log-probability row.
double nll_loss(const Eigen::RowVector2d& log_probs, int label);
model::Var nll_loss(const model::Var& log_probs, int label);

/// Bag drawn from a stream that depends only on (seed, tag, patient).
cluster::Bag seeded_bag(const data::PatientRecord& patient, const std::vector<int>& clusters,
                        int k, int bag_size, std::uint64_t seed, const std::string& tag);

struct EpochRecord {
  int epoch = 0;  ///< 1-based
  double train_loss = 0;
  double val_loss = 0;
};

struct TrainedModel {
  ModelParams params;  ///< parameters at the selection epoch
  std::vector<EpochRecord> curve;
  int split_id = 0;
  int selection_epoch = 0;  ///< argmin of validation loss, earliest on ties
};

enum class BagUse { Gradient, Validation };
/// Observes every bag the loop builds; used to audit split hygiene.
using BagObserver = std::function<void(const std::string& patient_id, BagUse use)>;

/// Adam on one bag at a time; one bag per training patient per epoch.
TrainedModel train_one_split(const data::Dataset& dataset, const Split& split, int split_id,
                             const cluster::ClusterModel& clusters, const TrainConfig& cfg,
                             const ModelConfig& model_cfg, const BagObserver& observer = {});

std::vector<TrainedModel> train_all(const data::Dataset& dataset, const SplitPlan& plan,
                                    const cluster::ClusterModel& clusters, const TrainConfig& cfg,
                                    const ModelConfig& model_cfg);

/// CSV `epoch,train_loss,val_loss`.
void write_loss_curve(const std::filesystem::path& file, const std::vector<EpochRecord>& curve);

}  // namespace csmil::train
