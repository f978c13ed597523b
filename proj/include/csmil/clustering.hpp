#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "csmil/data.hpp"
#include "csmil/random.hpp"

namespace csmil::cluster {

using ad::Tensor;

struct KMeansResult {
  Tensor centroids;                 ///< k x D
  std::vector<int> labels;          ///< nearest centroid per point
  std::vector<double> sse_history;  ///< within-cluster SSE after each assignment step
  int iterations = 0;

  double sse() const { return sse_history.empty() ? 0.0 : sse_history.back(); }
};

/// Lloyd's algorithm with k-means++ seeding over the rows of `points`.
/// Stops when no centroid moves by `tol` or more, or after `max_iter` updates.
/// Empty clusters are re-seeded at the point farthest from its centroid.
KMeansResult kmeans(const Tensor& points, int k, std::uint64_t seed, int max_iter = 100,
                    double tol = 1e-6);

/// Sentinel scale choice: cluster on all scales concatenated.
inline constexpr int kMultiScale = -1;

struct ClusterModel {
  int k = 0;
  Tensor centroids;
  int clustering_scale = kMultiScale;
  std::string clustering_scale_label = "multi";
  std::map<std::pair<std::string, int>, int> assignment;  ///< (patient, location) -> cluster

  /// Cluster of every instance of `patient`: the stored assignment for fitted
  /// patients, nearest centroid otherwise.
  std::vector<int> assign(const data::PatientRecord& patient) const;
};

/// Vector clustered for `inst` under `scale_choice` (one row, or all rows concatenated).
Eigen::RowVectorXd clustering_vector(const data::MultiScaleInstance& inst, int scale_choice);

/// Fits k-means over every instance of every patient in `dataset`.
ClusterModel cluster_dataset(const data::Dataset& dataset, int scale_choice, int k,
                             std::uint64_t seed, int max_iter = 100, double tol = 1e-6);

/// Parses "5x", "multi" or a numeric index against the dataset's scale labels.
int parse_scale_choice(const data::Dataset& dataset, const std::string& choice);

void save_cluster_model(const ClusterModel& model, const std::filesystem::path& file);
ClusterModel load_cluster_model(const std::filesystem::path& file);

struct Bag {
  std::string patient_id;
  int label = 0;
  std::vector<data::MultiScaleInstance> instances;
  std::vector<int> cluster_of;  ///< parallel to instances

  int size() const { return static_cast<int>(instances.size()); }
};

/// Cluster-balanced bag of `bag_size` instances.
///
/// Each cluster gets bag_size / k instances (the remainder goes to randomly chosen
/// clusters); when bag_size < k, bag_size distinct populated clusters contribute one
/// instance each. Quota of clusters this patient lacks, or beyond what a cluster
/// holds, moves round-robin to populated clusters with spare instances. Sampling is
/// without replacement inside a cluster until the cluster is exhausted.
Bag assemble_bag(const data::PatientRecord& patient, const std::vector<int>& clusters, int k,
                 int bag_size, Rng& rng);
Bag assemble_bag(const data::PatientRecord& patient, const ClusterModel& model, int bag_size,
                 Rng& rng);

}  // namespace csmil::cluster
