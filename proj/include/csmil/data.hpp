#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "csmil/autodiff.hpp"

namespace csmil::data {

using ad::Tensor;

/// Edge length of one patch at the finest scale, in level-0 pixels.
inline constexpr double kPatchSize = 256.0;

struct ScaleId {
  int index = 0;
  std::string label;
};

/// The embeddings of one tissue location at every scale.
struct MultiScaleInstance {
  int location_id = 0;
  Eigen::Vector2d xy = Eigen::Vector2d::Zero();  ///< patch center, level-0 pixels
  Tensor vectors;                                ///< S x E, row s is scale s
};

struct PatientRecord {
  std::string patient_id;
  int label = 0;  ///< 0 control, 1 disease
  std::vector<MultiScaleInstance> instances;
};

struct Dataset {
  int dim = 0;
  std::vector<std::string> scale_labels;
  std::vector<PatientRecord> patients;

  int n_scales() const { return static_cast<int>(scale_labels.size()); }
  ScaleId scale(int index) const;
  /// Index of the scale labelled `label` (e.g. "5x"), or -1.
  int scale_index(const std::string& label) const;
  const PatientRecord& patient(const std::string& id) const;
  /// The patients named in `ids`, in the order given.
  Dataset subset(const std::vector<std::string>& ids) const;
};

bool operator==(const MultiScaleInstance& a, const MultiScaleInstance& b);
bool operator==(const PatientRecord& a, const PatientRecord& b);
bool operator==(const Dataset& a, const Dataset& b);

/// Checks dimension, scale-completeness and uniqueness invariants.
/// Throws IntegrityError or FormatError.
void validate(const Dataset& dataset);

/// Default magnification labels: 20x/10x/5x for three scales, s0..s{S-1} otherwise.
std::vector<std::string> default_scale_labels(int n_scales);

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticSpec {
  int patients_per_class = 20;
  int locations = 50;
  int dim = 32;
  int n_scales = 3;
  std::vector<std::string> scale_labels;  ///< empty: default_scale_labels(n_scales)
  int informative_scale = 1;
  double signal_fraction = 0.5;
  double signal_norm = 5.0;
  double noise = 1.0;
  int n_prototypes = 8;
  double prototype_scale = 1.0;
  std::uint64_t seed = 0;

  /// Throws ParameterError naming the offending field.
  void validate() const;
};

/// Where the class signal was planted.
struct GroundTruth {
  int informative_scale = 0;
  Eigen::VectorXd signal_direction;                          ///< unit vector u
  std::map<std::string, std::vector<int>> signal_locations;  ///< positives only, sorted

  bool is_planted(const std::string& patient_id, int location_id) const;
};

struct SyntheticDataset {
  Dataset dataset;
  GroundTruth truth;
};

/// Every embedding is a background prototype plus Gaussian noise; positive
/// patients receive signal_norm * u on a signal_fraction of their locations,
/// at the informative scale only.
SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

// ---------------------------------------------------------------------------
// On-disk format: manifest.json plus one CSV per patient.

std::filesystem::path save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& manifest);

void save_ground_truth(const GroundTruth& truth, const std::filesystem::path& file);
GroundTruth load_ground_truth(const std::filesystem::path& file);

/// printf-style %.17g, which round-trips every double.
std::string format_double(double v);
double parse_double(std::string_view s);

}  // namespace csmil::data
