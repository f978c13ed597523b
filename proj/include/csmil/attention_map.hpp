#pragma once

// Per-scale normalization of cross-scale attention and grayscale heatmaps.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "csmil/attention_record.hpp"
#include "csmil/data.hpp"

namespace csmil::render {

/// Min-max rescales each scale column to [0, 1]; a constant column becomes 0.5.
std::vector<AttentionRecord> normalize_per_scale(const std::vector<AttentionRecord>& records);

/// One record per (patient, location): the mean over repeated visits, in
/// first-seen order.
std::vector<AttentionRecord> aggregate_visits(const std::vector<AttentionRecord>& records);

struct GridGeometry {
  double origin_x = 0;
  double origin_y = 0;
  double cell = data::kPatchSize;
  int width = 0;
  int height = 0;
};

/// Smallest grid anchored at the origin that covers every location of `patient`.
GridGeometry geometry_for(const data::PatientRecord& patient, double cell = data::kPatchSize);

struct Heatmap {
  int scale = 0;
  GridGeometry geometry;
  std::vector<std::optional<double>> cells;  ///< row-major; empty means no data

  const std::optional<double>& at(int col, int row) const {
    return cells.at(static_cast<std::size_t>(row) * geometry.width + col);
  }
};

/// One heatmap per scale; a cell holds the mean score of the records inside it.
/// Throws GeometryError naming the record when a coordinate falls outside.
std::vector<Heatmap> render_heatmaps(const std::vector<AttentionRecord>& records,
                                     const GridGeometry& geometry);

/// Binary graymap bytes: 0 for no data, 1 + round(254 v) otherwise.
std::string pgm_bytes(const Heatmap& map);
void write_pgm(const std::filesystem::path& file, const Heatmap& map);

/// CSV `patient_id,location_id,x,y,a_0,...,a_{S-1}`.
void write_attention_csv(const std::filesystem::path& file, const std::vector<AttentionRecord>& records);
std::vector<AttentionRecord> read_attention_csv(const std::filesystem::path& file);

}  // namespace csmil::render
