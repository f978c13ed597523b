#include "csmil/attention_map.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "csmil/error.hpp"

namespace csmil::render {

namespace fs = std::filesystem;

std::vector<AttentionRecord> normalize_per_scale(const std::vector<AttentionRecord>& records) {
  std::vector<AttentionRecord> out = records;
  if (records.empty()) return out;
  const Eigen::Index S = records.front().scores.size();
  for (const auto& r : records)
    if (r.scores.size() != S) throw DimensionError("attention records disagree on the number of scales");
  for (Eigen::Index s = 0; s < S; ++s) {
    double lo = records.front().scores(s), hi = lo;
    for (const auto& r : records) {
      lo = std::min(lo, r.scores(s));
      hi = std::max(hi, r.scores(s));
    }
    for (auto& r : out) r.scores(s) = hi > lo ? (r.scores(s) - lo) / (hi - lo) : 0.5;
  }
  return out;
}

std::vector<AttentionRecord> aggregate_visits(const std::vector<AttentionRecord>& records) {
  std::map<std::pair<std::string, int>, std::size_t> slot;
  std::vector<AttentionRecord> out;
  std::vector<int> visits;
  for (const auto& r : records) {
    const auto key = std::make_pair(r.patient_id, r.location_id);
    auto it = slot.find(key);
    if (it == slot.end()) {
      slot.emplace(key, out.size());
      out.push_back(r);
      visits.push_back(1);
    } else {
      out[it->second].scores += r.scores;
      ++visits[it->second];
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i].scores /= static_cast<double>(visits[i]);
  return out;
}

GridGeometry geometry_for(const data::PatientRecord& patient, double cell) {
  GridGeometry g;
  g.cell = cell;
  double max_x = 0, max_y = 0;
  for (const auto& inst : patient.instances) {
    max_x = std::max(max_x, inst.xy.x());
    max_y = std::max(max_y, inst.xy.y());
  }
  g.width = std::max(1, static_cast<int>(std::floor(max_x / cell)) + 1);
  g.height = std::max(1, static_cast<int>(std::floor(max_y / cell)) + 1);
  return g;
}

std::vector<Heatmap> render_heatmaps(const std::vector<AttentionRecord>& records,
                                     const GridGeometry& geometry) {
  if (geometry.width <= 0 || geometry.height <= 0 || !(geometry.cell > 0))
    throw GeometryError("grid geometry must have positive size");
  const Eigen::Index S = records.empty() ? 0 : records.front().scores.size();
  const std::size_t n_cells = static_cast<std::size_t>(geometry.width) * geometry.height;
  std::vector<std::size_t> cell_of;
  for (const auto& r : records) {
    if (r.scores.size() != S) throw DimensionError("attention records disagree on the number of scales");
    const double cx = std::floor((r.xy.x() - geometry.origin_x) / geometry.cell);
    const double cy = std::floor((r.xy.y() - geometry.origin_y) / geometry.cell);
    if (!(cx >= 0 && cy >= 0 && cx < geometry.width && cy < geometry.height)) {
      std::ostringstream msg;
      msg << "record " << r.patient_id << "/" << r.location_id << " at (" << r.xy.x() << ", "
          << r.xy.y() << ") lies outside the grid";
      throw GeometryError(msg.str());
    }
    cell_of.push_back(static_cast<std::size_t>(cy) * geometry.width + static_cast<std::size_t>(cx));
  }
  std::vector<Heatmap> maps;
  for (Eigen::Index s = 0; s < S; ++s) {
    std::vector<double> sum(n_cells, 0.0);
    std::vector<int> count(n_cells, 0);
    for (std::size_t i = 0; i < records.size(); ++i) {
      sum[cell_of[i]] += records[i].scores(s);
      ++count[cell_of[i]];
    }
    Heatmap m;
    m.scale = static_cast<int>(s);
    m.geometry = geometry;
    m.cells.resize(n_cells);
    for (std::size_t c = 0; c < n_cells; ++c)
      if (count[c] > 0) m.cells[c] = sum[c] / count[c];
    maps.push_back(std::move(m));
  }
  return maps;
}

std::string pgm_bytes(const Heatmap& map) {
  std::string out = "P5\n" + std::to_string(map.geometry.width) + " " +
                    std::to_string(map.geometry.height) + "\n255\n";
  for (const auto& c : map.cells) {
    if (!c) {
      out.push_back('\0');
      continue;
    }
    const double v = std::clamp(*c, 0.0, 1.0);
    out.push_back(static_cast<char>(1 + static_cast<int>(std::lround(v * 254.0))));
  }
  return out;
}

void write_pgm(const fs::path& file, const Heatmap& map) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write " + file.string());
  const std::string bytes = pgm_bytes(map);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void write_attention_csv(const fs::path& file, const std::vector<AttentionRecord>& records) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write " + file.string());
  const Eigen::Index S = records.empty() ? 0 : records.front().scores.size();
  out << "patient_id,location_id,x,y";
  for (Eigen::Index s = 0; s < S; ++s) out << ",a_" << s;
  out << "\n";
  for (const auto& r : records) {
    out << r.patient_id << "," << r.location_id << "," << data::format_double(r.xy.x()) << ","
        << data::format_double(r.xy.y());
    for (Eigen::Index s = 0; s < r.scores.size(); ++s) out << "," << data::format_double(r.scores(s));
    out << "\n";
  }
}

std::vector<AttentionRecord> read_attention_csv(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read " + file.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("patient_id,location_id,x,y", 0) != 0)
    throw FormatError(file.string() + ": unexpected header");
  std::vector<AttentionRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() < 4) throw FormatError(file.string() + ": malformed row '" + line + "'");
    AttentionRecord r;
    r.patient_id = f[0];
    r.location_id = static_cast<int>(data::parse_double(f[1]));
    r.xy = {data::parse_double(f[2]), data::parse_double(f[3])};
    r.scores.resize(static_cast<Eigen::Index>(f.size() - 4));
    for (std::size_t s = 4; s < f.size(); ++s) r.scores(static_cast<Eigen::Index>(s - 4)) = data::parse_double(f[s]);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace csmil::render
