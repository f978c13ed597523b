#include "csmil/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "csmil/error.hpp"
#include "csmil/random.hpp"
#include "json.hpp"

namespace csmil::data {

namespace fs = std::filesystem;
using nlohmann::json;

ScaleId Dataset::scale(int index) const {
  if (index < 0 || index >= n_scales())
    throw ParameterError("scale index " + std::to_string(index) + " out of range");
  return ScaleId{index, scale_labels[static_cast<std::size_t>(index)]};
}

int Dataset::scale_index(const std::string& label) const {
  for (int s = 0; s < n_scales(); ++s)
    if (scale_labels[static_cast<std::size_t>(s)] == label) return s;
  return -1;
}

const PatientRecord& Dataset::patient(const std::string& id) const {
  for (const auto& p : patients)
    if (p.patient_id == id) return p;
  throw ContractError("unknown patient '" + id + "'");
}

Dataset Dataset::subset(const std::vector<std::string>& ids) const {
  Dataset out{dim, scale_labels, {}};
  out.patients.reserve(ids.size());
  for (const auto& id : ids) out.patients.push_back(patient(id));
  return out;
}

bool operator==(const MultiScaleInstance& a, const MultiScaleInstance& b) {
  return a.location_id == b.location_id && a.xy == b.xy && a.vectors.rows() == b.vectors.rows() &&
         a.vectors.cols() == b.vectors.cols() && a.vectors == b.vectors;
}

bool operator==(const PatientRecord& a, const PatientRecord& b) {
  return a.patient_id == b.patient_id && a.label == b.label && a.instances == b.instances;
}

bool operator==(const Dataset& a, const Dataset& b) {
  return a.dim == b.dim && a.scale_labels == b.scale_labels && a.patients == b.patients;
}

std::vector<std::string> default_scale_labels(int n_scales) {
  if (n_scales == 3) return {"20x", "10x", "5x"};
  std::vector<std::string> out;
  for (int s = 0; s < n_scales; ++s) out.push_back("s" + std::to_string(s));
  return out;
}

namespace {

bool valid_patient_id(const std::string& id) {
  return !id.empty() && std::all_of(id.begin(), id.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '_' || c == '-' || c == '.';
  });
}

}  // namespace

void validate(const Dataset& dataset) {
  const int S = dataset.n_scales();
  if (S < 1) throw FormatError("dataset has no scales");
  if (dataset.dim < 1) throw FormatError("dataset has embedding dimension < 1");
  std::set<std::string> ids;
  for (const auto& p : dataset.patients) {
    if (!ids.insert(p.patient_id).second)
      throw IntegrityError("duplicate patient '" + p.patient_id + "'");
    if (p.label != 0 && p.label != 1)
      throw IntegrityError("patient '" + p.patient_id + "' has label outside {0,1}");
    if (p.instances.empty())
      throw IntegrityError("patient '" + p.patient_id + "' has no instances");
    std::set<int> locs;
    for (const auto& inst : p.instances) {
      if (!locs.insert(inst.location_id).second)
        throw IntegrityError("duplicate location " + std::to_string(inst.location_id) +
                             " for patient '" + p.patient_id + "'");
      if (inst.vectors.rows() != S)
        throw IntegrityError("patient '" + p.patient_id + "' location " +
                             std::to_string(inst.location_id) + " has " +
                             std::to_string(inst.vectors.rows()) + " scales, expected " +
                             std::to_string(S));
      if (inst.vectors.cols() != dataset.dim)
        throw FormatError("patient '" + p.patient_id + "' location " +
                          std::to_string(inst.location_id) + " has dimension " +
                          std::to_string(inst.vectors.cols()) + ", expected " +
                          std::to_string(dataset.dim));
      if (!inst.vectors.allFinite())
        throw FormatError("non-finite embedding for patient '" + p.patient_id + "'");
    }
  }
}

// ---------------------------------------------------------------------------

void SyntheticSpec::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ParameterError("synthetic spec field '" + field + "' " + why);
  };
  if (patients_per_class < 1) fail("patients_per_class", "must be >= 1");
  if (locations < 1) fail("locations", "must be >= 1");
  if (dim < 2) fail("dim", "must be >= 2");
  if (n_scales < 1) fail("n_scales", "must be >= 1");
  if (!scale_labels.empty() && static_cast<int>(scale_labels.size()) != n_scales)
    fail("scale_labels", "must list exactly n_scales labels");
  if (informative_scale < 0 || informative_scale >= n_scales)
    fail("informative_scale", "must index a scale");
  if (!(signal_fraction > 0.0 && signal_fraction <= 1.0))
    fail("signal_fraction", "must lie in (0, 1]");
  if (signal_fraction * locations < 1.0) fail("signal_fraction", "times locations must be >= 1");
  if (!(signal_norm >= 0.0)) fail("signal_norm", "must be >= 0");
  if (!(noise >= 0.0)) fail("noise", "must be >= 0");
  if (n_prototypes < 1) fail("n_prototypes", "must be >= 1");
  if (!(prototype_scale >= 0.0)) fail("prototype_scale", "must be >= 0");
}

bool GroundTruth::is_planted(const std::string& patient_id, int location_id) const {
  auto it = signal_locations.find(patient_id);
  if (it == signal_locations.end()) return false;
  return std::binary_search(it->second.begin(), it->second.end(), location_id);
}

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const int S = spec.n_scales, E = spec.dim;
  Rng world(derive_seed(spec.seed, "world"));
  std::normal_distribution<double> normal(0.0, 1.0);

  Eigen::VectorXd u(E);
  do {
    for (int i = 0; i < E; ++i) u(i) = normal(world);
  } while (u.norm() < 1e-12);
  u.normalize();

  // prototypes[c] is S x E: one background pattern per scale
  std::vector<Tensor> prototypes;
  for (int c = 0; c < spec.n_prototypes; ++c) {
    Tensor p(S, E);
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = spec.prototype_scale * normal(world);
    prototypes.push_back(p);
  }

  SyntheticDataset out;
  out.dataset.dim = E;
  out.dataset.scale_labels =
      spec.scale_labels.empty() ? default_scale_labels(S) : spec.scale_labels;
  out.truth.informative_scale = spec.informative_scale;
  out.truth.signal_direction = u;

  const int n_signal = std::max(1, static_cast<int>(std::lround(spec.signal_fraction * spec.locations)));
  const int grid_w = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(spec.locations))));

  for (int label = 0; label <= 1; ++label) {
    for (int i = 0; i < spec.patients_per_class; ++i) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%s_%03d", label ? "pos" : "neg", i);
      PatientRecord patient{buf, label, {}};
      Rng rng(derive_seed(spec.seed, patient.patient_id));
      std::uniform_int_distribution<int> pick(0, spec.n_prototypes - 1);

      std::vector<int> planted;
      if (label == 1) {
        std::vector<int> order(static_cast<std::size_t>(spec.locations));
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        planted.assign(order.begin(), order.begin() + n_signal);
        std::sort(planted.begin(), planted.end());
      }

      for (int loc = 0; loc < spec.locations; ++loc) {
        MultiScaleInstance inst;
        inst.location_id = loc;
        inst.xy = {(loc % grid_w) * kPatchSize + kPatchSize / 2,
                   (loc / grid_w) * kPatchSize + kPatchSize / 2};
        inst.vectors = prototypes[static_cast<std::size_t>(pick(rng))];
        for (Eigen::Index k = 0; k < inst.vectors.size(); ++k)
          inst.vectors.data()[k] += spec.noise * normal(rng);
        if (std::binary_search(planted.begin(), planted.end(), loc))
          inst.vectors.row(spec.informative_scale) += spec.signal_norm * u.transpose();
        patient.instances.push_back(std::move(inst));
      }
      if (label == 1) out.truth.signal_locations[patient.patient_id] = planted;
      out.dataset.patients.push_back(std::move(patient));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(std::string_view s) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw FormatError("cannot parse number '" + std::string(s) + "'");
  return v;
}

namespace {

int parse_int(std::string_view s) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw FormatError("cannot parse integer '" + std::string(s) + "'");
  return v;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string csv_header(int dim) {
  std::string h = "location_id,scale,x,y";
  for (int e = 0; e < dim; ++e) h += ",e" + std::to_string(e);
  return h;
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + file.string());
  os << text;
  if (!os) throw IoError("failed writing " + file.string());
}

std::string read_text(const fs::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw IntegrityError("cannot read " + file.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

fs::path save_dataset(const Dataset& dataset, const fs::path& dir) {
  validate(dataset);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());

  json manifest;
  manifest["format"] = "csmil-dataset";
  manifest["version"] = 1;
  manifest["dim"] = dataset.dim;
  manifest["n_scales"] = dataset.n_scales();
  manifest["scale_labels"] = dataset.scale_labels;
  manifest["patients"] = json::array();
  for (const auto& p : dataset.patients) {
    if (!valid_patient_id(p.patient_id))
      throw ContractError("patient id '" + p.patient_id + "' is not filename-safe");
    const std::string file = p.patient_id + ".csv";
    std::string text = csv_header(dataset.dim) + "\n";
    auto sorted = p.instances;
    std::sort(sorted.begin(), sorted.end(),
              [](const auto& a, const auto& b) { return a.location_id < b.location_id; });
    for (const auto& inst : sorted) {
      for (int s = 0; s < dataset.n_scales(); ++s) {
        text += std::to_string(inst.location_id) + "," + std::to_string(s) + "," +
                format_double(inst.xy.x()) + "," + format_double(inst.xy.y());
        for (int e = 0; e < dataset.dim; ++e) text += "," + format_double(inst.vectors(s, e));
        text += "\n";
      }
    }
    write_text(dir / file, text);
    manifest["patients"].push_back({{"patient_id", p.patient_id},
                                    {"label", p.label},
                                    {"file", file},
                                    {"n_locations", p.instances.size()},
                                    {"n_scales", dataset.n_scales()},
                                    {"dim", dataset.dim},
                                    {"scale_labels", dataset.scale_labels}});
  }
  const fs::path path = dir / "manifest.json";
  write_text(path, manifest.dump(2) + "\n");
  return path;
}

namespace {

PatientRecord load_patient(const fs::path& file, const std::string& id, int label, int S, int E,
                           std::size_t expected_locations) {
  if (!fs::exists(file)) throw IntegrityError("embedding file missing: " + file.string());
  const std::string text = read_text(file);
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != csv_header(E))
    throw FormatError(file.string() + ": header does not match dimension " + std::to_string(E));

  std::map<int, MultiScaleInstance> by_loc;
  std::map<int, std::vector<bool>> seen;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fields = split_commas(line);
    if (static_cast<int>(fields.size()) != 4 + E)
      throw FormatError(file.string() + ":" + std::to_string(lineno) + ": expected " +
                        std::to_string(4 + E) + " fields, got " + std::to_string(fields.size()));
    const int loc = parse_int(fields[0]);
    const int s = parse_int(fields[1]);
    if (s < 0 || s >= S)
      throw FormatError(file.string() + ":" + std::to_string(lineno) + ": scale " +
                        std::to_string(s) + " out of range");
    Eigen::Vector2d xy(parse_double(fields[2]), parse_double(fields[3]));
    auto [it, fresh] = by_loc.try_emplace(loc);
    auto& flags = seen[loc];
    if (fresh) {
      it->second.location_id = loc;
      it->second.xy = xy;
      it->second.vectors = Tensor::Zero(S, E);
      flags.assign(static_cast<std::size_t>(S), false);
    } else if (it->second.xy != xy) {
      throw IntegrityError("patient '" + id + "' location " + std::to_string(loc) +
                           " has inconsistent coordinates across scales");
    }
    if (flags[static_cast<std::size_t>(s)])
      throw IntegrityError("patient '" + id + "' location " + std::to_string(loc) +
                           " repeats scale " + std::to_string(s));
    flags[static_cast<std::size_t>(s)] = true;
    for (int e = 0; e < E; ++e)
      it->second.vectors(s, e) = parse_double(fields[static_cast<std::size_t>(4 + e)]);
  }

  PatientRecord p{id, label, {}};
  for (auto& [loc, inst] : by_loc) {
    const auto& flags = seen[loc];
    if (std::find(flags.begin(), flags.end(), false) != flags.end())
      throw IntegrityError("patient '" + id + "' location " + std::to_string(loc) +
                           " is missing a scale");
    p.instances.push_back(std::move(inst));
  }
  if (p.instances.size() != expected_locations)
    throw IntegrityError("patient '" + id + "' has " + std::to_string(p.instances.size()) +
                         " locations, manifest says " + std::to_string(expected_locations));
  return p;
}

}  // namespace

Dataset load_dataset(const fs::path& manifest_path) {
  if (!fs::exists(manifest_path)) throw IntegrityError("manifest missing: " + manifest_path.string());
  json m;
  try {
    m = json::parse(read_text(manifest_path));
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  const fs::path dir = manifest_path.parent_path();
  Dataset ds;
  try {
    if (m.at("format").get<std::string>() != "csmil-dataset" || m.at("version").get<int>() != 1)
      throw FormatError(manifest_path.string() + ": unsupported manifest format");
    ds.dim = m.at("dim").get<int>();
    ds.scale_labels = m.at("scale_labels").get<std::vector<std::string>>();
    if (m.at("n_scales").get<int>() != ds.n_scales())
      throw FormatError("manifest n_scales does not match scale_labels");
    for (const auto& entry : m.at("patients")) {
      const auto id = entry.at("patient_id").get<std::string>();
      if (entry.at("dim").get<int>() != ds.dim)
        throw FormatError("patient '" + id + "' dimension differs from dataset");
      if (entry.at("n_scales").get<int>() != ds.n_scales() ||
          entry.at("scale_labels").get<std::vector<std::string>>() != ds.scale_labels)
        throw FormatError("patient '" + id + "' scales differ from dataset");
      ds.patients.push_back(load_patient(dir / entry.at("file").get<std::string>(), id,
                                         entry.at("label").get<int>(), ds.n_scales(), ds.dim,
                                         entry.at("n_locations").get<std::size_t>()));
    }
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  validate(ds);
  return ds;
}

void save_ground_truth(const GroundTruth& truth, const fs::path& file) {
  json j;
  j["informative_scale"] = truth.informative_scale;
  std::vector<double> u(truth.signal_direction.data(),
                        truth.signal_direction.data() + truth.signal_direction.size());
  j["signal_direction"] = json::array();
  for (double v : u) j["signal_direction"].push_back(v);
  j["signal_locations"] = truth.signal_locations;
  write_text(file, j.dump(2) + "\n");
}

GroundTruth load_ground_truth(const fs::path& file) {
  GroundTruth t;
  try {
    json j = json::parse(read_text(file));
    t.informative_scale = j.at("informative_scale").get<int>();
    auto u = j.at("signal_direction").get<std::vector<double>>();
    t.signal_direction = Eigen::Map<Eigen::VectorXd>(u.data(), static_cast<Eigen::Index>(u.size()));
    t.signal_locations = j.at("signal_locations").get<std::map<std::string, std::vector<int>>>();
  } catch (const json::exception& e) {
    throw FormatError(file.string() + ": " + e.what());
  }
  return t;
}

}  // namespace csmil::data
