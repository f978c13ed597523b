#include <cmath>
#include <set>

#include "csmil/data.hpp"
#include "csmil/error.hpp"
#include "doctest.h"
#include "scratch.hpp"

using namespace csmil;
using namespace csmil::data;
namespace fs = std::filesystem;
using csmil::testing::scratch_dir;
using csmil::testing::slurp;
using csmil::testing::spit;

namespace {

SyntheticSpec small_spec(std::uint64_t seed = 0) {
  SyntheticSpec s;
  s.patients_per_class = 4;
  s.locations = 10;
  s.dim = 6;
  s.seed = seed;
  return s;
}

std::string tree_text(const fs::path& dir) {
  std::string all;
  std::set<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) names.insert(e.path().filename().string());
  for (const auto& n : names) all += n + "\n" + slurp(dir / n);
  return all;
}

// Projection of scale-s vectors on u, split by class.
std::pair<std::vector<double>, std::vector<double>> projections(const SyntheticDataset& d, int s) {
  std::vector<double> pos, neg;
  for (const auto& p : d.dataset.patients)
    for (const auto& inst : p.instances)
      (p.label ? pos : neg).push_back(inst.vectors.row(s).dot(d.truth.signal_direction.transpose()));
  return {pos, neg};
}

double mean(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m += x;
  return m / static_cast<double>(v.size());
}

double variance(const std::vector<double>& v) {
  const double m = mean(v);
  double acc = 0;
  for (double x : v) acc += (x - m) * (x - m);
  return acc / static_cast<double>(v.size() - 1);
}

}  // namespace

TEST_CASE("default synthetic dataset has two classes and three scales") {
  const auto d = generate_synthetic(SyntheticSpec{});
  CHECK(d.dataset.n_scales() == 3);
  CHECK(d.dataset.scale_labels == std::vector<std::string>{"20x", "10x", "5x"});
  CHECK(d.dataset.dim == 32);
  int pos = 0, neg = 0;
  for (const auto& p : d.dataset.patients) {
    (p.label ? pos : neg)++;
    CHECK(p.instances.size() == 50);
    for (const auto& inst : p.instances) {
      CHECK(inst.vectors.rows() == 3);
      CHECK(inst.vectors.cols() == 32);
    }
  }
  CHECK(pos == 20);
  CHECK(neg == 20);
  CHECK(d.truth.signal_direction.norm() == doctest::Approx(1.0).epsilon(1e-12));
  for (const auto& [pid, locs] : d.truth.signal_locations) CHECK(locs.size() == 25);
}

TEST_CASE("same spec and seed gives byte-identical datasets") {
  const auto a = generate_synthetic(small_spec(7));
  const auto b = generate_synthetic(small_spec(7));
  CHECK(a.dataset == b.dataset);
  const auto da = scratch_dir("data_det_a"), db = scratch_dir("data_det_b");
  save_dataset(a.dataset, da);
  save_dataset(b.dataset, db);
  CHECK(tree_text(da) == tree_text(db));
  CHECK_FALSE(generate_synthetic(small_spec(8)).dataset == a.dataset);
}

TEST_CASE("noise-free full signal separates the classes at the informative scale") {
  SyntheticSpec s = small_spec(3);
  s.signal_fraction = 1.0;
  s.noise = 0.0;
  const auto d = generate_synthetic(s);
  // Without noise every vector is a prototype, plus the signal for positives at s*.
  // Removing the signal must land every planted vector on a negative's prototype set.
  std::set<std::vector<double>> protos;
  for (const auto& p : d.dataset.patients)
    if (p.label == 0)
      for (const auto& inst : p.instances) {
        const Eigen::RowVectorXd v = inst.vectors.row(s.informative_scale);
        protos.insert({v.data(), v.data() + v.size()});
      }
  CHECK(protos.size() <= static_cast<std::size_t>(s.n_prototypes));
  double min_pos = 1e300, max_neg = -1e300;
  for (const auto& p : d.dataset.patients) {
    double margin = 0;
    for (const auto& inst : p.instances) {
      const Eigen::RowVectorXd v = inst.vectors.row(s.informative_scale);
      const Eigen::RowVectorXd back = v - s.signal_norm * d.truth.signal_direction.transpose();
      if (p.label == 1) {
        bool found = false;
        for (const auto& q : protos) {
          Eigen::Map<const Eigen::RowVectorXd> qv(q.data(), static_cast<Eigen::Index>(q.size()));
          found = found || (qv - back).norm() < 1e-12;
        }
        CHECK(found);
      }
      margin += v.dot(d.truth.signal_direction.transpose());
    }
    margin /= static_cast<double>(p.instances.size());
    if (p.label) min_pos = std::min(min_pos, margin);
    else max_neg = std::max(max_neg, margin);
  }
  CHECK(min_pos > max_neg);
}

TEST_CASE("signal lives only at the informative scale") {
  SyntheticSpec s;
  s.seed = 11;
  const auto d = generate_synthetic(s);
  for (int scale = 0; scale < s.n_scales; ++scale) {
    const auto [pos, neg] = projections(d, scale);
    const double se = std::sqrt(variance(pos) / pos.size() + variance(neg) / neg.size());
    const double gap = mean(pos) - mean(neg);
    if (scale == s.informative_scale) CHECK(gap >= 3 * se);
    else CHECK(std::abs(gap) < 3 * se);
  }
}

TEST_CASE("zero signal norm leaves the classes indistinguishable") {
  SyntheticSpec s;
  s.signal_norm = 0;
  s.seed = 5;
  const auto d = generate_synthetic(s);
  const auto [pos, neg] = projections(d, s.informative_scale);
  const double se = std::sqrt(variance(pos) / pos.size() + variance(neg) / neg.size());
  CHECK(std::abs(mean(pos) - mean(neg)) < 3 * se);
}

TEST_CASE("spec validation names the offending field") {
  auto fails_on = [](SyntheticSpec s, const std::string& field) {
    try {
      s.validate();
    } catch (const ParameterError& e) {
      return std::string(e.what()).find(field) != std::string::npos;
    }
    return false;
  };
  SyntheticSpec s;
  s.dim = 1;
  CHECK(fails_on(s, "dim"));
  s = {};
  s.locations = 0;
  CHECK(fails_on(s, "locations"));
  s = {};
  s.signal_fraction = 0;
  CHECK(fails_on(s, "signal_fraction"));
  s = {};
  s.locations = 3;
  s.signal_fraction = 0.2;
  CHECK(fails_on(s, "signal_fraction"));
  s = {};
  s.informative_scale = 3;
  CHECK(fails_on(s, "informative_scale"));
  CHECK_THROWS_AS(generate_synthetic(s), ParameterError);
}

TEST_CASE("save and load round-trip") {
  const auto d = generate_synthetic(small_spec(1));
  const auto dir = scratch_dir("data_roundtrip");
  const auto manifest = save_dataset(d.dataset, dir);
  const auto first = tree_text(dir);
  const Dataset loaded = load_dataset(manifest);
  CHECK(loaded == d.dataset);

  // Scale completeness: S rows per location in every file.
  for (const auto& p : d.dataset.patients) {
    const std::string text = slurp(dir / (p.patient_id + ".csv"));
    const auto rows = std::count(text.begin(), text.end(), '\n') - 1;
    CHECK(rows == static_cast<long>(3 * p.instances.size()));
  }

  const auto dir2 = scratch_dir("data_roundtrip2");
  save_dataset(loaded, dir2);
  CHECK(tree_text(dir2) == first);
  // Overwriting in place is idempotent.
  save_dataset(loaded, dir);
  CHECK(tree_text(dir) == first);
}

TEST_CASE("empty dataset saves a valid manifest") {
  Dataset d;
  d.dim = 4;
  d.scale_labels = default_scale_labels(3);
  const auto dir = scratch_dir("data_empty");
  const auto loaded = load_dataset(save_dataset(d, dir));
  CHECK(loaded.patients.empty());
  CHECK(loaded.dim == 4);
}

TEST_CASE("clinical-width embeddings load and validate") {
  SyntheticSpec s;
  s.patients_per_class = 1;
  s.locations = 2;
  s.dim = 2048;
  const auto d = generate_synthetic(s);
  const auto dir = scratch_dir("data_2048");
  const auto loaded = load_dataset(save_dataset(d.dataset, dir));
  CHECK(loaded.dim == 2048);
  CHECK(loaded == d.dataset);
}

TEST_CASE("load failures are typed") {
  const auto d = generate_synthetic(small_spec(2));
  const auto dir = scratch_dir("data_corrupt");
  const auto manifest = save_dataset(d.dataset, dir);
  const std::string pid = d.dataset.patients.front().patient_id;
  const fs::path csv = dir / (pid + ".csv");
  const std::string original = slurp(csv);

  SUBCASE("absent embedding file") {
    fs::remove(csv);
    CHECK_THROWS_AS(load_dataset(manifest), IntegrityError);
  }
  SUBCASE("missing scale names patient and location") {
    // Drop the second data row: location 0 at scale 1.
    std::vector<std::string> lines;
    std::stringstream ss(original);
    for (std::string l; std::getline(ss, l);) lines.push_back(l);
    const std::string dropped = lines[2];
    lines.erase(lines.begin() + 2);
    std::string text;
    for (const auto& l : lines) text += l + "\n";
    spit(csv, text);
    const std::string loc = dropped.substr(0, dropped.find(','));
    try {
      load_dataset(manifest);
      FAIL("expected an integrity error");
    } catch (const IntegrityError& e) {
      const std::string msg = e.what();
      CHECK(msg.find(pid) != std::string::npos);
      CHECK(msg.find("location " + loc) != std::string::npos);
    }
  }
  SUBCASE("dimension mismatch") {
    std::string text = slurp(manifest);
    const auto at = text.find("\"dim\": 6");
    REQUIRE(at != std::string::npos);
    text.replace(at, 8, "\"dim\": 7");
    spit(manifest, text);
    CHECK_THROWS_AS(load_dataset(manifest), FormatError);
  }
  SUBCASE("short row") {
    std::string text = original;
    const auto end = text.rfind(',');
    text = text.substr(0, end) + "\n";
    spit(csv, text);
    CHECK_THROWS_AS(load_dataset(manifest), FormatError);
  }
}

TEST_CASE("doubles round-trip through text") {
  for (double v : {0.1, -1e-300, 1.0 / 3.0, 6.02214076e23, -0.0}) CHECK(parse_double(format_double(v)) == v);
}

TEST_CASE("ground truth round-trip") {
  const auto d = generate_synthetic(small_spec(4));
  const auto dir = scratch_dir("data_truth");
  save_ground_truth(d.truth, dir / "truth.json");
  const auto t = load_ground_truth(dir / "truth.json");
  CHECK(t.informative_scale == d.truth.informative_scale);
  CHECK(t.signal_locations == d.truth.signal_locations);
  CHECK((t.signal_direction - d.truth.signal_direction).norm() == 0.0);
  const auto& [pid, locs] = *d.truth.signal_locations.begin();
  CHECK(t.is_planted(pid, locs.front()));
  CHECK_FALSE(t.is_planted("neg_000", locs.front()));
}
