#include <cmath>

#include "csmil/attention_map.hpp"
#include "csmil/error.hpp"
#include "csmil/training.hpp"
#include "doctest.h"
#include "scratch.hpp"

using namespace csmil;
using namespace csmil::render;

namespace {

AttentionRecord rec(const std::string& pid, int loc, double x, double y, std::vector<double> a) {
  AttentionRecord r;
  r.patient_id = pid;
  r.location_id = loc;
  r.xy = {x, y};
  r.scores = Eigen::Map<Eigen::VectorXd>(a.data(), static_cast<Eigen::Index>(a.size()));
  return r;
}

GridGeometry grid(int w, int h) {
  GridGeometry g;
  g.width = w;
  g.height = h;
  return g;
}

}  // namespace

TEST_CASE("per-scale normalization") {
  const auto n = normalize_per_scale({rec("p", 0, 0, 0, {0.2, 0.7}), rec("p", 1, 0, 0, {0.5, 0.7}),
                                      rec("p", 2, 0, 0, {0.8, 0.7})});
  REQUIRE(n.size() == 3);
  CHECK(n[0].scores(0) == doctest::Approx(0.0));
  CHECK(n[1].scores(0) == doctest::Approx(0.5));
  CHECK(n[2].scores(0) == doctest::Approx(1.0));
  for (const auto& r : n) CHECK(r.scores(1) == 0.5);
  CHECK(n[1].location_id == 1);
  CHECK(normalize_per_scale({}).empty());
}

TEST_CASE("normalization preserves the ranking within a scale") {
  std::vector<AttentionRecord> rs;
  for (int i = 0; i < 20; ++i) rs.push_back(rec("p", i, 0, 0, {std::sin(i * 1.7), std::cos(i * 0.3)}));
  const auto n = normalize_per_scale(rs);
  for (int s = 0; s < 2; ++s)
    for (std::size_t i = 0; i < rs.size(); ++i)
      for (std::size_t j = 0; j < rs.size(); ++j)
        if (rs[i].scores(s) < rs[j].scores(s)) CHECK(n[i].scores(s) < n[j].scores(s));
}

TEST_CASE("repeated visits are averaged") {
  const auto a = aggregate_visits({rec("p", 4, 0, 0, {0.2}), rec("q", 4, 0, 0, {0.9}), rec("p", 4, 0, 0, {0.6}),
                                   rec("p", 1, 0, 0, {0.3})});
  REQUIRE(a.size() == 3);
  CHECK(a[0].patient_id == "p");
  CHECK(a[0].location_id == 4);
  CHECK(a[0].scores(0) == doctest::Approx(0.4));
  CHECK(a[1].patient_id == "q");
  CHECK(a[2].location_id == 1);
}

TEST_CASE("grid geometry covers every location") {
  data::PatientRecord p;
  for (auto [x, y] : {std::pair{128.0, 128.0}, {640.0, 128.0}, {128.0, 384.0}}) {
    data::MultiScaleInstance inst;
    inst.xy = {x, y};
    p.instances.push_back(inst);
  }
  const auto g = geometry_for(p);
  CHECK(g.width == 3);
  CHECK(g.height == 2);
  CHECK(g.cell == 256.0);
}

TEST_CASE("heatmap cells") {
  SUBCASE("one record lands in its cell") {
    const auto maps = render_heatmaps(normalize_per_scale({rec("p", 0, 300, 10, {0.4, 0.6})}), grid(2, 1));
    REQUIRE(maps.size() == 2);
    CHECK_FALSE(maps[0].at(0, 0).has_value());
    CHECK(*maps[0].at(1, 0) == 0.5);
    CHECK(maps[1].scale == 1);
  }
  SUBCASE("two records in one cell are averaged") {
    const auto maps = render_heatmaps({rec("p", 0, 10, 10, {0.0}), rec("p", 1, 20, 20, {1.0})}, grid(1, 1));
    CHECK(*maps[0].at(0, 0) == 0.5);
  }
  SUBCASE("out of bounds names the record") {
    try {
      render_heatmaps({rec("pos_003", 17, 600, 10, {0.1})}, grid(2, 2));
      FAIL("expected a geometry error");
    } catch (const GeometryError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("pos_003") != std::string::npos);
      CHECK(msg.find("17") != std::string::npos);
    }
    CHECK_THROWS_AS(render_heatmaps({rec("p", 0, -1, 10, {0.1})}, grid(2, 2)), GeometryError);
  }
}

TEST_CASE("graymap bytes") {
  const auto maps = render_heatmaps({rec("p", 0, 10, 10, {0.0}), rec("p", 1, 300, 10, {1.0}),
                                     rec("p", 2, 300, 300, {0.5})},
                                    grid(2, 2));
  const std::string bytes = pgm_bytes(maps[0]);
  const std::string header = "P5\n2 2\n255\n";
  REQUIRE(bytes.size() == header.size() + 4);
  CHECK(bytes.substr(0, header.size()) == header);
  const auto px = [&](int i) { return static_cast<unsigned char>(bytes[header.size() + static_cast<std::size_t>(i)]); };
  CHECK(px(0) == 1);
  CHECK(px(1) == 255);
  CHECK(px(2) == 0);  // no data
  CHECK(px(3) == 128);

  const auto dir = csmil::testing::scratch_dir("pgm");
  write_pgm(dir / "a.pgm", maps[0]);
  write_pgm(dir / "b.pgm", maps[0]);
  CHECK(csmil::testing::slurp(dir / "a.pgm") == bytes);
  CHECK(csmil::testing::slurp(dir / "b.pgm") == bytes);
}

TEST_CASE("attention CSV round-trip") {
  const std::vector<AttentionRecord> rs = {rec("pos_000", 3, 128, 384, {0.1, 0.7, 0.2}),
                                           rec("pos_001", 0, 128, 128, {1.0 / 3, 1.0 / 3, 1.0 / 3})};
  const auto dir = csmil::testing::scratch_dir("attn_csv");
  write_attention_csv(dir / "a.csv", rs);
  const std::string text = csmil::testing::slurp(dir / "a.csv");
  CHECK(text.rfind("patient_id,location_id,x,y,a_0,a_1,a_2\n", 0) == 0);
  const auto back = read_attention_csv(dir / "a.csv");
  REQUIRE(back.size() == 2);
  CHECK(back[1].patient_id == "pos_001");
  CHECK(back[0].xy == rs[0].xy);
  CHECK(back[1].scores == rs[1].scores);
  CHECK_THROWS_AS(read_attention_csv(dir / "none.csv"), IoError);
}

TEST_CASE("planted instances light up at the informative scale") {
  data::SyntheticSpec spec;
  spec.patients_per_class = 10;
  spec.locations = 20;
  spec.dim = 8;
  spec.seed = 12;
  const auto synth = data::generate_synthetic(spec);
  const auto clusters = cluster::cluster_dataset(synth.dataset, 2, 4, 1);
  model::ModelConfig m;
  m.dim = 8;
  m.clusters = 4;
  m.encoder_dim = 16;
  m.attention_hidden = 8;
  train::TrainConfig t;
  t.epochs = 30;
  t.learning_rate = 1e-3;
  t.n_splits = 2;
  t.seed = 4;
  const auto plan = train::make_splits(synth.dataset, 2, 3);
  const auto trained = train::train_one_split(synth.dataset, plan.splits[0], 0, clusters, t, m);

  double planted[3] = {0, 0, 0};
  int n = 0;
  for (const auto& p : synth.dataset.patients) {
    if (p.label != 1) continue;
    const auto bag = train::seeded_bag(p, clusters.assign(p), 4, 16, 1, "render");
    const auto records = aggregate_visits(model::predict_bag(bag, trained.params, m).attention);
    const auto maps = render_heatmaps(normalize_per_scale(records), geometry_for(p));
    for (const auto& r : records) {
      if (!synth.truth.is_planted(p.patient_id, r.location_id)) continue;
      const int col = static_cast<int>(r.xy.x() / 256), row = static_cast<int>(r.xy.y() / 256);
      for (int s = 0; s < 3; ++s) planted[s] += *maps[static_cast<std::size_t>(s)].at(col, row);
      ++n;
    }
  }
  REQUIRE(n > 0);
  for (int s = 0; s < 3; ++s) MESSAGE("scale " << s << " mean planted intensity " << planted[s] / n);
  CHECK(planted[1] > planted[0]);
  CHECK(planted[1] > planted[2]);
}
