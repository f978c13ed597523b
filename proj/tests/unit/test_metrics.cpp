#include <cmath>
#include <random>

#include "csmil/error.hpp"
#include "csmil/evaluation.hpp"
#include "csmil/metrics.hpp"
#include "doctest.h"
#include "scratch.hpp"

using namespace csmil;
using namespace csmil::metrics;

namespace {

using Scores = std::vector<double>;
using Labels = std::vector<int>;

double psi(double pos, double neg) { return pos > neg ? 1.0 : pos == neg ? 0.5 : 0.0; }

double pair_auc(const Scores& s, const Labels& y) {
  double acc = 0, n = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        acc += psi(s[i], s[j]);
        ++n;
      }
  return acc / n;
}

// Variance of AUC_a - AUC_b from structural components built by double loops.
double delong_var_oracle(const Scores& a, const Scores& b, const Labels& y) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < y.size(); ++i) (y[i] ? pos : neg).push_back(i);
  const double m = static_cast<double>(pos.size()), n = static_cast<double>(neg.size());
  auto comps = [&](const Scores& s, std::vector<double>& v10, std::vector<double>& v01) {
    for (auto i : pos) {
      double acc = 0;
      for (auto j : neg) acc += psi(s[i], s[j]);
      v10.push_back(acc / n);
    }
    for (auto j : neg) {
      double acc = 0;
      for (auto i : pos) acc += psi(s[i], s[j]);
      v01.push_back(acc / m);
    }
  };
  std::vector<double> a10, a01, b10, b01;
  comps(a, a10, a01);
  comps(b, b10, b01);
  auto cov = [](const std::vector<double>& u, const std::vector<double>& v) {
    double mu = 0, mv = 0;
    for (std::size_t i = 0; i < u.size(); ++i) mu += u[i], mv += v[i];
    mu /= static_cast<double>(u.size());
    mv /= static_cast<double>(v.size());
    double acc = 0;
    for (std::size_t i = 0; i < u.size(); ++i) acc += (u[i] - mu) * (v[i] - mv);
    return acc / static_cast<double>(u.size() - 1);
  };
  const double s10 = cov(a10, a10) + cov(b10, b10) - 2 * cov(a10, b10);
  const double s01 = cov(a01, a01) + cov(b01, b01) - 2 * cov(a01, b01);
  return s10 / m + s01 / n;
}

struct Sample {
  Scores a, b;
  Labels y;
};

// Positives shifted by `gap_a` under score a, `gap_b` under score b.
Sample sample(std::mt19937_64& rng, int n, double gap_a, double gap_b, bool ties = false) {
  std::normal_distribution<double> z;
  Sample s;
  for (int i = 0; i < n; ++i) {
    const int label = i % 2;
    double a = z(rng) + gap_a * label, b = z(rng) + gap_b * label;
    if (ties) a = std::round(a * 2) / 2, b = std::round(b * 2) / 2;
    s.a.push_back(a);
    s.b.push_back(b);
    s.y.push_back(label);
  }
  return s;
}

}  // namespace

TEST_CASE("AUC on small hand examples") {
  const Labels y = {1, 0, 1, 0};
  CHECK(auc(Scores{0.9, 0.8, 0.4, 0.3}, y) == 0.75);
  CHECK(auc(Scores{0.9, 0.1, 0.8, 0.2}, y) == 1.0);
  CHECK(auc(Scores{0.1, 0.9, 0.2, 0.8}, y) == 0.0);
  CHECK(auc(Scores{0.5, 0.5, 0.5, 0.5}, y) == 0.5);
}

TEST_CASE("AUC equals the pair-count estimate, with ties") {
  std::mt19937_64 rng(1);
  for (int rep = 0; rep < 20; ++rep) {
    const auto s = sample(rng, 40 + rep, 0.7, 0.0, rep % 2 == 0);
    CHECK(std::abs(auc(s.a, s.y) - pair_auc(s.a, s.y)) <= 1e-12);
  }
}

TEST_CASE("AUC is invariant under monotone transforms") {
  std::mt19937_64 rng(2);
  const auto s = sample(rng, 60, 1.0, 0.0);
  Scores logistic;
  for (double v : s.a) logistic.push_back(1 / (1 + std::exp(-v)));
  CHECK(auc(logistic, s.y) == auc(s.a, s.y));
}

TEST_CASE("average precision") {
  // Ranking + - + : precision 1 at the first hit, 2/3 at the second.
  CHECK(average_precision(Scores{0.9, 0.8, 0.7}, Labels{1, 0, 1}) == doctest::Approx(5.0 / 6.0).epsilon(1e-14));
  CHECK(average_precision(Scores{0.9, 0.8, 0.1}, Labels{1, 1, 0}) == 1.0);
  // Single positive ranked last among five.
  CHECK(average_precision(Scores{0.9, 0.8, 0.7, 0.6, 0.1}, Labels{0, 0, 0, 0, 1}) ==
        doctest::Approx(0.2).epsilon(1e-14));
  // All scores tied: precision is the prevalence.
  CHECK(average_precision(Scores{1, 1, 1, 1}, Labels{1, 0, 0, 0}) == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("metric preconditions") {
  CHECK_THROWS_AS(auc(Scores{0.1, 0.2}, Labels{1, 1}), MetricError);
  CHECK_THROWS_AS(auc(Scores{0.1, 0.2}, Labels{0, 0}), MetricError);
  CHECK_THROWS_AS(average_precision(Scores{0.1, 0.2}, Labels{0, 0}), MetricError);
  CHECK_THROWS_AS(auc(Scores{0.1, std::nan("")}, Labels{1, 0}), MetricError);
  CHECK_THROWS_AS(auc(Scores{0.1}, Labels{1, 0}), MetricError);
  CHECK_THROWS_AS(delong_test(Scores{1, 0}, Scores{1, 0}, Labels{1, 1}), MetricError);
}

TEST_CASE("accuracy thresholds at one half") {
  CHECK(accuracy(Scores{0.9, 0.1, 0.5, 0.49}, Labels{1, 0, 1, 1}) == 0.75);
}

TEST_CASE("curves are monotone and anchored") {
  std::mt19937_64 rng(3);
  const auto s = sample(rng, 50, 1.0, 0.0, true);
  const auto roc = roc_curve(s.a, s.y);
  CHECK(roc.front().x == 0.0);
  CHECK(roc.front().y == 0.0);
  CHECK(roc.back().x == 1.0);
  CHECK(roc.back().y == 1.0);
  for (std::size_t i = 1; i < roc.size(); ++i) {
    CHECK(roc[i].x >= roc[i - 1].x);
    CHECK(roc[i].y >= roc[i - 1].y);
  }
  double area = 0;
  for (std::size_t i = 1; i < roc.size(); ++i) area += (roc[i].x - roc[i - 1].x) * (roc[i].y + roc[i - 1].y) / 2;
  CHECK(std::abs(area - auc(s.a, s.y)) <= 1e-12);

  const auto pr = pr_curve(s.a, s.y);
  CHECK(pr.front().x == 0.0);
  CHECK(pr.front().y == 1.0);
  CHECK(pr.back().x == 1.0);
  for (std::size_t i = 1; i < pr.size(); ++i) CHECK(pr[i].x >= pr[i - 1].x);
}

TEST_CASE("midranks average tied positions") {
  const auto r = midranks(Scores{3, 1, 3, 2});
  CHECK(r(0) == 3.5);
  CHECK(r(1) == 1.0);
  CHECK(r(2) == 3.5);
  CHECK(r(3) == 2.0);
}

TEST_CASE("DeLong matches the double-loop variance") {
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 30; ++rep) {
    const int n = 4 + rep % 9 * 2;
    const auto s = sample(rng, n, 1.0, 0.3, rep % 3 == 0);
    const auto r = delong_test(s.a, s.b, s.y);
    CHECK(std::abs(r.auc_a - pair_auc(s.a, s.y)) <= 1e-12);
    CHECK(std::abs(r.auc_b - pair_auc(s.b, s.y)) <= 1e-12);
    const double var = delong_var_oracle(s.a, s.b, s.y);
    if (var > 1e-12) {
      const double z = (r.auc_a - r.auc_b) / std::sqrt(var);
      CHECK(std::abs(r.z - z) <= 1e-9 * std::max(1.0, std::abs(z)));
      CHECK(std::abs(r.p - std::erfc(std::abs(z) / std::sqrt(2.0))) <= 1e-12);
    }
  }
}

TEST_CASE("DeLong on identical scores reports no difference") {
  std::mt19937_64 rng(5);
  const auto s = sample(rng, 30, 1.0, 0.0);
  const auto r = delong_test(s.a, s.a, s.y);
  CHECK(r.p == 1.0);
  CHECK(r.z == 0.0);
  CHECK_FALSE(r.degenerate);
}

TEST_CASE("DeLong flags a perfect classifier against chance") {
  std::mt19937_64 rng(6);
  const auto s = sample(rng, 200, 8.0, 0.0);
  const auto r = delong_test(s.a, s.b, s.y);
  CHECK(r.auc_a == 1.0);
  CHECK(r.p < 0.01);
  CHECK(r.z > 0);
}

TEST_CASE("two-tailed normal p-value") {
  CHECK(two_tailed_p(0) == 1.0);
  CHECK(two_tailed_p(1.959963984540054) == doctest::Approx(0.05).epsilon(1e-9));
  CHECK(two_tailed_p(-1.959963984540054) == doctest::Approx(0.05).epsilon(1e-9));
}

TEST_CASE("paired bootstrap") {
  std::mt19937_64 rng(7);
  SUBCASE("identical inputs give p = 1") {
    const auto s = sample(rng, 40, 1.0, 0.0);
    CHECK(bootstrap_test(s.a, s.a, s.y, Metric::Auc, 200, 1) == 1.0);
    CHECK(bootstrap_test(s.a, s.a, s.y, Metric::AveragePrecision, 200, 1) == 1.0);
  }
  SUBCASE("a dominant model hits the resolution floor") {
    const auto s = sample(rng, 100, 8.0, 0.0);
    CHECK(bootstrap_test(s.a, s.b, s.y, Metric::Auc, 500, 2) == 2.0 / 500);
    CHECK(bootstrap_test(s.b, s.a, s.y, Metric::AveragePrecision, 500, 2) == 2.0 / 500);
  }
  SUBCASE("agrees with DeLong about large and null differences") {
    const auto big = sample(rng, 120, 2.0, 0.0);
    CHECK(delong_test(big.a, big.b, big.y).p < 0.01);
    CHECK(bootstrap_test(big.a, big.b, big.y, Metric::Auc, 1000, 3) < 0.05);
    const auto null = sample(rng, 120, 0.5, 0.5);
    const double pd = delong_test(null.a, null.b, null.y).p;
    const double pb = bootstrap_test(null.a, null.b, null.y, Metric::Auc, 1000, 3);
    if (pd > 0.2) CHECK(pb > 0.05);
  }
  SUBCASE("seeded and validated") {
    const auto s = sample(rng, 40, 0.8, 0.4);
    CHECK(bootstrap_test(s.a, s.b, s.y, Metric::AveragePrecision, 300, 9) ==
          bootstrap_test(s.a, s.b, s.y, Metric::AveragePrecision, 300, 9));
    CHECK_THROWS_AS(bootstrap_test(s.a, s.b, s.y, Metric::Auc, 99, 1), ParameterError);
  }
}

// ---------------------------------------------------------------------------

namespace {

eval::ScoredPatient scored(const std::string& id, int label, std::vector<double> per_model) {
  eval::ScoredPatient p;
  p.patient_id = id;
  p.label = label;
  p.per_model = per_model;
  for (double v : per_model) p.score += v / static_cast<double>(per_model.size());
  p.predicted = p.score >= 0.5;
  return p;
}

}  // namespace

TEST_CASE("report from two confidently scored patients") {
  const std::vector<eval::ScoredPatient> s = {scored("a", 1, {0.9}), scored("b", 0, {0.1})};
  const auto r = eval::report_from_scores(s);
  CHECK(r.auc == 1.0);
  CHECK(r.ap == 1.0);
  CHECK(r.accuracy == 1.0);
  CHECK(r.n_pos == 1);
  CHECK(r.n_neg == 1);
}

TEST_CASE("split-mean scoring averages per-model metrics") {
  // Model 0 ranks perfectly, model 1 inverts; the ensemble ties and scores 0.5.
  const std::vector<eval::ScoredPatient> s = {scored("a", 1, {0.9, 0.1}), scored("b", 0, {0.1, 0.9})};
  CHECK(eval::report_from_scores(s, eval::ScoringMode::Ensemble).auc == 0.5);
  CHECK(eval::report_from_scores(s, eval::ScoringMode::SplitMean).auc == 0.5);
  const std::vector<eval::ScoredPatient> t = {scored("a", 1, {0.9, 0.6}), scored("b", 0, {0.1, 0.7}),
                                              scored("c", 1, {0.8, 0.8})};
  CHECK(eval::report_from_scores(t, eval::ScoringMode::SplitMean).auc == doctest::Approx(0.75));
  CHECK(eval::parse_scoring_mode("split-mean") == eval::ScoringMode::SplitMean);
  CHECK(eval::to_string(eval::ScoringMode::Ensemble) == "ensemble");
  CHECK_THROWS_AS(eval::parse_scoring_mode("median"), ConfigError);
}

TEST_CASE("evaluate scores every test patient with every model") {
  data::SyntheticSpec spec;
  spec.patients_per_class = 5;
  spec.locations = 12;
  spec.dim = 6;
  const auto synth = data::generate_synthetic(spec);
  const auto clusters = cluster::cluster_dataset(synth.dataset, 2, 4, 1);
  model::ModelConfig m;
  m.dim = 6;
  m.clusters = 4;
  m.encoder_dim = 8;
  m.attention_hidden = 4;
  const std::vector<model::Checkpoint> models = {{m, model::init_params(m, 1)}, {m, model::init_params(m, 2)}};
  eval::EvalSettings settings;
  settings.seed = 3;
  const auto e = eval::evaluate(synth.dataset, models, clusters, settings);
  REQUIRE(e.scored.size() == 10);
  for (const auto& p : e.scored) {
    CHECK(p.per_model.size() == 2);
    CHECK(p.score == doctest::Approx((p.per_model[0] + p.per_model[1]) / 2));
    CHECK(p.score > 0);
    CHECK(p.score < 1);
  }
  CHECK(e.report.auc >= 0);
  CHECK(e.report.auc <= 1);
  CHECK(e.report.ap > 0);
  CHECK(e.report.ap <= 1);
  CHECK(e.report.n_pos == 5);
  CHECK(e.report.n_neg == 5);
  const auto again = eval::evaluate(synth.dataset, models, clusters, settings);
  CHECK(again.scored[3].score == e.scored[3].score);
  CHECK_THROWS_AS(eval::evaluate(synth.dataset, {}, clusters, settings), ConfigError);

  const auto dir = csmil::testing::scratch_dir("eval_files");
  eval::write_scores(dir / "scores.csv", e.scored);
  const auto back = eval::read_scores(dir / "scores.csv");
  REQUIRE(back.size() == e.scored.size());
  CHECK(back[0].score == e.scored[0].score);
  CHECK(back[0].patient_id == e.scored[0].patient_id);
  eval::write_report(dir / "report.txt", e.report, "cs-attn", eval::ScoringMode::Ensemble);
  const std::string report = csmil::testing::slurp(dir / "report.txt");
  for (const char* key : {"model=cs-attn\n", "scoring=ensemble\n", "auc=", "ap=", "accuracy=", "n_pos=5\n"})
    CHECK(report.find(key) != std::string::npos);
  eval::write_curve(dir / "roc.csv", "fpr,tpr", e.report.roc);
  CHECK(csmil::testing::slurp(dir / "roc.csv").rfind("fpr,tpr\n0,0\n", 0) == 0);
}

TEST_CASE("model comparison table") {
  std::mt19937_64 rng(8);
  const auto s = sample(rng, 40, 3.0, 0.0);
  std::vector<eval::ScoredPatient> a, b;
  for (std::size_t i = 0; i < s.y.size(); ++i) {
    a.push_back(scored("p" + std::to_string(i), s.y[i], {1 / (1 + std::exp(-s.a[i]))}));
    b.push_back(scored("p" + std::to_string(i), s.y[i], {1 / (1 + std::exp(-s.b[i]))}));
  }
  const auto t = eval::compare_models("a", a, "b", b, 200, 1);
  CHECK(t.p_auc < 0.05);
  CHECK(t.p_ap < 0.05);
  const auto self = eval::compare_models("a", a, "a", a, 200, 1);
  CHECK(self.p_auc == 1.0);
  CHECK(self.p_ap == 1.0);
  std::vector<eval::ScoredPatient> shuffled(a.rbegin(), a.rend());
  CHECK(eval::compare_models("a", a, "r", shuffled, 200, 1).p_auc == 1.0);
  std::vector<eval::ScoredPatient> fewer(a.begin(), a.end() - 1);
  CHECK_THROWS(eval::compare_models("a", a, "f", fewer, 200, 1));

  const auto dir = csmil::testing::scratch_dir("compare_table");
  eval::write_compare_table(dir / "compare.csv", {{"a", eval::report_from_scores(a), self},
                                                  {"b", eval::report_from_scores(b), t}});
  const std::string text = csmil::testing::slurp(dir / "compare.csv");
  CHECK(text.rfind("model,auc,ap,acc,p_auc_vs_ref,p_ap_vs_ref\na,", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);
}
