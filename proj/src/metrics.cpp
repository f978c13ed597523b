#include "csmil/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "csmil/error.hpp"
#include "csmil/random.hpp"

namespace csmil::metrics {

namespace {

struct Counts {
  std::size_t pos = 0;
  std::size_t neg = 0;
};

Counts count_classes(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw MetricError("scores and labels differ in length");
  Counts c;
  for (int l : labels) {
    if (l == 1) ++c.pos;
    else if (l == 0) ++c.neg;
    else throw MetricError("labels must be 0 or 1");
  }
  for (double s : scores)
    if (!std::isfinite(s)) throw MetricError("non-finite score");
  return c;
}

Counts require_both(std::span<const double> scores, std::span<const int> labels) {
  const Counts c = count_classes(scores, labels);
  if (c.pos == 0 || c.neg == 0) throw MetricError("both classes must be present");
  return c;
}

// Indices sorted by descending score.
std::vector<std::size_t> descending(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

}  // namespace

Eigen::VectorXd midranks(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  Eigen::VectorXd r(static_cast<Eigen::Index>(n));
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && x[idx[j]] == x[idx[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j - 1) + 1.0;
    for (std::size_t k = i; k < j; ++k) r(static_cast<Eigen::Index>(idx[k])) = mid;
    i = j;
  }
  return r;
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  const Counts c = require_both(scores, labels);
  const Eigen::VectorXd r = midranks(scores);
  double rank_sum = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == 1) rank_sum += r(static_cast<Eigen::Index>(i));
  const double np = static_cast<double>(c.pos), nn = static_cast<double>(c.neg);
  const double u = rank_sum - np * (np + 1) / 2;
  return u / (np * nn);
}

double average_precision(std::span<const double> scores, std::span<const int> labels) {
  const Counts c = count_classes(scores, labels);
  if (c.pos == 0) throw MetricError("average precision needs at least one positive");
  const auto idx = descending(scores);
  double ap = 0, prev_recall = 0;
  std::size_t tp = 0, fp = 0, i = 0;
  while (i < idx.size()) {
    const double thr = scores[idx[i]];
    while (i < idx.size() && scores[idx[i]] == thr) {
      if (labels[idx[i]] == 1) ++tp;
      else ++fp;
      ++i;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(c.pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

double accuracy(std::span<const double> scores, std::span<const int> labels, double threshold) {
  count_classes(scores, labels);
  if (scores.empty()) throw MetricError("accuracy of an empty set");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if ((scores[i] >= threshold ? 1 : 0) == labels[i]) ++hit;
  return static_cast<double>(hit) / static_cast<double>(scores.size());
}

std::vector<CurvePoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  const Counts c = require_both(scores, labels);
  const auto idx = descending(scores);
  std::vector<CurvePoint> pts{{0.0, 0.0}};
  std::size_t tp = 0, fp = 0, i = 0;
  while (i < idx.size()) {
    const double thr = scores[idx[i]];
    while (i < idx.size() && scores[idx[i]] == thr) {
      if (labels[idx[i]] == 1) ++tp;
      else ++fp;
      ++i;
    }
    pts.push_back({static_cast<double>(fp) / static_cast<double>(c.neg),
                   static_cast<double>(tp) / static_cast<double>(c.pos)});
  }
  return pts;
}

std::vector<CurvePoint> pr_curve(std::span<const double> scores, std::span<const int> labels) {
  const Counts c = count_classes(scores, labels);
  if (c.pos == 0) throw MetricError("precision-recall curve needs at least one positive");
  const auto idx = descending(scores);
  std::vector<CurvePoint> pts{{0.0, 1.0}};
  std::size_t tp = 0, fp = 0, i = 0;
  while (i < idx.size()) {
    const double thr = scores[idx[i]];
    while (i < idx.size() && scores[idx[i]] == thr) {
      if (labels[idx[i]] == 1) ++tp;
      else ++fp;
      ++i;
    }
    pts.push_back({static_cast<double>(tp) / static_cast<double>(c.pos),
                   static_cast<double>(tp) / static_cast<double>(tp + fp)});
  }
  return pts;
}

// ---------------------------------------------------------------------------

DelongComponents delong_components(std::span<const double> scores_a,
                                   std::span<const double> scores_b, std::span<const int> labels) {
  if (scores_a.size() != scores_b.size())
    throw MetricError("DeLong: models were scored on different patients");
  const Counts c = require_both(scores_a, labels);
  count_classes(scores_b, labels);
  const auto m = static_cast<Eigen::Index>(c.pos), n = static_cast<Eigen::Index>(c.neg);

  DelongComponents out;
  out.v10.resize(m, 2);
  out.v01.resize(n, 2);
  const std::span<const double> models[2] = {scores_a, scores_b};
  for (int k = 0; k < 2; ++k) {
    std::vector<double> pos, neg;
    for (std::size_t i = 0; i < labels.size(); ++i)
      (labels[i] == 1 ? pos : neg).push_back(models[k][i]);
    std::vector<double> all = pos;
    all.insert(all.end(), neg.begin(), neg.end());
    const Eigen::VectorXd tz = midranks(all);
    const Eigen::VectorXd tx = midranks(pos);
    const Eigen::VectorXd ty = midranks(neg);
    for (Eigen::Index i = 0; i < m; ++i) out.v10(i, k) = (tz(i) - tx(i)) / static_cast<double>(n);
    for (Eigen::Index j = 0; j < n; ++j)
      out.v01(j, k) = 1.0 - (tz(m + j) - ty(j)) / static_cast<double>(m);
    double total = 0;  // scalar sum: identical columns must give identical AUCs
    for (Eigen::Index i = 0; i < m; ++i) total += out.v10(i, k);
    out.aucs(k) = total / static_cast<double>(m);
  }
  auto cov = [](const Eigen::MatrixXd& v) {
    Eigen::Matrix2d s = Eigen::Matrix2d::Zero();
    if (v.rows() < 2) return s;
    const Eigen::MatrixXd centered = v.rowwise() - v.colwise().mean();
    s = centered.transpose() * centered / static_cast<double>(v.rows() - 1);
    return s;
  };
  out.s10 = cov(out.v10);
  out.s01 = cov(out.v01);
  out.covariance = out.s10 / static_cast<double>(m) + out.s01 / static_cast<double>(n);
  return out;
}

double two_tailed_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

DelongResult delong_test(std::span<const double> scores_a, std::span<const double> scores_b,
                         std::span<const int> labels) {
  const auto comp = delong_components(scores_a, scores_b, labels);
  DelongResult r;
  r.auc_a = comp.aucs(0);
  r.auc_b = comp.aucs(1);
  auto diff_var = [](const Eigen::MatrixXd& v) {
    const Eigen::Index n = v.rows();
    if (n < 2) return 0.0;
    std::vector<double> d(static_cast<std::size_t>(n));
    double mean = 0;
    for (Eigen::Index i = 0; i < n; ++i) mean += d[static_cast<std::size_t>(i)] = v(i, 0) - v(i, 1);
    mean /= static_cast<double>(n);
    double acc = 0;
    for (double x : d) acc += (x - mean) * (x - mean);
    return acc / static_cast<double>(n - 1);
  };
  const double var = diff_var(comp.v10) / static_cast<double>(comp.v10.rows()) +
                     diff_var(comp.v01) / static_cast<double>(comp.v01.rows());
  if (!(var > 0)) {
    if (r.auc_a == r.auc_b) {
      r.z = 0;
      r.p = 1;
    } else {
      r.z = r.auc_a > r.auc_b ? std::numeric_limits<double>::infinity()
                              : -std::numeric_limits<double>::infinity();
      r.p = 0;
      r.degenerate = true;
    }
    return r;
  }
  r.z = (r.auc_a - r.auc_b) / std::sqrt(var);
  r.p = std::min(1.0, two_tailed_p(r.z));
  return r;
}

double bootstrap_test(std::span<const double> scores_a, std::span<const double> scores_b,
                      std::span<const int> labels, Metric metric, int n_boot, std::uint64_t seed) {
  if (n_boot < 100) throw ParameterError("bootstrap needs n_boot >= 100");
  if (scores_a.size() != scores_b.size())
    throw MetricError("bootstrap: models were scored on different patients");
  require_both(scores_a, labels);
  count_classes(scores_b, labels);
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] == 1 ? pos : neg).push_back(i);

  auto evaluate = [&](std::span<const double> s, std::span<const int> l) {
    return metric == Metric::Auc ? auc(s, l) : average_precision(s, l);
  };
  const std::size_t n = labels.size();
  std::vector<double> ra(n), rb(n);
  std::vector<int> rl(n);
  int le = 0, ge = 0;
  for (int b = 0; b < n_boot; ++b) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(b)));
    std::uniform_int_distribution<std::size_t> pick_pos(0, pos.size() - 1), pick_neg(0, neg.size() - 1);
    std::size_t k = 0;
    for (std::size_t i = 0; i < pos.size(); ++i, ++k) {
      const std::size_t src = pos[pick_pos(rng)];
      ra[k] = scores_a[src];
      rb[k] = scores_b[src];
      rl[k] = 1;
    }
    for (std::size_t i = 0; i < neg.size(); ++i, ++k) {
      const std::size_t src = neg[pick_neg(rng)];
      ra[k] = scores_a[src];
      rb[k] = scores_b[src];
      rl[k] = 0;
    }
    const double d = evaluate(ra, rl) - evaluate(rb, rl);
    if (d <= 0) ++le;
    if (d >= 0) ++ge;
  }
  const int tail = std::max(1, std::min(le, ge));
  return std::min(1.0, 2.0 * tail / n_boot);
}

}  // namespace csmil::metrics
