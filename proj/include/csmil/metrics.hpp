#pragma once

// Ranking metrics and the two model-comparison tests (DeLong for AUC, a
// class-stratified bootstrap for any metric).

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <vector>

namespace csmil::metrics {

struct CurvePoint {
  double x = 0;
  double y = 0;
};

/// Mann-Whitney U / (n_pos * n_neg), ties count one half.
double auc(std::span<const double> scores, std::span<const int> labels);

/// Sum over descending distinct thresholds of (R_i - R_{i-1}) * P_i.
double average_precision(std::span<const double> scores, std::span<const int> labels);

/// Fraction with (score >= threshold) == label.
double accuracy(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5);

/// (fpr, tpr) from (0,0) to (1,1), one point per distinct score.
std::vector<CurvePoint> roc_curve(std::span<const double> scores, std::span<const int> labels);
/// (recall, precision), starting at (0, 1), one point per distinct score.
std::vector<CurvePoint> pr_curve(std::span<const double> scores, std::span<const int> labels);

/// Midranks (1-based, ties averaged) of `x`.
Eigen::VectorXd midranks(std::span<const double> x);

/// Per-model DeLong structural components.
struct DelongComponents {
  Eigen::Vector2d aucs;
  Eigen::MatrixXd v10;  ///< n_pos x 2, placement of each positive among negatives
  Eigen::MatrixXd v01;  ///< n_neg x 2
  Eigen::Matrix2d s10;
  Eigen::Matrix2d s01;
  Eigen::Matrix2d covariance;  ///< s10 / n_pos + s01 / n_neg
};

DelongComponents delong_components(std::span<const double> scores_a,
                                   std::span<const double> scores_b, std::span<const int> labels);

struct DelongResult {
  double auc_a = 0;
  double auc_b = 0;
  double z = 0;
  double p = 1;
  bool degenerate = false;  ///< zero variance with unequal AUCs; p reported as 0
};

DelongResult delong_test(std::span<const double> scores_a, std::span<const double> scores_b,
                         std::span<const int> labels);

enum class Metric { Auc, AveragePrecision };

/// Two-tailed bootstrap p-value of metric(a) - metric(b). Patients are resampled
/// with replacement within each class. The p-value is floored at 2 / n_boot.
double bootstrap_test(std::span<const double> scores_a, std::span<const double> scores_b,
                      std::span<const int> labels, Metric metric, int n_boot, std::uint64_t seed);

/// Standard normal two-tailed p for |z|.
double two_tailed_p(double z);

}  // namespace csmil::metrics
