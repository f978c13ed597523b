#pragma once

// Test-set scoring over the models of every split, reports and comparison tables.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "csmil/clustering.hpp"
#include "csmil/data.hpp"
#include "csmil/metrics.hpp"
#include "csmil/model.hpp"

namespace csmil::eval {

struct ScoredPatient {
  std::string patient_id;
  int label = 0;
  double score = 0;  ///< P(class = 1), averaged over models
  int predicted = 0;
  std::vector<double> per_model;  ///< one score per split model
};

struct EvalReport {
  double auc = 0;
  double ap = 0;
  double accuracy = 0;
  std::vector<metrics::CurvePoint> roc;
  std::vector<metrics::CurvePoint> pr;
  int n_pos = 0;
  int n_neg = 0;
};

/// Ensemble: metrics of the model-averaged score. SplitMean: metrics of each
/// split model's own scores, averaged. Curves always come from the ensemble.
enum class ScoringMode { Ensemble, SplitMean };

std::string to_string(ScoringMode m);
ScoringMode parse_scoring_mode(const std::string& s);

struct EvalSettings {
  int bag_size = 8;
  std::uint64_t seed = 0;  ///< evaluation bags are drawn from this seed alone
  ScoringMode mode = ScoringMode::Ensemble;
};

/// One deterministic bag per patient, scored by every model. Throws ConfigError
/// when `models` is empty.
std::vector<ScoredPatient> score_patients(const data::Dataset& test,
                                          const std::vector<model::Checkpoint>& models,
                                          const cluster::ClusterModel& clusters,
                                          const EvalSettings& settings);

EvalReport report_from_scores(const std::vector<ScoredPatient>& scored,
                              ScoringMode mode = ScoringMode::Ensemble);

struct Evaluation {
  std::vector<ScoredPatient> scored;
  EvalReport report;
};

Evaluation evaluate(const data::Dataset& test, const std::vector<model::Checkpoint>& models,
                    const cluster::ClusterModel& clusters, const EvalSettings& settings);

/// key=value lines.
void write_report(const std::filesystem::path& file, const EvalReport& report,
                  const std::string& model_name, ScoringMode mode);
void write_curve(const std::filesystem::path& file, const std::string& header,
                 const std::vector<metrics::CurvePoint>& points);
/// CSV `patient_id,label,score,predicted`.
void write_scores(const std::filesystem::path& file, const std::vector<ScoredPatient>& scored);
std::vector<ScoredPatient> read_scores(const std::filesystem::path& file);

struct PairwiseTest {
  std::string model_a;
  std::string model_b;
  double p_auc = 1;  ///< DeLong
  double p_ap = 1;   ///< bootstrap
  bool degenerate = false;
  int n_bootstrap = 1000;
  std::uint64_t seed = 0;
};

PairwiseTest compare_models(const std::string& name_a, const std::vector<ScoredPatient>& a,
                            const std::string& name_b, const std::vector<ScoredPatient>& b,
                            int n_bootstrap, std::uint64_t seed);

struct CompareRow {
  std::string model;
  EvalReport report;
  PairwiseTest vs_ref;
};

/// CSV `model,auc,ap,acc,p_auc_vs_ref,p_ap_vs_ref`.
void write_compare_table(const std::filesystem::path& file, const std::vector<CompareRow>& rows);

}  // namespace csmil::eval
