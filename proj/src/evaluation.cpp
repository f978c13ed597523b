#include "csmil/evaluation.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "csmil/error.hpp"
#include "csmil/training.hpp"

namespace csmil::eval {

namespace fs = std::filesystem;
using data::format_double;

std::string to_string(ScoringMode m) { return m == ScoringMode::Ensemble ? "ensemble" : "split-mean"; }

ScoringMode parse_scoring_mode(const std::string& s) {
  if (s == "ensemble") return ScoringMode::Ensemble;
  if (s == "split-mean") return ScoringMode::SplitMean;
  throw ConfigError("unknown scoring mode '" + s + "' (expected ensemble or split-mean)");
}

std::vector<ScoredPatient> score_patients(const data::Dataset& test,
                                          const std::vector<model::Checkpoint>& models,
                                          const cluster::ClusterModel& clusters,
                                          const EvalSettings& settings) {
  if (models.empty()) throw ConfigError("no trained models to evaluate");
  std::vector<ScoredPatient> out;
  out.reserve(test.patients.size());
  for (const auto& patient : test.patients) {
    const auto assigned = clusters.assign(patient);
    const cluster::Bag bag =
        train::seeded_bag(patient, assigned, clusters.k, settings.bag_size, settings.seed, "eval");
    ScoredPatient sp;
    sp.patient_id = patient.patient_id;
    sp.label = patient.label;
    double total = 0;
    for (const auto& m : models) {
      const double p = model::predict_bag(bag, m.params, m.config).p_positive;
      sp.per_model.push_back(p);
      total += p;
    }
    sp.score = total / static_cast<double>(models.size());
    sp.predicted = sp.score >= 0.5 ? 1 : 0;
    out.push_back(std::move(sp));
  }
  return out;
}

EvalReport report_from_scores(const std::vector<ScoredPatient>& scored, ScoringMode mode) {
  std::vector<double> scores;
  std::vector<int> labels;
  EvalReport r;
  for (const auto& s : scored) {
    scores.push_back(s.score);
    labels.push_back(s.label);
    (s.label == 1 ? r.n_pos : r.n_neg)++;
  }
  r.roc = metrics::roc_curve(scores, labels);
  r.pr = metrics::pr_curve(scores, labels);
  if (mode == ScoringMode::Ensemble || scored.empty() || scored.front().per_model.empty()) {
    r.auc = metrics::auc(scores, labels);
    r.ap = metrics::average_precision(scores, labels);
    r.accuracy = metrics::accuracy(scores, labels);
    return r;
  }
  const std::size_t n_models = scored.front().per_model.size();
  for (std::size_t m = 0; m < n_models; ++m) {
    std::vector<double> own;
    for (const auto& s : scored) own.push_back(s.per_model.at(m));
    r.auc += metrics::auc(own, labels);
    r.ap += metrics::average_precision(own, labels);
    r.accuracy += metrics::accuracy(own, labels);
  }
  r.auc /= static_cast<double>(n_models);
  r.ap /= static_cast<double>(n_models);
  r.accuracy /= static_cast<double>(n_models);
  return r;
}

Evaluation evaluate(const data::Dataset& test, const std::vector<model::Checkpoint>& models,
                    const cluster::ClusterModel& clusters, const EvalSettings& settings) {
  Evaluation e;
  e.scored = score_patients(test, models, clusters, settings);
  e.report = report_from_scores(e.scored, settings.mode);
  return e;
}

namespace {

std::ofstream open_out(const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write " + file.string());
  return out;
}

}  // namespace

void write_report(const fs::path& file, const EvalReport& report, const std::string& model_name,
                  ScoringMode mode) {
  auto out = open_out(file);
  out << "model=" << model_name << "\n"
      << "scoring=" << to_string(mode) << "\n"
      << "auc=" << format_double(report.auc) << "\n"
      << "ap=" << format_double(report.ap) << "\n"
      << "accuracy=" << format_double(report.accuracy) << "\n"
      << "n_pos=" << report.n_pos << "\n"
      << "n_neg=" << report.n_neg << "\n";
}

void write_curve(const fs::path& file, const std::string& header,
                 const std::vector<metrics::CurvePoint>& points) {
  auto out = open_out(file);
  out << header << "\n";
  for (const auto& p : points) out << format_double(p.x) << "," << format_double(p.y) << "\n";
}

void write_scores(const fs::path& file, const std::vector<ScoredPatient>& scored) {
  auto out = open_out(file);
  out << "patient_id,label,score,predicted\n";
  for (const auto& s : scored)
    out << s.patient_id << "," << s.label << "," << format_double(s.score) << "," << s.predicted << "\n";
}

std::vector<ScoredPatient> read_scores(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read " + file.string());
  std::string line;
  if (!std::getline(in, line) || line != "patient_id,label,score,predicted")
    throw FormatError(file.string() + ": unexpected header");
  std::vector<ScoredPatient> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, label, score, predicted;
    if (!std::getline(ss, id, ',') || !std::getline(ss, label, ',') || !std::getline(ss, score, ',') ||
        !std::getline(ss, predicted))
      throw FormatError(file.string() + ": malformed row '" + line + "'");
    ScoredPatient sp;
    sp.patient_id = id;
    sp.label = label == "1" ? 1 : 0;
    sp.score = data::parse_double(score);
    sp.predicted = predicted == "1" ? 1 : 0;
    out.push_back(std::move(sp));
  }
  return out;
}

PairwiseTest compare_models(const std::string& name_a, const std::vector<ScoredPatient>& a,
                            const std::string& name_b, const std::vector<ScoredPatient>& b,
                            int n_bootstrap, std::uint64_t seed) {
  if (a.size() != b.size()) throw ContractError("compared models scored different patient sets");
  std::map<std::string, const ScoredPatient*> by_id;
  for (const auto& p : b) by_id[p.patient_id] = &p;
  std::vector<double> sa, sb;
  std::vector<int> labels;
  for (const auto& p : a) {
    const auto it = by_id.find(p.patient_id);
    if (it == by_id.end()) throw ContractError("compared models scored different patient sets");
    sa.push_back(p.score);
    sb.push_back(it->second->score);
    labels.push_back(p.label);
  }
  PairwiseTest t;
  t.model_a = name_a;
  t.model_b = name_b;
  t.n_bootstrap = n_bootstrap;
  t.seed = seed;
  const auto d = metrics::delong_test(sa, sb, labels);
  t.p_auc = d.p;
  t.degenerate = d.degenerate;
  t.p_ap = metrics::bootstrap_test(sa, sb, labels, metrics::Metric::AveragePrecision, n_bootstrap, seed);
  return t;
}

void write_compare_table(const fs::path& file, const std::vector<CompareRow>& rows) {
  auto out = open_out(file);
  out << "model,auc,ap,acc,p_auc_vs_ref,p_ap_vs_ref\n";
  for (const auto& r : rows)
    out << r.model << "," << format_double(r.report.auc) << "," << format_double(r.report.ap) << ","
        << format_double(r.report.accuracy) << "," << format_double(r.vs_ref.p_auc) << ","
        << format_double(r.vs_ref.p_ap) << "\n";
}

}  // namespace csmil::eval
