#include "csmil/clustering.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "csmil/error.hpp"
#include "json.hpp"

namespace csmil::cluster {

namespace {

// Squared distance from every row of `points` to every row of `centroids`.
Tensor squared_distances(const Tensor& points, const Tensor& centroids) {
  const Eigen::VectorXd pn = points.rowwise().squaredNorm();
  const Eigen::RowVectorXd cn = centroids.rowwise().squaredNorm().transpose();
  Tensor d = -2.0 * points * centroids.transpose();
  d.colwise() += pn;
  d.rowwise() += cn;
  return d.cwiseMax(0.0);
}

double assign_nearest(const Tensor& points, const Tensor& centroids, std::vector<int>& labels,
                      Eigen::VectorXd& dist) {
  const Tensor d = squared_distances(points, centroids);
  labels.resize(static_cast<std::size_t>(points.rows()));
  dist.resize(points.rows());
  double sse = 0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    Eigen::Index best;
    d.row(i).minCoeff(&best);
    dist(i) = (points.row(i) - centroids.row(best)).squaredNorm();
    labels[static_cast<std::size_t>(i)] = static_cast<int>(best);
    sse += dist(i);
  }
  return sse;
}

Tensor kmeanspp(const Tensor& points, int k, Rng& rng) {
  const Eigen::Index n = points.rows();
  Tensor c(k, points.cols());
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  c.row(0) = points.row(first(rng));
  Eigen::VectorXd d2 = (points.rowwise() - c.row(0)).rowwise().squaredNorm();
  for (int j = 1; j < k; ++j) {
    Eigen::Index chosen;
    const double total = d2.sum();
    if (total <= 0) {
      chosen = first(rng);
    } else {
      std::uniform_real_distribution<double> u(0.0, total);
      const double target = u(rng);
      double acc = 0;
      chosen = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += d2(i);
        if (acc > target && d2(i) > 0) {
          chosen = i;
          break;
        }
      }
    }
    c.row(j) = points.row(chosen);
    d2 = d2.cwiseMin((points.rowwise() - c.row(j)).rowwise().squaredNorm());
  }
  return c;
}

}  // namespace

KMeansResult kmeans(const Tensor& points, int k, std::uint64_t seed, int max_iter, double tol) {
  if (k < 1) throw ParameterError("kmeans: k must be >= 1");
  if (k > points.rows())
    throw ParameterError("kmeans: k = " + std::to_string(k) + " exceeds the " +
                         std::to_string(points.rows()) + " available vectors");
  if (max_iter < 1) throw ParameterError("kmeans: max_iter must be >= 1");

  Rng rng(seed);
  KMeansResult res;
  res.centroids = kmeanspp(points, k, rng);
  Eigen::VectorXd dist;

  for (int it = 0; it < max_iter; ++it) {
    res.sse_history.push_back(assign_nearest(points, res.centroids, res.labels, dist));

    Tensor next = Tensor::Zero(k, points.cols());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
      const int l = res.labels[static_cast<std::size_t>(i)];
      next.row(l) += points.row(i);
      ++counts[static_cast<std::size_t>(l)];
    }
    std::vector<bool> taken(static_cast<std::size_t>(points.rows()), false);
    for (int j = 0; j < k; ++j)
      if (counts[static_cast<std::size_t>(j)] > 0) next.row(j) /= counts[static_cast<std::size_t>(j)];
    for (int j = 0; j < k; ++j) {
      if (counts[static_cast<std::size_t>(j)] > 0) continue;
      // farthest point from its (updated) centroid
      Eigen::Index far = -1;
      double far_d = -1;
      for (Eigen::Index i = 0; i < points.rows(); ++i) {
        if (taken[static_cast<std::size_t>(i)]) continue;
        const double d = (points.row(i) - next.row(res.labels[static_cast<std::size_t>(i)])).squaredNorm();
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      taken[static_cast<std::size_t>(far)] = true;
      next.row(j) = points.row(far);
    }
    const double shift = (next - res.centroids).rowwise().norm().maxCoeff();
    res.centroids = std::move(next);
    res.iterations = it + 1;
    if (shift < tol) break;
  }
  res.sse_history.push_back(assign_nearest(points, res.centroids, res.labels, dist));
  if (!res.centroids.allFinite()) throw NumericError("kmeans: non-finite centroid");
  return res;
}

Eigen::RowVectorXd clustering_vector(const data::MultiScaleInstance& inst, int scale_choice) {
  if (scale_choice == kMultiScale)
    return Eigen::Map<const Eigen::RowVectorXd>(inst.vectors.data(), inst.vectors.size());
  if (scale_choice < 0 || scale_choice >= inst.vectors.rows())
    throw ParameterError("invalid clustering scale " + std::to_string(scale_choice));
  return inst.vectors.row(scale_choice);
}

int parse_scale_choice(const data::Dataset& dataset, const std::string& choice) {
  if (choice == "multi") return kMultiScale;
  const int by_label = dataset.scale_index(choice);
  if (by_label >= 0) return by_label;
  try {
    std::size_t used = 0;
    const int idx = std::stoi(choice, &used);
    if (used == choice.size() && idx >= 0 && idx < dataset.n_scales()) return idx;
  } catch (const std::exception&) {
  }
  throw ParameterError("invalid scale choice '" + choice + "'");
}

ClusterModel cluster_dataset(const data::Dataset& dataset, int scale_choice, int k,
                             std::uint64_t seed, int max_iter, double tol) {
  if (scale_choice != kMultiScale && (scale_choice < 0 || scale_choice >= dataset.n_scales()))
    throw ParameterError("invalid clustering scale " + std::to_string(scale_choice));
  const Eigen::Index width =
      scale_choice == kMultiScale ? dataset.dim * dataset.n_scales() : dataset.dim;
  std::size_t n = 0;
  for (const auto& p : dataset.patients) n += p.instances.size();
  Tensor points(static_cast<Eigen::Index>(n), width);
  Eigen::Index row = 0;
  for (const auto& p : dataset.patients)
    for (const auto& inst : p.instances) points.row(row++) = clustering_vector(inst, scale_choice);

  auto fit = kmeans(points, k, seed, max_iter, tol);
  ClusterModel model;
  model.k = k;
  model.centroids = std::move(fit.centroids);
  model.clustering_scale = scale_choice;
  model.clustering_scale_label =
      scale_choice == kMultiScale ? "multi" : dataset.scale(scale_choice).label;
  row = 0;
  for (const auto& p : dataset.patients)
    for (const auto& inst : p.instances)
      model.assignment[{p.patient_id, inst.location_id}] = fit.labels[static_cast<std::size_t>(row++)];
  return model;
}

std::vector<int> ClusterModel::assign(const data::PatientRecord& patient) const {
  std::vector<int> out;
  out.reserve(patient.instances.size());
  for (const auto& inst : patient.instances) {
    auto it = assignment.find({patient.patient_id, inst.location_id});
    if (it != assignment.end()) {
      out.push_back(it->second);
      continue;
    }
    const Eigen::RowVectorXd v = clustering_vector(inst, clustering_scale);
    if (v.size() != centroids.cols())
      throw DimensionError("cluster model expects vectors of width " +
                           std::to_string(centroids.cols()));
    Eigen::Index best;
    (centroids.rowwise() - v).rowwise().squaredNorm().minCoeff(&best);
    out.push_back(static_cast<int>(best));
  }
  return out;
}

void save_cluster_model(const ClusterModel& model, const std::filesystem::path& file) {
  nlohmann::json j;
  j["format"] = "csmil-clusters";
  j["version"] = 1;
  j["k"] = model.k;
  j["clustering_scale"] = model.clustering_scale;
  j["clustering_scale_label"] = model.clustering_scale_label;
  j["centroids"] = nlohmann::json::array();
  for (Eigen::Index r = 0; r < model.centroids.rows(); ++r) {
    std::vector<double> row(model.centroids.row(r).data(),
                            model.centroids.row(r).data() + model.centroids.cols());
    j["centroids"].push_back(row);
  }
  j["assignments"] = nlohmann::json::array();
  for (const auto& [key, c] : model.assignment)
    j["assignments"].push_back({{"patient_id", key.first}, {"location_id", key.second}, {"cluster", c}});
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + file.string());
  os << j.dump(2) << "\n";
  if (!os) throw IoError("failed writing " + file.string());
}

ClusterModel load_cluster_model(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw IoError("cannot read cluster model " + file.string());
  ClusterModel m;
  try {
    auto j = nlohmann::json::parse(is);
    if (j.at("format").get<std::string>() != "csmil-clusters")
      throw FormatError(file.string() + ": not a cluster model");
    m.k = j.at("k").get<int>();
    m.clustering_scale = j.at("clustering_scale").get<int>();
    m.clustering_scale_label = j.at("clustering_scale_label").get<std::string>();
    auto rows = j.at("centroids").get<std::vector<std::vector<double>>>();
    if (static_cast<int>(rows.size()) != m.k || rows.empty())
      throw FormatError(file.string() + ": centroid count differs from k");
    m.centroids.resize(m.k, static_cast<Eigen::Index>(rows[0].size()));
    for (int r = 0; r < m.k; ++r) {
      if (rows[static_cast<std::size_t>(r)].size() != rows[0].size())
        throw FormatError(file.string() + ": ragged centroids");
      for (std::size_t c = 0; c < rows[0].size(); ++c)
        m.centroids(r, static_cast<Eigen::Index>(c)) = rows[static_cast<std::size_t>(r)][c];
    }
    for (const auto& a : j.at("assignments")) {
      const int c = a.at("cluster").get<int>();
      if (c < 0 || c >= m.k) throw FormatError(file.string() + ": cluster id out of range");
      m.assignment[{a.at("patient_id").get<std::string>(), a.at("location_id").get<int>()}] = c;
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(file.string() + ": " + e.what());
  }
  return m;
}

// ---------------------------------------------------------------------------

Bag assemble_bag(const data::PatientRecord& patient, const std::vector<int>& clusters, int k,
                 int bag_size, Rng& rng) {
  if (bag_size < 1) throw ParameterError("bag size must be >= 1");
  if (patient.instances.empty())
    throw ContractError("patient '" + patient.patient_id + "' has no instances");
  if (clusters.size() != patient.instances.size())
    throw ContractError("cluster list does not match instances of '" + patient.patient_id + "'");

  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    if (clusters[i] < 0 || clusters[i] >= k) throw ContractError("cluster id out of range");
    members[static_cast<std::size_t>(clusters[i])].push_back(i);
  }
  std::vector<int> populated;
  for (int c = 0; c < k; ++c)
    if (!members[static_cast<std::size_t>(c)].empty()) populated.push_back(c);

  std::vector<int> quota(static_cast<std::size_t>(k), 0);
  int deficit = 0;
  if (bag_size < k) {
    auto order = populated;
    std::shuffle(order.begin(), order.end(), rng);
    const int take = std::min<int>(bag_size, static_cast<int>(order.size()));
    for (int i = 0; i < take; ++i) quota[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;
    deficit = bag_size - take;
  } else {
    std::fill(quota.begin(), quota.end(), bag_size / k);
    std::vector<int> order(static_cast<std::size_t>(k));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (int i = 0; i < bag_size % k; ++i) ++quota[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
    for (int c = 0; c < k; ++c) {
      if (members[static_cast<std::size_t>(c)].empty()) {
        deficit += quota[static_cast<std::size_t>(c)];
        quota[static_cast<std::size_t>(c)] = 0;
      }
    }
  }
  auto capacity = [&](int c) { return static_cast<int>(members[static_cast<std::size_t>(c)].size()); };
  for (int c : populated) {
    auto& q = quota[static_cast<std::size_t>(c)];
    if (q > capacity(c)) {
      deficit += q - capacity(c);
      q = capacity(c);
    }
  }
  // round-robin: first into spare capacity, then (all exhausted) with repeats
  std::size_t cursor = 0;
  std::size_t misses = 0;
  bool allow_repeats = false;
  while (deficit > 0) {
    const int c = populated[cursor % populated.size()];
    ++cursor;
    if (allow_repeats || quota[static_cast<std::size_t>(c)] < capacity(c)) {
      ++quota[static_cast<std::size_t>(c)];
      --deficit;
      misses = 0;
    } else if (++misses == populated.size()) {
      allow_repeats = true;
    }
  }

  Bag bag{patient.patient_id, patient.label, {}, {}};
  bag.instances.reserve(static_cast<std::size_t>(bag_size));
  for (int c = 0; c < k; ++c) {
    int q = quota[static_cast<std::size_t>(c)];
    auto pool = members[static_cast<std::size_t>(c)];
    while (q > 0) {
      std::shuffle(pool.begin(), pool.end(), rng);
      for (std::size_t i = 0; i < pool.size() && q > 0; ++i, --q) {
        bag.instances.push_back(patient.instances[pool[i]]);
        bag.cluster_of.push_back(c);
      }
    }
  }
  return bag;
}

Bag assemble_bag(const data::PatientRecord& patient, const ClusterModel& model, int bag_size,
                 Rng& rng) {
  return assemble_bag(patient, model.assign(patient), model.k, bag_size, rng);
}

}  // namespace csmil::cluster
