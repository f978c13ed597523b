#include "csmil/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <limits>
#include <numeric>
#include <map>
#include <set>

#include "csmil/error.hpp"
#include "csmil/random.hpp"
#include "json.hpp"

namespace csmil::train {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (n_splits < 1) throw ConfigError("train: n_splits must be >= 1");
  if (bag_size < 1) throw ConfigError("train: bag_size must be >= 1");
  if (!(learning_rate >= 0)) throw ConfigError("train: learning_rate must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
    throw ConfigError("train: betas must lie in [0, 1)");
  if (!(epsilon > 0)) throw ConfigError("train: epsilon must be > 0");
  if (!(test_fraction >= 0 && test_fraction < 1))
    throw ConfigError("train: test_fraction must lie in [0, 1)");
  if (threads < 1) throw ConfigError("train: threads must be >= 1");
}

std::vector<std::string> SplitPlan::cohort() const {
  std::set<std::string> ids;
  for (const auto& s : splits) {
    ids.insert(s.train.begin(), s.train.end());
    ids.insert(s.validation.begin(), s.validation.end());
  }
  return {ids.begin(), ids.end()};
}

SplitPlan make_splits(const data::Dataset& dataset, int n_splits, std::uint64_t seed,
                      double test_fraction) {
  if (n_splits < 1) throw ParameterError("n_splits must be >= 1");
  if (!(test_fraction >= 0 && test_fraction < 1))
    throw ParameterError("test_fraction must lie in [0, 1)");
  Rng rng(derive_seed(seed, "splits"));
  std::vector<std::string> by_class[2];
  for (const auto& p : dataset.patients) by_class[p.label].push_back(p.patient_id);

  SplitPlan plan;
  std::vector<std::string> cohort[2];
  for (int c = 0; c < 2; ++c) {
    auto ids = by_class[c];
    std::sort(ids.begin(), ids.end());
    std::shuffle(ids.begin(), ids.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(ids.size())));
    plan.test.insert(plan.test.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_test));
    cohort[c].assign(ids.begin() + static_cast<std::ptrdiff_t>(n_test), ids.end());
    if (cohort[c].empty())
      throw ParameterError("class " + std::to_string(c) + " has no training patients");
  }
  std::sort(plan.test.begin(), plan.test.end());
  const std::size_t n_train = cohort[0].size() + cohort[1].size();
  if (n_train < static_cast<std::size_t>(n_splits))
    throw ParameterError("only " + std::to_string(n_train) + " training patients for " +
                         std::to_string(n_splits) + " splits");

  std::vector<int> fold_of;
  std::vector<std::string> all;
  std::size_t counter = 0;
  for (int c = 0; c < 2; ++c)
    for (const auto& id : cohort[c]) {
      all.push_back(id);
      fold_of.push_back(static_cast<int>(counter++ % static_cast<std::size_t>(n_splits)));
    }

  plan.degenerate = n_splits == 1;
  for (int f = 0; f < n_splits; ++f) {
    Split s;
    for (std::size_t i = 0; i < all.size(); ++i) {
      if (plan.degenerate || fold_of[i] != f) s.train.push_back(all[i]);
      if (plan.degenerate || fold_of[i] == f) s.validation.push_back(all[i]);
    }
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.validation.begin(), s.validation.end());
    plan.splits.push_back(std::move(s));
  }
  return plan;
}

void save_split_plan(const SplitPlan& plan, const std::filesystem::path& file) {
  nlohmann::json j;
  j["format"] = "csmil-splits";
  j["degenerate"] = plan.degenerate;
  j["test"] = plan.test;
  j["splits"] = nlohmann::json::array();
  for (const auto& s : plan.splits)
    j["splits"].push_back({{"train", s.train}, {"validation", s.validation}});
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + file.string());
  os << j.dump(2) << "\n";
}

SplitPlan load_split_plan(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw IoError("cannot read split plan " + file.string());
  SplitPlan plan;
  try {
    auto j = nlohmann::json::parse(is);
    if (j.at("format").get<std::string>() != "csmil-splits")
      throw FormatError(file.string() + ": not a split plan");
    plan.degenerate = j.at("degenerate").get<bool>();
    plan.test = j.at("test").get<std::vector<std::string>>();
    for (const auto& s : j.at("splits"))
      plan.splits.push_back({s.at("train").get<std::vector<std::string>>(),
                             s.at("validation").get<std::vector<std::string>>()});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(file.string() + ": " + e.what());
  }
  return plan;
}

// ---------------------------------------------------------------------------

namespace {

void check_label(int label) {
  if (label != 0 && label != 1) throw ContractError("label must be 0 or 1, got " + std::to_string(label));
}

}  // namespace

double nll_loss(const Eigen::RowVector2d& log_probs, int label) {
  check_label(label);
  return -log_probs(label);
}

model::Var nll_loss(const model::Var& log_probs, int label) {
  check_label(label);
  return ad::neg(ad::element(log_probs, 0, label));
}

cluster::Bag seeded_bag(const data::PatientRecord& patient, const std::vector<int>& clusters,
                        int k, int bag_size, std::uint64_t seed, const std::string& tag) {
  Rng rng(derive_seed(derive_seed(seed, tag), patient.patient_id));
  return cluster::assemble_bag(patient, clusters, k, bag_size, rng);
}

namespace {

class Adam {
 public:
  Adam(const TrainConfig& cfg, const ModelParams& like) : cfg_(cfg) {
    for (const auto& [name, t] : like.tensors) {
      m_.emplace(name, ad::Tensor::Zero(t.rows(), t.cols()));
      v_.emplace(name, ad::Tensor::Zero(t.rows(), t.cols()));
    }
  }

  void step(ModelParams& params, const std::map<std::string, ad::Tensor>& grads) {
    ++t_;
    const double c1 = 1 - std::pow(cfg_.beta1, t_);
    const double c2 = 1 - std::pow(cfg_.beta2, t_);
    for (auto& [name, p] : params.tensors) {
      const auto& g = grads.at(name);
      auto& m = m_.at(name);
      auto& v = v_.at(name);
      m = cfg_.beta1 * m + (1 - cfg_.beta1) * g;
      v = cfg_.beta2 * v + (1 - cfg_.beta2) * g.cwiseProduct(g);
      p.array() -= cfg_.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg_.epsilon);
    }
  }

 private:
  const TrainConfig& cfg_;
  std::map<std::string, ad::Tensor> m_, v_;
  int t_ = 0;
};

struct PreparedPatient {
  const data::PatientRecord* record;
  std::vector<int> clusters;
};

}  // namespace

TrainedModel train_one_split(const data::Dataset& dataset, const Split& split, int split_id,
                             const cluster::ClusterModel& clusters, const TrainConfig& cfg,
                             const ModelConfig& model_cfg, const BagObserver& observer) {
  cfg.validate();
  model_cfg.validate();
  if (model_cfg.clusters != clusters.k)
    throw ConfigError("model expects " + std::to_string(model_cfg.clusters) +
                      " clusters, cluster model has " + std::to_string(clusters.k));
  if (split.train.empty() || split.validation.empty())
    throw ContractError("split " + std::to_string(split_id) + " has an empty train or validation set");

  auto prepare = [&](const std::vector<std::string>& ids) {
    std::vector<PreparedPatient> out;
    for (const auto& id : ids) {
      const auto& rec = dataset.patient(id);
      out.push_back({&rec, clusters.assign(rec)});
    }
    return out;
  };
  const auto train_set = prepare(split.train);
  const auto val_set = prepare(split.validation);

  const std::uint64_t split_seed = derive_seed(cfg.seed, "split/" + std::to_string(split_id));
  TrainedModel out;
  out.split_id = split_id;
  ModelParams params = model::init_params(model_cfg, derive_seed(split_seed, "init"));
  Adam adam(cfg, params);

  std::vector<cluster::Bag> val_bags;
  for (const auto& p : val_set) {
    val_bags.push_back(seeded_bag(*p.record, p.clusters, clusters.k, cfg.bag_size, cfg.seed, "validation"));
    if (observer) observer(p.record->patient_id, BagUse::Validation);
  }
  std::vector<cluster::Bag> fixed_bags;
  if (!cfg.bag_resample)
    for (const auto& p : train_set)
      fixed_bags.push_back(seeded_bag(*p.record, p.clusters, clusters.k, cfg.bag_size, split_seed, "fixed"));

  double best_val = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(train_set.size());
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng order_rng(derive_seed(split_seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), order_rng);

    double train_loss = 0;
    for (std::size_t i : order) {
      const auto& p = train_set[i];
      const cluster::Bag bag =
          cfg.bag_resample
              ? seeded_bag(*p.record, p.clusters, clusters.k, cfg.bag_size, split_seed,
                           "epoch/" + std::to_string(epoch))
              : fixed_bags[i];
      if (observer) observer(p.record->patient_id, BagUse::Gradient);
      std::map<std::string, ad::Tensor> grads;
      double loss_value = 0;
      try {
        model::Graph g;
        model::BoundParams bound(g, params);
        const auto fwd = model::forward_bag(g, bag, bound, model_cfg);
        const auto loss = nll_loss(fwd.log_probs, bag.label);
        loss_value = loss.value()(0, 0);
        const auto gr = g.backward(loss);
        for (const auto& [name, var] : bound.vars()) grads.emplace(name, gr[var]);
      } catch (const NumericError& e) {
        throw TrainingError(epoch, e.what());
      }
      if (!std::isfinite(loss_value)) throw TrainingError(epoch, "non-finite training loss");
      train_loss += loss_value;
      adam.step(params, grads);
    }
    train_loss /= static_cast<double>(train_set.size());

    double val_loss = 0;
    try {
      for (const auto& bag : val_bags)
        val_loss += nll_loss(model::predict_bag(bag, params, model_cfg).log_probs, bag.label);
    } catch (const NumericError& e) {
      throw TrainingError(epoch, e.what());
    }
    val_loss /= static_cast<double>(val_bags.size());
    if (!std::isfinite(val_loss) || !std::isfinite(train_loss))
      throw TrainingError(epoch, "non-finite loss");

    out.curve.push_back({epoch, train_loss, val_loss});
    if (val_loss < best_val) {
      best_val = val_loss;
      out.selection_epoch = epoch;
      out.params = params;
    }
  }
  return out;
}

std::vector<TrainedModel> train_all(const data::Dataset& dataset, const SplitPlan& plan,
                                    const cluster::ClusterModel& clusters, const TrainConfig& cfg,
                                    const ModelConfig& model_cfg) {
  cfg.validate();
  const int n = static_cast<int>(plan.splits.size());
  std::vector<TrainedModel> out(static_cast<std::size_t>(n));
  if (cfg.threads <= 1) {
    for (int i = 0; i < n; ++i)
      out[static_cast<std::size_t>(i)] = train_one_split(dataset, plan.splits[static_cast<std::size_t>(i)], i, clusters, cfg, model_cfg);
    return out;
  }
  for (int start = 0; start < n; start += cfg.threads) {
    std::vector<std::future<TrainedModel>> jobs;
    for (int i = start; i < std::min(n, start + cfg.threads); ++i)
      jobs.push_back(std::async(std::launch::async, [&, i] {
        return train_one_split(dataset, plan.splits[static_cast<std::size_t>(i)], i, clusters, cfg, model_cfg);
      }));
    for (int i = start; i < std::min(n, start + cfg.threads); ++i)
      out[static_cast<std::size_t>(i)] = jobs[static_cast<std::size_t>(i - start)].get();
  }
  return out;
}

void write_loss_curve(const std::filesystem::path& file, const std::vector<EpochRecord>& curve) {
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + file.string());
  os << "epoch,train_loss,val_loss\n";
  for (const auto& r : curve)
    os << r.epoch << ',' << data::format_double(r.train_loss) << ',' << data::format_double(r.val_loss) << '\n';
  if (!os) throw IoError("failed writing " + file.string());
}

}  // namespace csmil::train
