#include <fstream>
#include <set>
#include <sstream>

#include "csmil/cli.hpp"
#include "csmil/error.hpp"
#include "csmil/evaluation.hpp"
#include "csmil/random.hpp"
#include "json.hpp"

namespace csmil::cli {

using nlohmann::json;

namespace {

// Reads known keys out of one config object and rejects the rest.
class Section {
 public:
  Section(const json& root, const std::string& name) : name_(name) {
    if (!root.contains(name)) return;
    node_ = &root.at(name);
    if (!node_->is_object()) throw ConfigError("config section '" + name + "' must be an object");
  }

  template <class T>
  void read(const std::string& key, T& dst) {
    known_.insert(key);
    if (!node_ || !node_->contains(key)) return;
    try {
      dst = node_->at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config key '" + name_ + "." + key + "' has the wrong type");
    }
  }

  void finish() const {
    if (!node_) return;
    for (const auto& [key, value] : node_->items())
      if (!known_.count(key)) throw ConfigError("unknown config key '" + name_ + "." + key + "'");
  }

 private:
  std::string name_;
  const json* node_ = nullptr;
  std::set<std::string> known_;
};

bool is_single(const std::string& fusion) { return fusion.rfind("single-", 0) == 0; }

}  // namespace

RunConfig RunConfig::from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> top = {"seed", "dataset", "data", "cluster", "train",
                                            "model", "eval", "render"};
  for (const auto& [key, value] : root.items())
    if (!top.count(key)) throw ConfigError("unknown config key '" + key + "'");

  RunConfig c;
  try {
    if (root.contains("seed")) c.seed = root.at("seed").get<std::uint64_t>();
    if (root.contains("dataset")) c.dataset = root.at("dataset").get<std::string>();
  } catch (const json::exception&) {
    throw ConfigError("config keys 'seed' and 'dataset' must be an integer and a string");
  }

  Section d(root, "data");
  d.read("patients_per_class", c.data.patients_per_class);
  d.read("locations", c.data.locations);
  d.read("dim", c.data.dim);
  d.read("n_scales", c.data.n_scales);
  d.read("scale_labels", c.data.scale_labels);
  d.read("informative_scale", c.data.informative_scale);
  d.read("signal_fraction", c.data.signal_fraction);
  d.read("signal_norm", c.data.signal_norm);
  d.read("noise", c.data.noise);
  d.read("n_prototypes", c.data.n_prototypes);
  d.read("prototype_scale", c.data.prototype_scale);
  d.finish();

  Section cl(root, "cluster");
  cl.read("scale", c.cluster.scale);
  cl.read("k", c.cluster.k);
  cl.read("max_iter", c.cluster.max_iter);
  cl.read("tol", c.cluster.tol);
  cl.finish();

  Section t(root, "train");
  t.read("epochs", c.train.epochs);
  t.read("learning_rate", c.train.learning_rate);
  t.read("beta1", c.train.beta1);
  t.read("beta2", c.train.beta2);
  t.read("epsilon", c.train.epsilon);
  t.read("bag_size", c.train.bag_size);
  t.read("n_splits", c.train.n_splits);
  t.read("bag_resample", c.train.bag_resample);
  t.read("test_fraction", c.train.test_fraction);
  t.read("threads", c.train.threads);
  t.finish();

  Section m(root, "model");
  m.read("fusion", c.model.fusion);
  m.read("sharing", c.model.sharing);
  m.read("activation", c.model.activation);
  m.read("pooling", c.model.pooling);
  m.read("encoder_dim", c.model.encoder_dim);
  m.read("attention_hidden", c.model.attention_hidden);
  m.read("name", c.model.name);
  m.finish();

  Section e(root, "eval");
  e.read("mode", c.eval.mode);
  e.read("n_bootstrap", c.eval.n_bootstrap);
  e.read("variants", c.eval.variants);
  e.read("ref", c.eval.ref);
  e.finish();

  Section r(root, "render");
  r.read("patients", c.render.patients);
  r.read("passes", c.render.passes);
  r.finish();
  return c;
}

std::string RunConfig::resolved_json() const {
  json j;
  j["seed"] = seed;
  j["data"] = {{"patients_per_class", data.patients_per_class},
               {"locations", data.locations},
               {"dim", data.dim},
               {"n_scales", data.n_scales},
               {"scale_labels", data.scale_labels.empty() ? data::default_scale_labels(data.n_scales)
                                                          : data.scale_labels},
               {"informative_scale", data.informative_scale},
               {"signal_fraction", data.signal_fraction},
               {"signal_norm", data.signal_norm},
               {"noise", data.noise},
               {"n_prototypes", data.n_prototypes},
               {"prototype_scale", data.prototype_scale}};
  j["cluster"] = {{"scale", cluster.scale}, {"k", cluster.k}, {"max_iter", cluster.max_iter},
                  {"tol", cluster.tol}};
  j["train"] = {{"epochs", train.epochs},
                {"learning_rate", train.learning_rate},
                {"beta1", train.beta1},
                {"beta2", train.beta2},
                {"epsilon", train.epsilon},
                {"bag_size", train.bag_size},
                {"n_splits", train.n_splits},
                {"bag_resample", train.bag_resample},
                {"test_fraction", train.test_fraction},
                {"threads", train.threads}};
  j["model"] = {{"fusion", model.fusion},
                {"sharing", model.sharing},
                {"activation", model.activation},
                {"pooling", model.pooling},
                {"encoder_dim", model.encoder_dim},
                {"attention_hidden", model.attention_hidden},
                {"name", variant_name(*this)}};
  j["eval"] = {{"mode", eval.mode}, {"n_bootstrap", eval.n_bootstrap}, {"variants", eval.variants},
               {"ref", eval.ref}};
  j["render"] = {{"patients", render.patients}, {"passes", render.passes}};
  return j.dump(2) + "\n";
}

void RunConfig::validate() const {
  data.validate();
  train.validate();
  if (cluster.k < 1) throw ConfigError("cluster.k must be >= 1");
  if (cluster.max_iter < 1) throw ConfigError("cluster.max_iter must be >= 1");
  if (!(cluster.tol >= 0)) throw ConfigError("cluster.tol must be >= 0");
  if (model.fusion == "single") throw ConfigError("model.fusion 'single' needs a scale, e.g. single-20x");
  if (!is_single(model.fusion)) model::parse_fusion(model.fusion);
  model::parse_sharing(model.sharing);
  model::parse_activation(model.activation);
  model::parse_pooling(model.pooling);
  if (model.encoder_dim < 1) throw ConfigError("model.encoder_dim must be >= 1");
  if (model.attention_hidden < 1) throw ConfigError("model.attention_hidden must be >= 1");
  eval::parse_scoring_mode(eval.mode);
  if (eval.n_bootstrap < 100) throw ConfigError("eval.n_bootstrap must be >= 100");
  if (render.passes < 1) throw ConfigError("render.passes must be >= 1");
  const std::string name = variant_name(*this);
  if (name.empty() || name.find_first_of("/\\ ") != std::string::npos || name == "." || name == "..")
    throw ConfigError("model.name '" + name + "' is not usable as a directory name");
}

std::uint64_t RunConfig::stage_seed(const std::string& stage) const { return derive_seed(seed, stage); }

RunConfig load_run_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config file " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return RunConfig::from_json(ss.str());
}

std::string variant_name(const RunConfig& cfg) {
  return cfg.model.name.empty() ? cfg.model.fusion : cfg.model.name;
}

model::ModelConfig model_config(const RunConfig& cfg, const data::Dataset& dataset) {
  model::ModelConfig m;
  if (is_single(cfg.model.fusion)) {
    m.fusion = model::Fusion::SingleScale;
    const std::string label = cfg.model.fusion.substr(7);
    m.single_scale = dataset.scale_index(label);
    if (m.single_scale < 0) throw ConfigError("model.fusion names unknown scale '" + label + "'");
  } else {
    if (cfg.model.fusion == "single") throw ConfigError("model.fusion 'single' needs a scale, e.g. single-20x");
    m.fusion = model::parse_fusion(cfg.model.fusion);
  }
  m.sharing = model::parse_sharing(cfg.model.sharing);
  m.activation = model::parse_activation(cfg.model.activation);
  m.pooling = model::parse_pooling(cfg.model.pooling);
  m.dim = dataset.dim;
  m.n_scales = dataset.n_scales();
  m.encoder_dim = cfg.model.encoder_dim;
  m.attention_hidden = cfg.model.attention_hidden;
  m.clusters = cfg.cluster.k;
  m.validate();
  return m;
}

std::string clustering_label(const RunConfig& cfg, const data::Dataset& dataset) {
  if (cfg.cluster.scale != "auto") {
    const int choice = cluster::parse_scale_choice(dataset, cfg.cluster.scale);
    return choice == cluster::kMultiScale ? "multi" : dataset.scale_labels.at(choice);
  }
  const model::ModelConfig m = model_config(cfg, dataset);
  switch (m.fusion) {
    case model::Fusion::SingleScale:
      return dataset.scale_labels.at(m.single_scale);
    case model::Fusion::InstancePool:
      return "multi";
    default:
      return dataset.scale_labels.back();
  }
}

}  // namespace csmil::cli
