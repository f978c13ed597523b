#include "csmil/model.hpp"

#include <cmath>

#include "csmil/error.hpp"
#include "csmil/random.hpp"
#include "json.hpp"

namespace csmil::model {

using ad::column;
using ad::gather_rows;
using ad::hconcat;
using ad::matmul;
using ad::transpose;
using ad::vconcat;

std::string to_string(Fusion f) {
  switch (f) {
    case Fusion::CrossScaleAttention: return "cs-attn";
    case Fusion::Concat: return "concat";
    case Fusion::Add: return "add";
    case Fusion::SingleScale: return "single";
    case Fusion::InstancePool: return "instance-pool";
  }
  return "?";
}
std::string to_string(Sharing s) { return s == Sharing::Shared ? "shared" : "per-scale"; }
std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }
std::string to_string(Pooling p) { return p == Pooling::Plain ? "plain" : "gated"; }

Fusion parse_fusion(const std::string& s) {
  for (Fusion f : {Fusion::CrossScaleAttention, Fusion::Concat, Fusion::Add, Fusion::SingleScale,
                   Fusion::InstancePool})
    if (s == to_string(f)) return f;
  throw ConfigError("unknown fusion '" + s + "'");
}
Sharing parse_sharing(const std::string& s) {
  if (s == "shared") return Sharing::Shared;
  if (s == "per-scale") return Sharing::PerScale;
  throw ConfigError("unknown attention sharing '" + s + "'");
}
Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  throw ConfigError("unknown attention activation '" + s + "'");
}
Pooling parse_pooling(const std::string& s) {
  if (s == "plain") return Pooling::Plain;
  if (s == "gated") return Pooling::Gated;
  throw ConfigError("unknown pooling '" + s + "'");
}

void ModelConfig::validate() const {
  if (n_scales < 1) throw ConfigError("model: n_scales must be >= 1");
  if (dim < 1 || encoder_dim < 1 || attention_hidden < 1)
    throw ConfigError("model: layer widths must be >= 1");
  if (clusters < 1) throw ConfigError("model: clusters must be >= 1");
  if (fusion == Fusion::SingleScale && (single_scale < 0 || single_scale >= n_scales))
    throw ConfigError("model: single_scale " + std::to_string(single_scale) + " is not a valid scale");
}

int ModelConfig::fused_dim() const {
  return fusion == Fusion::Concat ? n_scales * encoder_dim : encoder_dim;
}

std::string ModelConfig::to_json() const {
  nlohmann::json j{{"fusion", to_string(fusion)},    {"single_scale", single_scale},
                   {"sharing", to_string(sharing)},  {"activation", to_string(activation)},
                   {"pooling", to_string(pooling)},  {"dim", dim},
                   {"encoder_dim", encoder_dim},     {"attention_hidden", attention_hidden},
                   {"clusters", clusters},           {"n_scales", n_scales}};
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  ModelConfig c;
  try {
    auto j = nlohmann::json::parse(text);
    c.fusion = parse_fusion(j.at("fusion").get<std::string>());
    c.single_scale = j.at("single_scale").get<int>();
    c.sharing = parse_sharing(j.at("sharing").get<std::string>());
    c.activation = parse_activation(j.at("activation").get<std::string>());
    c.pooling = parse_pooling(j.at("pooling").get<std::string>());
    c.dim = j.at("dim").get<int>();
    c.encoder_dim = j.at("encoder_dim").get<int>();
    c.attention_hidden = j.at("attention_hidden").get<int>();
    c.clusters = j.at("clusters").get<int>();
    c.n_scales = j.at("n_scales").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

std::uint64_t ModelConfig::digest() const { return fnv1a(to_json()); }

const Tensor& ModelParams::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ConfigError("missing parameter '" + name + "'");
  return it->second;
}

std::size_t ModelParams::count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors) n += static_cast<std::size_t>(t.size());
  return n;
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  if (a.tensors.size() != b.tensors.size()) return false;
  for (auto ia = a.tensors.begin(), ib = b.tensors.begin(); ia != a.tensors.end(); ++ia, ++ib) {
    if (ia->first != ib->first || ia->second.rows() != ib->second.rows() ||
        ia->second.cols() != ib->second.cols() || ia->second != ib->second)
      return false;
  }
  return true;
}

namespace {

std::string enc_name(int s, const char* leaf) { return "enc" + std::to_string(s) + "." + leaf; }

std::string csa_name(const ModelConfig& cfg, int s, const char* leaf) {
  return cfg.sharing == Sharing::Shared ? std::string("csa.") + leaf
                                        : "csa" + std::to_string(s) + "." + leaf;
}

std::vector<int> encoded_scales(const ModelConfig& cfg) {
  if (cfg.fusion == Fusion::SingleScale) return {cfg.single_scale};
  std::vector<int> all;
  for (int s = 0; s < cfg.n_scales; ++s) all.push_back(s);
  return all;
}

}  // namespace

std::map<std::string, std::pair<Eigen::Index, Eigen::Index>> parameter_shapes(const ModelConfig& cfg) {
  cfg.validate();
  const Eigen::Index E = cfg.dim, L = cfg.encoder_dim, D = cfg.attention_hidden;
  const Eigen::Index Lf = cfg.fused_dim();
  std::map<std::string, std::pair<Eigen::Index, Eigen::Index>> shapes;
  for (int s : encoded_scales(cfg)) {
    shapes[enc_name(s, "fc1.weight")] = {E, L};
    shapes[enc_name(s, "fc1.bias")] = {1, L};
    shapes[enc_name(s, "fc2.weight")] = {L, L};
    shapes[enc_name(s, "fc2.bias")] = {1, L};
  }
  if (cfg.fusion == Fusion::CrossScaleAttention) {
    const int n = cfg.sharing == Sharing::Shared ? 1 : cfg.n_scales;
    for (int s = 0; s < n; ++s) {
      shapes[csa_name(cfg, s, "V")] = {D, L};
      shapes[csa_name(cfg, s, "W")] = {D, 1};
    }
  }
  shapes["pool.V"] = {D, Lf};
  shapes["pool.w"] = {D, 1};
  if (cfg.pooling == Pooling::Gated) shapes["pool.U"] = {D, Lf};
  shapes["cls.weight"] = {cfg.clusters * Lf, 2};
  shapes["cls.bias"] = {1, 2};
  return shapes;
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  ModelParams p;
  for (const auto& [name, shape] : parameter_shapes(cfg)) {
    // weights applied as x * W have fan_in = rows; attention maps applied as
    // h * V^T have fan_in = cols
    Eigen::Index fan_in = shape.first;
    if (name.ends_with(".V") || name.ends_with(".U")) fan_in = shape.second;
    if (name.ends_with(".bias")) {
      const auto w = name.substr(0, name.size() - 4) + "weight";
      fan_in = parameter_shapes(cfg).at(w).first;
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor t(shape.first, shape.second);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = u(rng);
    p.tensors.emplace(name, std::move(t));
  }
  return p;
}

void check_params(const ModelParams& params, const ModelConfig& cfg) {
  const auto shapes = parameter_shapes(cfg);
  if (shapes.size() != params.tensors.size())
    throw ConfigError("parameter set has " + std::to_string(params.tensors.size()) +
                      " tensors, config expects " + std::to_string(shapes.size()));
  for (const auto& [name, shape] : shapes) {
    const Tensor& t = params.at(name);
    if (t.rows() != shape.first || t.cols() != shape.second)
      throw ConfigError("parameter '" + name + "' has shape " + ad::shape_string(t) +
                        ", config expects [" + std::to_string(shape.first) + "x" +
                        std::to_string(shape.second) + "]");
    if (!t.allFinite()) throw NumericError("parameter '" + name + "' is not finite");
  }
}

BoundParams::BoundParams(Graph& graph, const ModelParams& params) {
  for (const auto& [name, t] : params.tensors) vars_.emplace(name, graph.parameter(t));
}

Var BoundParams::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ConfigError("missing parameter '" + name + "'");
  return it->second;
}

// ---------------------------------------------------------------------------

namespace {

// Adds a 1 x c bias to each of the n rows via ones(n x 1) * bias.
Var add_row_bias(const Var& x, const Var& bias) {
  auto& g = *x.graph();
  return x + matmul(g.constant(Tensor::Ones(x.rows(), 1)), bias);
}

Var activate(const Var& x, Activation a) { return a == Activation::Tanh ? ad::tanh(x) : ad::relu(x); }

}  // namespace

Var mi_fcn_encode(const Var& x, int scale, const BoundParams& p) {
  const Var w1 = p[enc_name(scale, "fc1.weight")];
  if (x.cols() != w1.rows())
    throw DimensionError("mi_fcn_encode: input width " + std::to_string(x.cols()) +
                         " does not match encoder input " + std::to_string(w1.rows()));
  const Var h = ad::relu(add_row_bias(matmul(x, w1), p[enc_name(scale, "fc1.bias")]));
  return add_row_bias(matmul(h, p[enc_name(scale, "fc2.weight")]), p[enc_name(scale, "fc2.bias")]);
}

CrossScaleAttentionOutput cross_scale_attention(std::span<const Var> per_scale,
                                                const BoundParams& p, const ModelConfig& cfg) {
  if (per_scale.empty()) throw ContractError("cross_scale_attention: needs at least one scale");
  const int S = static_cast<int>(per_scale.size());
  std::vector<Var> logits;
  logits.reserve(per_scale.size());
  for (int s = 0; s < S; ++s) {
    const Var& f = per_scale[static_cast<std::size_t>(s)];
    if (f.rows() != per_scale[0].rows() || f.cols() != per_scale[0].cols())
      throw DimensionError("cross_scale_attention: scale inputs differ in shape");
    const Var V = p[csa_name(cfg, s, "V")];
    const Var W = p[csa_name(cfg, s, "W")];
    logits.push_back(matmul(activate(matmul(f, transpose(V)), cfg.activation), W));
  }
  const Var scores = ad::softmax(hconcat(std::span<const Var>(logits)), 1);
  auto& g = *scores.graph();
  const Var ones = g.constant(Tensor::Ones(1, per_scale[0].cols()));
  Var fused = matmul(column(scores, 0), ones) * per_scale[0];
  for (int s = 1; s < S; ++s)
    fused = fused + matmul(column(scores, s), ones) * per_scale[static_cast<std::size_t>(s)];
  return {fused, scores};
}

PoolOutput instance_pool(const Var& h, const BoundParams& p, Pooling pooling) {
  if (h.rows() < 1) throw ContractError("instance_pool: no instances");
  Var hidden = ad::tanh(matmul(h, transpose(p["pool.V"])));
  if (pooling == Pooling::Gated) hidden = hidden * ad::sigmoid(matmul(h, transpose(p["pool.U"])));
  const Var scores = ad::softmax(matmul(hidden, p["pool.w"]), 0);
  return {matmul(transpose(scores), h), scores};
}

BagForward forward_bag(Graph& graph, const cluster::Bag& bag, const BoundParams& p,
                       const ModelConfig& cfg) {
  const int n = bag.size();
  if (n < 1) throw ContractError("forward_bag: empty bag");
  if (bag.cluster_of.size() != bag.instances.size())
    throw ContractError("forward_bag: cluster ids do not match instances");
  for (const auto& inst : bag.instances) {
    if (inst.vectors.rows() != cfg.n_scales || inst.vectors.cols() != cfg.dim)
      throw ConfigError("forward_bag: instance shape " + ad::shape_string(inst.vectors) +
                        " does not match model (S=" + std::to_string(cfg.n_scales) +
                        ", E=" + std::to_string(cfg.dim) + ")");
  }
  for (int c : bag.cluster_of)
    if (c < 0 || c >= cfg.clusters) throw ConfigError("forward_bag: cluster id outside model range");
  const auto shapes = parameter_shapes(cfg);
  if (shapes.size() != p.vars().size())
    throw ConfigError("forward_bag: parameter set does not match the model config");
  for (const auto& [name, shape] : shapes) {
    const Var v = p[name];
    if (v.rows() != shape.first || v.cols() != shape.second)
      throw ConfigError("forward_bag: parameter '" + name + "' has shape " +
                        ad::shape_string(v.value()) + " but the config expects [" +
                        std::to_string(shape.first) + "x" + std::to_string(shape.second) + "]");
  }

  std::vector<Var> encoded(static_cast<std::size_t>(cfg.n_scales));
  for (int s : encoded_scales(cfg)) {
    Tensor x(n, cfg.dim);
    for (int i = 0; i < n; ++i) x.row(i) = bag.instances[static_cast<std::size_t>(i)].vectors.row(s);
    encoded[static_cast<std::size_t>(s)] = mi_fcn_encode(graph.constant(std::move(x)), s, p);
  }

  BagForward out;
  Var fused;
  switch (cfg.fusion) {
    case Fusion::CrossScaleAttention: {
      auto csa = cross_scale_attention(std::span<const Var>(encoded), p, cfg);
      fused = csa.fused;
      const auto& a = csa.scores.value();
      for (int i = 0; i < n; ++i) {
        const auto& inst = bag.instances[static_cast<std::size_t>(i)];
        out.attention.push_back({bag.patient_id, inst.location_id, inst.xy, a.row(i).transpose()});
      }
      break;
    }
    case Fusion::Concat: fused = hconcat(std::span<const Var>(encoded)); break;
    case Fusion::Add:
      fused = encoded[0];
      for (int s = 1; s < cfg.n_scales; ++s) fused = fused + encoded[static_cast<std::size_t>(s)];
      break;
    case Fusion::SingleScale: fused = encoded[static_cast<std::size_t>(cfg.single_scale)]; break;
    case Fusion::InstancePool: break;
  }

  std::vector<Var> slots;
  for (int c = 0; c < cfg.clusters; ++c) {
    std::vector<Eigen::Index> rows;
    for (int i = 0; i < n; ++i)
      if (bag.cluster_of[static_cast<std::size_t>(i)] == c) rows.push_back(i);
    if (rows.empty()) {
      slots.push_back(graph.constant(Tensor::Zero(1, cfg.fused_dim())));
      continue;
    }
    Var members;
    if (cfg.fusion == Fusion::InstancePool) {
      std::vector<Var> parts;
      for (const auto& e : encoded) parts.push_back(gather_rows(e, rows));
      members = vconcat(std::span<const Var>(parts));
    } else {
      members = gather_rows(fused, rows);
    }
    slots.push_back(instance_pool(members, p, cfg.pooling).pooled);
  }
  const Var z = hconcat(std::span<const Var>(slots));
  const Var logits = add_row_bias(matmul(z, p["cls.weight"]), p["cls.bias"]);
  out.log_probs = ad::log_softmax(logits, 1);
  return out;
}

BagPrediction predict_bag(const cluster::Bag& bag, const ModelParams& params,
                          const ModelConfig& cfg) {
  Graph g;
  BoundParams p(g, params);
  auto fwd = forward_bag(g, bag, p, cfg);
  BagPrediction out;
  out.log_probs = fwd.log_probs.value().row(0);
  out.p_positive = std::exp(out.log_probs(1));
  out.attention = std::move(fwd.attention);
  return out;
}

}  // namespace csmil::model
