#pragma once

// Multi-instance models: per-scale MI-FCN encoders, scale fusion (cross-scale
// attention and the baselines), per-cluster attention pooling and a linear
// two-class head.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "csmil/attention_record.hpp"
#include "csmil/autodiff.hpp"
#include "csmil/clustering.hpp"

namespace csmil::model {

using ad::Tensor;
using Graph = ad::Graph<double>;
using Var = ad::Var<double>;

enum class Fusion { CrossScaleAttention, Concat, Add, SingleScale, InstancePool };
enum class Sharing { Shared, PerScale };
enum class Activation { Tanh, Relu };
enum class Pooling { Plain, Gated };

struct ModelConfig {
  Fusion fusion = Fusion::CrossScaleAttention;
  int single_scale = 0;  ///< used when fusion == SingleScale
  Sharing sharing = Sharing::Shared;
  Activation activation = Activation::Relu;
  Pooling pooling = Pooling::Plain;
  int dim = 32;               ///< E, embedding width
  int encoder_dim = 64;       ///< L, MI-FCN output width
  int attention_hidden = 32;  ///< D, hidden width of every attention layer
  int clusters = 8;           ///< k
  int n_scales = 3;           ///< S

  /// Throws ConfigError.
  void validate() const;
  /// Width of one fused instance: S*L for concat, L otherwise.
  int fused_dim() const;
  /// Canonical JSON text; identical configs give identical bytes.
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
  std::uint64_t digest() const;

  bool operator==(const ModelConfig&) const = default;
};

std::string to_string(Fusion f);
std::string to_string(Sharing s);
std::string to_string(Activation a);
std::string to_string(Pooling p);
Fusion parse_fusion(const std::string& s);
Sharing parse_sharing(const std::string& s);
Activation parse_activation(const std::string& s);
Pooling parse_pooling(const std::string& s);

/// Named trainable tensors.
struct ModelParams {
  std::map<std::string, Tensor> tensors;

  const Tensor& at(const std::string& name) const;
  std::size_t count() const;  ///< total number of scalars
};

bool operator==(const ModelParams& a, const ModelParams& b);

/// Names and shapes every parameter tensor must have under `cfg`.
std::map<std::string, std::pair<Eigen::Index, Eigen::Index>> parameter_shapes(const ModelConfig& cfg);

/// Uniform in +-1/sqrt(fan_in), drawn in name order from `seed`.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Throws ConfigError when `params` does not match `cfg`.
void check_params(const ModelParams& params, const ModelConfig& cfg);

/// Parameters placed on a graph as differentiable leaves.
class BoundParams {
 public:
  BoundParams(Graph& graph, const ModelParams& params);
  /// Wraps leaves that already live on a graph.
  explicit BoundParams(std::map<std::string, Var> vars) : vars_(std::move(vars)) {}
  Var operator[](const std::string& name) const;
  const std::map<std::string, Var>& vars() const { return vars_; }

 private:
  std::map<std::string, Var> vars_;
};

// ---------------------------------------------------------------------------
// Layers. Row i of every (n x .) operand is instance i.

/// Two fully connected layers, ReLU between: E -> L -> L. `x` is n x E.
Var mi_fcn_encode(const Var& x, int scale, const BoundParams& p);

struct CrossScaleAttentionOutput {
  Var fused;   ///< n x L, F = sum_s a_s f_s
  Var scores;  ///< n x S, softmax over scales
};

/// `per_scale[s]` holds f_s for every instance (n x L).
/// logit_s = W^T act(V f_s), a = softmax over s.
CrossScaleAttentionOutput cross_scale_attention(std::span<const Var> per_scale,
                                                const BoundParams& p, const ModelConfig& cfg);

struct PoolOutput {
  Var pooled;  ///< 1 x L'
  Var scores;  ///< n x 1, attention weights
};

/// Attention pooling over the rows of `h`. Gated pooling multiplies the tanh
/// branch by a sigmoid gate.
PoolOutput instance_pool(const Var& h, const BoundParams& p, Pooling pooling);

struct BagForward {
  Var log_probs;  ///< 1 x 2
  std::vector<AttentionRecord> attention;  ///< filled for cross-scale attention only
};

BagForward forward_bag(Graph& graph, const cluster::Bag& bag, const BoundParams& p,
                       const ModelConfig& cfg);

struct BagPrediction {
  Eigen::RowVector2d log_probs;
  double p_positive = 0;
  std::vector<AttentionRecord> attention;
};

/// Forward pass without keeping the graph.
BagPrediction predict_bag(const cluster::Bag& bag, const ModelParams& params,
                          const ModelConfig& cfg);

// ---------------------------------------------------------------------------
// Binary checkpoint: magic, version, config digest, config JSON, then
// shape-tagged tensors with little-endian 64-bit values.

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
};

void save_checkpoint(const std::filesystem::path& file, const ModelConfig& cfg,
                     const ModelParams& params);
/// Throws FormatError on a corrupt file and IoError when it cannot be read.
Checkpoint load_checkpoint(const std::filesystem::path& file);
std::string checkpoint_bytes(const ModelConfig& cfg, const ModelParams& params);

}  // namespace csmil::model
