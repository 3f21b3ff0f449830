#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hfc/autodiff.hpp"
#include "hfc/rng.hpp"
#include "hfc/tensor.hpp"

namespace hfc {

/// What the classifier reads.
enum class FeatureSource {
  task_embedding,  ///< output of the last TSA block
  class_token,     ///< class-token row after the last MSA block; TSA skipped
  concat,          ///< task embedding followed by the class-token row
};

std::string_view to_string(FeatureSource source);
FeatureSource parse_feature_source(std::string_view text);

struct ModelConfig {
  std::size_t image_side = 16;
  std::size_t channels = 1;
  std::size_t patch = 4;
  std::size_t dim = 32;
  std::size_t heads = 4;
  std::size_t msa_blocks = 2;
  std::size_t tsa_blocks = 1;
  std::size_t mlp_ratio = 4;
  /// Classifier rows so far (K_total).
  std::size_t num_classes = 0;
  FeatureSource feature_source = FeatureSource::task_embedding;
  double init_std = 0.2;

  std::size_t head_dim() const { return dim / heads; }
  std::size_t grid() const { return image_side / patch; }
  std::size_t num_patches() const { return grid() * grid(); }
  /// Patches plus the class token.
  std::size_t tokens() const { return num_patches() + 1; }
  std::size_t patch_dim() const { return channels * patch * patch; }
  std::size_t feature_dim() const { return feature_source == FeatureSource::concat ? 2 * dim : dim; }

  /// Throws std::invalid_argument naming the violated constraint.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Ordered, named parameter tensors.
class ParameterStore {
 public:
  std::size_t add(std::string name, Tensor value);
  std::size_t index(std::string_view name) const;
  bool contains(std::string_view name) const;

  Tensor& operator[](std::size_t i) { return values_.at(i); }
  const Tensor& operator[](std::size_t i) const { return values_.at(i); }
  Tensor& get(std::string_view name) { return values_[index(name)]; }
  const Tensor& get(std::string_view name) const { return values_[index(name)]; }

  std::size_t size() const noexcept { return values_.size(); }
  std::span<const std::string> names() const noexcept { return names_; }
  std::span<Tensor> values() noexcept { return values_; }
  std::span<const Tensor> values() const noexcept { return values_; }

  friend bool operator==(const ParameterStore& a, const ParameterStore& b) {
    return a.names_ == b.names_ && a.values_ == b.values_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::unordered_map<std::string, std::size_t> lookup_;
};

struct MlpVars {
  Var norm_gain, norm_bias;
  Var fc1_weight, fc1_bias;
  Var fc2_weight, fc2_bias;
};

struct MsaVars {
  Var norm_gain, norm_bias;
  Var query, key, value;  // [D, D], head h owns columns [h*d, (h+1)*d)
  Var output;             // [D, D]
  MlpVars mlp;
};

struct TsaVars {
  Var embed_norm_gain, embed_norm_bias;
  Var token_norm_gain, token_norm_bias;
  Var query, key, value, output;
  MlpVars mlp;
};

/// Attention probabilities per head, each [B, rows, tokens].
using AttentionTrace = std::vector<Tensor>;

/// x -> W2·gelu(W1·LN(x) + b1) + b2 on the last axis.
Var mlp_block(const MlpVars& p, Var x);

/// Self-attention block over z of shape [B, T, D]:
/// m = z + concat_h(softmax(q_h k_hᵀ/√d) v_h)·W_o with q, k, v read from LN(z),
/// then m + MLP(m).
Var msa_block(const MsaVars& p, Var z, std::size_t heads, AttentionTrace* trace = nullptr);

/// Task-semantic aggregation: e of shape [B, 1, D] attends over z [B, T, D].
/// t = concat_h(softmax(q_h k_hᵀ/√d) v_h)·V_o with q from LN(e) and k, v from
/// LN(z); returns t + MLP(t). There is no residual from e.
Var tsa_block(const TsaVars& p, Var e, Var z, std::size_t heads, AttentionTrace* trace = nullptr);

/// [B, C, S, S] images to [B, N, C·p·p] patch rows. Patches are ordered
/// row-major over the patch grid; each row is channel-major, then y, then x.
Tensor patchify(const Tensor& images, const ModelConfig& config);

struct ForwardResult {
  Var logits;   // [B, K_total]
  Var feature;  // [B, feature_dim]
  Var tokens;   // [B, T, D] after the last MSA block
};

/// Parameters bound onto one computation record, in store order.
struct BoundParameters {
  std::vector<Var> vars;
};

/// Patch embedding, MSA stack, TSA stack seeded with the task-shared
/// embedding, and a linear classifier that can grow.
///
/// Token layout: patch rows 0..N-1, class token at row N.
class Model {
 public:
  Model(ModelConfig config, Rng& init_rng);

  const ModelConfig& config() const noexcept { return config_; }
  std::size_t num_classes() const noexcept { return config_.num_classes; }

  ParameterStore& parameters() noexcept { return params_; }
  const ParameterStore& parameters() const noexcept { return params_; }

  /// Binds every parameter as a gradient leaf (or constant when the record
  /// is in inference mode).
  BoundParameters bind(Graph& graph) const;
  ForwardResult forward(Graph& graph, const BoundParameters& bound, const Tensor& images,
                        AttentionTrace* trace = nullptr) const;

  /// Patch embedding Z_0 of shape [B, N+1, D].
  Var embed(Graph& graph, const BoundParameters& bound, const Tensor& images) const;

  Tensor logits(const Tensor& images) const;
  Tensor probabilities(const Tensor& images) const;
  Tensor features(const Tensor& images) const;

  /// Appends `count` classifier rows drawn from normal(0, init_std). Existing
  /// rows and biases are copied unchanged.
  void expand_classifier(std::size_t count, Rng& rng);

  const Tensor& task_embedding() const { return params_[slot_.task_embedding]; }

  /// Var views into a bound record, for block-level use.
  MsaVars msa_vars(const BoundParameters& bound, std::size_t block) const;
  TsaVars tsa_vars(const BoundParameters& bound, std::size_t block) const;

  friend bool operator==(const Model& a, const Model& b) { return a.config_ == b.config_ && a.params_ == b.params_; }

 private:
  struct MlpSlots {
    std::size_t norm_gain, norm_bias, fc1_weight, fc1_bias, fc2_weight, fc2_bias;
  };
  struct MsaSlots {
    std::size_t norm_gain, norm_bias, query, key, value, output;
    MlpSlots mlp;
  };
  struct TsaSlots {
    std::size_t embed_norm_gain, embed_norm_bias, token_norm_gain, token_norm_bias, query, key, value, output;
    MlpSlots mlp;
  };
  struct Slots {
    std::size_t patch_weight, patch_bias, class_token, position, task_embedding;
    std::vector<MsaSlots> msa;
    std::vector<TsaSlots> tsa;
    std::size_t classifier_weight, classifier_bias;
  };

  Model(ModelConfig config, ParameterStore params);

  void add_mlp(const std::string& prefix, Rng& rng);
  void rebuild_slots();
  static MlpVars mlp_vars(const BoundParameters& bound, const MlpSlots& s);

  ModelConfig config_;
  ParameterStore params_;
  Slots slot_{};

  friend Model load_model_parameters(ModelConfig config, ParameterStore params);
};

/// Rebuilds a model around an existing parameter store; every name and shape
/// must match what `config` produces.
Model load_model_parameters(ModelConfig config, ParameterStore params);

/// Immutable copy of a trained model used as the distillation teacher. Its
/// forward passes always run on inference-mode records.
class FrozenModel {
 public:
  explicit FrozenModel(Model model) : model_(std::make_shared<const Model>(std::move(model))) {}

  std::size_t num_classes() const noexcept { return model_->num_classes(); }
  Tensor probabilities(const Tensor& images) const { return model_->probabilities(images); }
  Tensor logits(const Tensor& images) const { return model_->logits(images); }
  const Model& model() const noexcept { return *model_; }

 private:
  std::shared_ptr<const Model> model_;
};

FrozenModel snapshot_old_model(const Model& model);

/// Binary checkpoint; layout documented in README.md.
void save_checkpoint(const std::filesystem::path& path, const Model& model, std::size_t task_index);

struct Checkpoint {
  Model model;
  std::size_t task_index;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace hfc
