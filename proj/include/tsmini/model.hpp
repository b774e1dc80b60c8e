#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tsmini/autodiff.hpp"
#include "tsmini/geo.hpp"

namespace tsmini {

struct ModelConfig {
  std::size_t d = 128;
  std::size_t heads = 8;
  std::size_t layers = 1;
  double leaky_slope = 0.01;
  double rope_base = 10000.0;
  std::size_t ffn_hidden = 0;  // 0: derive from d

  static constexpr std::size_t kConvKernel = 3;
  static constexpr std::size_t kConvBlocks = 3;
  /// Sub-views lost to the three valid convolutions: m = n - 6.
  static constexpr std::size_t kLengthShrink = kConvBlocks * (kConvKernel - 1);

  std::size_t head_dim() const { return d / heads; }
  std::size_t ffn_dim() const;
  double attention_scale() const;
  /// Throws std::invalid_argument unless heads divides d and d/heads is even.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// int(8d/3) rounded up to a multiple of 8.
std::size_t default_ffn_hidden(std::size_t d);

template <typename T>
struct Parameter {
  std::string name;
  std::string init;  // "uniform_fan_in", "ones" or "zeros"
  ad::Tensor<T> tensor;
};

template <typename T>
class ParameterStore {
 public:
  ad::Tensor<T>& add(const std::string& name, ad::Shape shape, const std::string& init, std::size_t fan_in,
                     std::mt19937_64& rng);
  const ad::Tensor<T>& get(const std::string& name) const;
  ad::Tensor<T>& get(const std::string& name);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Parameter<T>>& all() { return params_; }
  const std::vector<Parameter<T>>& all() const { return params_; }
  std::size_t scalar_count() const;
  std::vector<ad::Tensor<T>> tensors() const;
  void zero_grad();

 private:
  std::vector<Parameter<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// A right-padded batch of normalized feature matrices.
template <typename T>
struct FeatureBatch {
  ad::Tensor<T> features;  // (B, n_max, 7)
  ad::Mask mask;
};

template <typename T>
FeatureBatch<T> make_feature_batch(std::span<const FeatureMatrix* const> normalized);

/// The TSMini encoder: sub-view encoder (linear, three conv/batch-norm/
/// leaky-relu blocks, linear) followed by the attention trajectory encoder
/// and masked average pooling.
template <typename T>
class TSMini {
 public:
  explicit TSMini(const ModelConfig& cfg, std::uint64_t seed = 0);

  const ModelConfig& config() const { return cfg_; }
  ParameterStore<T>& params() { return params_; }
  const ParameterStore<T>& params() const { return params_; }
  std::vector<ad::BatchNormState<T>>& bn_states() { return bn_; }
  const std::vector<ad::BatchNormState<T>>& bn_states() const { return bn_; }

  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }

  struct SubViews {
    ad::Tensor<T> x;  // (B, m_max, d)
    ad::Mask mask;    // valid sub-view positions, m_i = n_i - 6
  };

  SubViews svenc_forward(const ad::Tensor<T>& features, const ad::Mask& mask);
  /// Multi-head self-attention over RMS-normalized input; no causal mask.
  ad::Tensor<T> mhsa_forward(const ad::Tensor<T>& x_normed, const ad::Mask& mask, std::size_t layer,
                             bool use_rope = true);
  ad::Tensor<T> ffn_forward(const ad::Tensor<T>& x_normed, std::size_t layer);
  /// Residual attention + SwiGLU blocks, then masked average pooling: (B, d).
  ad::Tensor<T> trajenc_forward(const ad::Tensor<T>& x, const ad::Mask& mask, bool use_rope = true);
  ad::Tensor<T> forward(const FeatureBatch<T>& batch);

  /// Closed-form trajectory-encoder parameter count per layer.
  static std::size_t trajenc_param_count(const ModelConfig& cfg);

 private:
  ModelConfig cfg_;
  ParameterStore<T> params_;
  std::vector<ad::BatchNormState<T>> bn_;
  bool training_ = true;
};

/// Row-major (count x d) embedding table.
struct Embeddings {
  std::size_t count = 0;
  std::size_t d = 0;
  std::vector<float> values;

  std::span<const float> row(std::size_t i) const { return {values.data() + i * d, d}; }
  friend bool operator==(const Embeddings&, const Embeddings&) = default;
};

/// Eval-mode embedding of cleaned planar trajectories (augment, normalize,
/// encode). Throws std::invalid_argument for trajectories shorter than 7
/// points. Leaves the model in eval mode.
template <typename T>
Embeddings embed_trajectories(TSMini<T>& model, std::span<const Trajectory> trajs, const NormStats& stats,
                              std::size_t batch_size = 128);

template <typename T>
std::vector<T> encode(TSMini<T>& model, const Trajectory& traj, const NormStats& stats);

}  // namespace tsmini
