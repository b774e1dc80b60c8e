#pragma once

// Minimal dense reverse-mode autodiff. Tensors are row-major with up to four
// axes; the only broadcasting is of a trailing-shape operand across leading
// axes (bias-style add, shared-weight matmul). Instantiated for float
// (training) and double (gradient verification).

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tsmini::ad {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Shape {
  std::array<std::size_t, 4> dims{};
  std::size_t rank = 0;

  Shape() = default;
  Shape(std::initializer_list<std::size_t> d);

  std::size_t operator[](std::size_t i) const { return dims[i]; }
  std::size_t back() const { return dims[rank - 1]; }
  std::size_t numel() const;
  std::string str() const;

  friend bool operator==(const Shape& a, const Shape& b) {
    if (a.rank != b.rank) return false;
    for (std::size_t i = 0; i < a.rank; ++i)
      if (a.dims[i] != b.dims[i]) return false;
    return true;
  }
};

/// Validity flags for a right-padded batch: sequence b occupies positions
/// [0, lengths[b]) of [0, max_len).
struct Mask {
  std::vector<std::size_t> lengths;
  std::size_t max_len = 0;

  static Mask from_lengths(std::vector<std::size_t> lengths);
  static Mask full(std::size_t batch, std::size_t len);

  std::size_t batch() const { return lengths.size(); }
  bool valid(std::size_t b, std::size_t t) const { return t < lengths[b]; }
  std::size_t total_valid() const;
  /// Mask after a valid (unpadded) convolution of width `kernel`.
  Mask after_valid_conv(std::size_t kernel) const;
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // lazily sized to value.size()
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  T* grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad.data();
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor constant(Shape shape, std::vector<T> values);
  static Tensor zeros(Shape shape) { return constant(shape, std::vector<T>(shape.numel(), T(0))); }
  /// A leaf that receives gradients.
  static Tensor leaf(Shape shape, std::vector<T> values);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const T> value() const { return node_->value; }
  std::span<T> mutable_value() { return node_->value; }
  const T* data() const { return node_->value.data(); }
  T item() const;

  /// Gradient after backward(); zeros when nothing reached this tensor.
  std::span<const T> grad() const;
  void zero_grad();

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Disables graph construction on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Builds a result node. When grad mode is on and any input requires a
/// gradient, `backward` is attached; it reads `out.grad` and accumulates into
/// the inputs through `out.parents` (same order as `inputs`).
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, std::initializer_list<Tensor<T>> inputs,
                      std::function<void(Node<T>&)> backward);
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, const std::vector<Tensor<T>>& inputs,
                      std::function<void(Node<T>&)> backward);

// --- operations --------------------------------------------------------------

/// a (..., K) x b (K, N) -> (..., N), or batched a (B, M, K) x b (B, K, N).
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// Same shape, or b's shape equal to a's trailing axes (broadcast over the rest).
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> concat_last(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> slice_last(const Tensor<T>& a, std::size_t begin, std::size_t end);
template <typename T> Tensor<T> transpose_last2(const Tensor<T>& a);
template <typename T> Tensor<T> exp(const Tensor<T>& a);
template <typename T> Tensor<T> log2(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> leaky_relu(const Tensor<T>& a, T negative_slope);
template <typename T> Tensor<T> silu(const Tensor<T>& a);
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);

/// Softmax over the last axis. With a mask, axis 0 indexes the batch, the
/// last axis indexes keys, and invalid keys get probability 0.
template <typename T> Tensor<T> softmax_last(const Tensor<T>& a, const Mask* key_mask = nullptr);

/// (B, L, C) -> (B, C): average over the valid positions of each sequence.
template <typename T> Tensor<T> masked_mean(const Tensor<T>& a, const Mask& mask);

/// x (B, L, Cin), weight (K, Cin, Cout), bias (Cout) -> (B, L-K+1, Cout).
template <typename T> Tensor<T> conv1d_valid(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;

  explicit BatchNormState(std::size_t channels = 0) : running_mean(channels, T(0)), running_var(channels, T(1)) {}
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kRmsNormEps = 1e-6;

/// Per-channel normalization of x (B, L, C) over valid positions followed
/// by the affine gamma/beta. Training mode uses batch statistics and updates
/// `state` (unbiased variance for the running estimate); eval mode uses the
/// running statistics. Padded positions come out as zeros.
template <typename T>
Tensor<T> batch_norm_masked(const Tensor<T>& x, const Mask& mask, const Tensor<T>& gamma, const Tensor<T>& beta,
                            BatchNormState<T>& state, bool training, T momentum = T(kBatchNormMomentum),
                            T eps = T(kBatchNormEps));

/// x / sqrt(mean(x^2) + eps) * gain over the last axis.
template <typename T> Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& gain, T eps = T(kRmsNormEps));

/// Rotates coordinate pairs (2t, 2t+1) of x (..., L, D) at sequence position
/// p by p * base^(-2t/D). `positions` has one entry per row of axis -2.
template <typename T>
Tensor<T> rope_rotate(const Tensor<T>& x, std::span<const std::size_t> positions, double base = 10000.0);
/// Positions 0..L-1.
template <typename T> Tensor<T> rope_rotate(const Tensor<T>& x, double base = 10000.0);

/// Reverse-mode accumulation from a scalar root into every reachable leaf.
/// Leaf gradients accumulate across calls until zero_grad().
template <typename T> void backward(const Tensor<T>& root);

// --- verification --------------------------------------------------------------

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Central differences on up to `max_coords` sampled coordinates of each
/// parameter; relative error |a - n| / max(floor, |a| + |n|). `program` must
/// rebuild the graph from the current parameter values on every call.
GradCheckResult grad_check(const std::function<Tensor<double>()>& program, std::vector<Tensor<double>> params,
                           double h = 1e-5, std::size_t max_coords = 64, std::uint64_t seed = 0,
                           double floor = 1e-8);

}  // namespace tsmini::ad
