#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tsmini/autodiff.hpp"
#include "tsmini/measures.hpp"

namespace tsmini {

struct LossConfig {
  double lambda = 0.2;
  bool include_N_scale = true;
  bool exclude_self = true;

  /// Throws std::invalid_argument unless lambda is in [0, 1].
  void validate() const;
};

/// One anchor's list of ground-truth (y) and predicted (x) similarities.
/// `members[k]` is the batch index of entry k; `order` sorts y descending
/// with ties broken by k.
struct SimilarityRow {
  std::size_t anchor = 0;
  std::vector<std::size_t> members;
  std::vector<double> y;
  std::vector<double> x;
  std::vector<std::size_t> order;

  std::size_t size() const { return y.size(); }
};

SimilarityRow make_similarity_row(std::size_t anchor, std::span<const double> y_row, std::span<const double> x_row,
                                  bool exclude_self);

/// Gains in rank order: gains[r] belongs to entry order[r].
struct GainTable {
  double max_dcg = 0.0;
  std::vector<double> gains;
};

inline constexpr double kMaxDcgFloor = 1e-12;

GainTable compute_gains(const SimilarityRow& row);

/// Discount difference for 1-based rank positions i < j.
double rank_discount(std::size_t i, std::size_t j);

/// Numerically stable log2(sigmoid(z)).
double log2_sigmoid(double z);

/// Per-anchor kNN-guided loss. With `grad_x`, also writes d loss / d x
/// aligned with row.x.
double knn_row_loss(const SimilarityRow& row, const LossConfig& cfg, std::vector<double>* grad_x = nullptr);

/// Mean of knn_row_loss over rows.
double knn_loss(std::span<const SimilarityRow> rows, const LossConfig& cfg);

/// x_ij = 1 - ||h_i - h_j||_2 for embeddings (N, d); diagonal exactly 1.
template <typename T>
ad::Tensor<T> predicted_similarity_matrix(const ad::Tensor<T>& embeddings);

/// kNN-guided loss over every anchor of an (N, N) predicted matrix against
/// row-major targets y (N*N).
template <typename T>
ad::Tensor<T> knn_loss(const ad::Tensor<T>& x, std::span<const double> y, const LossConfig& cfg);

/// Mean over included ordered pairs of y * (y - x)^2.
template <typename T>
ad::Tensor<T> weighted_mse(std::span<const double> y, const ad::Tensor<T>& x, bool exclude_self);

/// lambda * weighted_mse + (1 - lambda) * knn_loss on the embeddings'
/// predicted similarity matrix. A term with weight 0 is not evaluated.
template <typename T>
ad::Tensor<T> combined_loss(const ad::Tensor<T>& embeddings, std::span<const double> y, const LossConfig& cfg);

std::vector<double> to_double_targets(const GroundTruthMatrix& gt);

}  // namespace tsmini
