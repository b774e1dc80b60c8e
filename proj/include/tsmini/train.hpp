#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "tsmini/loss.hpp"
#include "tsmini/measures.hpp"
#include "tsmini/model.hpp"

namespace tsmini {

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  double lr = 0.002;
  double decay_factor = 0.5;
  std::size_t decay_every = 15;
  std::size_t max_epochs = 40;
  std::size_t batch_size = 128;
  std::size_t patience = 10;
  /// Final batches smaller than this are dropped.
  std::size_t min_batch = 4;
  /// Early stopping tracks HR@k on the validation set, k clipped to n - 1.
  std::size_t val_k = 10;
  LossConfig loss;
  std::uint64_t seed = 0;
  AdamParams adam;

  void validate() const;
};

/// lr0 * decay_factor^floor(epoch / decay_every).
double lr_at(std::size_t epoch, const TrainConfig& cfg);

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::uint64_t t = 0;
};

/// One bias-corrected Adam update of every tensor from its accumulated
/// gradient. Moments are allocated on first use; later calls must pass the
/// same tensors in the same order.
template <typename T>
void adam_step(std::span<ad::Tensor<T>> params, AdamState<T>& state, double lr, const AdamParams& hp = {});

/// Tracks the best validation score; stop once `patience` epochs pass
/// without a strict improvement.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  /// Returns true when `score` is a new best.
  bool update(std::size_t epoch, double score);
  bool should_stop() const { return since_best_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_score() const { return best_; }

 private:
  std::size_t patience_;
  double best_ = -std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::size_t since_best_ = 0;
};

enum class StopReason { MaxEpochs, EarlyStopping };

std::string_view to_string(StopReason r);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_hr = 0.0;
  double lr = 0.0;
  std::size_t batches = 0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_hr = 0.0;
  StopReason stop = StopReason::MaxEpochs;
};

struct TrainData {
  std::span<const Trajectory> train;
  GroundTruthMatrix train_gt;
  std::span<const Trajectory> val;
  GroundTruthMatrix val_gt;
};

/// Parameter values and batch-norm statistics, for restoring the best epoch.
template <typename T>
struct ModelSnapshot {
  std::vector<std::vector<T>> params;
  std::vector<ad::BatchNormState<T>> bn;
};

template <typename T>
ModelSnapshot<T> take_snapshot(const TSMini<T>& model);
template <typename T>
void restore_snapshot(TSMini<T>& model, const ModelSnapshot<T>& snap);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Seeded shuffling, combined loss per batch against the ground-truth
/// submatrix, Adam, validation HR after every epoch, early stopping, and a
/// final restore of the best epoch. Throws NumericError on a non-finite loss.
template <typename T>
TrainReport fit(TSMini<T>& model, const TrainData& data, const NormStats& stats, const TrainConfig& cfg,
                const EpochCallback& on_epoch = {});

/// Loss of one batch (training mode) with gradients accumulated into the
/// model parameters.
template <typename T>
double batch_loss_and_grad(TSMini<T>& model, std::span<const FeatureMatrix* const> features,
                           std::span<const double> y, const LossConfig& loss);

}  // namespace tsmini
