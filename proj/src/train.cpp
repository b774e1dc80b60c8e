#include "tsmini/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "tsmini/errors.hpp"
#include "tsmini/eval.hpp"

namespace tsmini {

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !(decay_factor > 0.0) || decay_every == 0 || max_epochs == 0 || batch_size == 0 ||
      patience == 0 || val_k == 0) {
    throw std::invalid_argument("training hyperparameters must be positive");
  }
  if (patience > max_epochs) throw std::invalid_argument("patience must not exceed max epochs");
  if (min_batch < 2) throw std::invalid_argument("min_batch must be at least 2");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0) || !(adam.eps > 0.0)) {
    throw std::invalid_argument("invalid Adam hyperparameters");
  }
  loss.validate();
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  return cfg.lr * std::pow(cfg.decay_factor, static_cast<double>(epoch / cfg.decay_every));
}

template <typename T>
void adam_step(std::span<ad::Tensor<T>> params, AdamState<T>& state, double lr, const AdamParams& hp) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), T(0));
      state.v.emplace_back(p.numel(), T(0));
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: parameter list changed");
  ++state.t;
  const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto value = params[k].mutable_value();
    const auto grad = params[k].grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != value.size()) throw std::invalid_argument("adam_step: moment shape mismatch");
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = static_cast<double>(grad[i]);
      const double mi = hp.beta1 * static_cast<double>(m[i]) + (1.0 - hp.beta1) * g;
      const double vi = hp.beta2 * static_cast<double>(v[i]) + (1.0 - hp.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double step = lr * (mi / bc1) / (std::sqrt(vi / bc2) + hp.eps);
      value[i] = static_cast<T>(static_cast<double>(value[i]) - step);
    }
  }
}

bool EarlyStopping::update(std::size_t epoch, double score) {
  if (score > best_) {
    best_ = score;
    best_epoch_ = epoch;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

std::string_view to_string(StopReason r) { return r == StopReason::MaxEpochs ? "max_epochs" : "early_stopping"; }

template <typename T>
ModelSnapshot<T> take_snapshot(const TSMini<T>& model) {
  ModelSnapshot<T> s;
  for (const auto& p : model.params().all()) s.params.emplace_back(p.tensor.value().begin(), p.tensor.value().end());
  s.bn = model.bn_states();
  return s;
}

template <typename T>
void restore_snapshot(TSMini<T>& model, const ModelSnapshot<T>& snap) {
  auto& all = model.params().all();
  if (all.size() != snap.params.size()) throw std::invalid_argument("snapshot does not match model");
  for (std::size_t k = 0; k < all.size(); ++k) {
    auto dst = all[k].tensor.mutable_value();
    if (dst.size() != snap.params[k].size()) throw std::invalid_argument("snapshot does not match model");
    std::copy(snap.params[k].begin(), snap.params[k].end(), dst.begin());
  }
  model.bn_states() = snap.bn;
}

template <typename T>
double batch_loss_and_grad(TSMini<T>& model, std::span<const FeatureMatrix* const> features, std::span<const double> y,
                           const LossConfig& loss) {
  model.set_training(true);
  model.params().zero_grad();
  const ad::Tensor<T> emb = model.forward(make_feature_batch<T>(features));
  const ad::Tensor<T> l = combined_loss(emb, y, loss);
  const double value = static_cast<double>(l.item());
  if (std::isfinite(value)) ad::backward(l);
  return value;
}

template <typename T>
TrainReport fit(TSMini<T>& model, const TrainData& data, const NormStats& stats, const TrainConfig& cfg,
                const EpochCallback& on_epoch) {
  cfg.validate();
  const std::size_t n = data.train.size();
  if (data.train_gt.n != n) throw std::invalid_argument("training ground truth does not match the training set");
  if (data.val_gt.n != data.val.size()) {
    throw std::invalid_argument("validation ground truth does not match the validation set");
  }
  if (data.val.size() < 2) throw std::invalid_argument("validation set needs at least 2 trajectories");
  if (n < cfg.min_batch) throw std::invalid_argument("training set is smaller than the minimum batch");

  std::vector<FeatureMatrix> feats;
  feats.reserve(n);
  for (const auto& t : data.train) feats.push_back(normalize_features(augment_features(t), stats));

  const std::size_t val_k = std::min(cfg.val_k, data.val.size() - 1);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<ad::Tensor<T>> params = model.params().tensors();
  AdamState<T> adam;
  EarlyStopping stopper(cfg.patience);
  ModelSnapshot<T> best = take_snapshot(model);
  TrainReport report;

  std::vector<const FeatureMatrix*> batch_feats;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      if (end - start < cfg.min_batch) break;
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      batch_feats.clear();
      for (std::size_t i : idx) batch_feats.push_back(&feats[i]);
      const std::vector<double> y = to_double_targets(data.train_gt.submatrix(idx));
      const double l = batch_loss_and_grad(model, std::span<const FeatureMatrix* const>(batch_feats), y, cfg.loss);
      if (!std::isfinite(l)) {
        std::ostringstream msg;
        msg << "non-finite training loss " << l << " at epoch " << epoch << ", batch " << batches << " (lr " << lr
            << ")";
        throw NumericError(msg.str());
      }
      adam_step<T>(params, adam, lr, cfg.adam);
      loss_sum += l;
      ++batches;
    }

    const Embeddings val_emb = embed_trajectories(model, data.val, stats);
    const double val_hr = mean_hr_at_k(val_emb, data.val_gt, val_k);
    model.set_training(true);

    const EpochRecord rec{epoch, batches ? loss_sum / static_cast<double>(batches) : 0.0, val_hr, lr, batches};
    report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (stopper.update(epoch, val_hr)) best = take_snapshot(model);
    if (stopper.should_stop()) {
      report.stop = StopReason::EarlyStopping;
      break;
    }
  }
  restore_snapshot(model, best);
  model.set_training(false);
  report.best_epoch = stopper.best_epoch();
  report.best_val_hr = stopper.best_score();
  return report;
}

#define TSMINI_INSTANTIATE_TRAIN(T)                                                                             \
  template void adam_step<T>(std::span<ad::Tensor<T>>, AdamState<T>&, double, const AdamParams&);             \
  template ModelSnapshot<T> take_snapshot<T>(const TSMini<T>&);                                                \
  template void restore_snapshot<T>(TSMini<T>&, const ModelSnapshot<T>&);                                      \
  template double batch_loss_and_grad<T>(TSMini<T>&, std::span<const FeatureMatrix* const>,                    \
                                         std::span<const double>, const LossConfig&);                          \
  template TrainReport fit<T>(TSMini<T>&, const TrainData&, const NormStats&, const TrainConfig&,              \
                              const EpochCallback&);

TSMINI_INSTANTIATE_TRAIN(float)
TSMINI_INSTANTIATE_TRAIN(double)

#undef TSMINI_INSTANTIATE_TRAIN

}  // namespace tsmini
