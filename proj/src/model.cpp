#include "tsmini/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tsmini {

using ad::Mask;
using ad::Shape;
using ad::Tensor;

std::size_t default_ffn_hidden(std::size_t d) {
  const std::size_t raw = 8 * d / 3;
  return (raw + 7) / 8 * 8;
}

std::size_t ModelConfig::ffn_dim() const { return ffn_hidden != 0 ? ffn_hidden : default_ffn_hidden(d); }

double ModelConfig::attention_scale() const { return 1.0 / std::sqrt(static_cast<double>(head_dim())); }

void ModelConfig::validate() const {
  if (d == 0 || heads == 0 || layers == 0) throw std::invalid_argument("model d, heads and layers must be positive");
  if (d % heads != 0) throw std::invalid_argument("model d must be divisible by heads");
  if (head_dim() % 2 != 0) throw std::invalid_argument("head dimension d/heads must be even for rotary embedding");
  if (!(leaky_slope >= 0.0) || !(rope_base > 1.0)) throw std::invalid_argument("invalid leaky slope or rope base");
}

// --- parameters ----------------------------------------------------------------

template <typename T>
Tensor<T>& ParameterStore<T>::add(const std::string& name, Shape shape, const std::string& init, std::size_t fan_in,
                                  std::mt19937_64& rng) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  std::vector<T> values(shape.numel());
  if (init == "uniform_fan_in") {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (auto& v : values) v = static_cast<T>(u(rng));
  } else if (init == "ones") {
    std::fill(values.begin(), values.end(), T(1));
  } else if (init != "zeros") {
    throw std::invalid_argument("unknown initializer '" + init + "'");
  }
  index_.emplace(name, params_.size());
  params_.push_back({name, init, Tensor<T>::leaf(shape, std::move(values))});
  return params_.back().tensor;
}

template <typename T>
const Tensor<T>& ParameterStore<T>::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return params_[it->second].tensor;
}

template <typename T>
Tensor<T>& ParameterStore<T>::get(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return params_[it->second].tensor;
}

template <typename T>
std::size_t ParameterStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

template <typename T>
std::vector<Tensor<T>> ParameterStore<T>::tensors() const {
  std::vector<Tensor<T>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.tensor);
  return out;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

// --- batching ----------------------------------------------------------------------

template <typename T>
FeatureBatch<T> make_feature_batch(std::span<const FeatureMatrix* const> normalized) {
  if (normalized.empty()) throw std::invalid_argument("empty feature batch");
  std::vector<std::size_t> lengths;
  lengths.reserve(normalized.size());
  for (const FeatureMatrix* f : normalized) lengths.push_back(f->rows);
  Mask mask = Mask::from_lengths(std::move(lengths));
  const std::size_t B = normalized.size(), L = mask.max_len;
  std::vector<T> values(B * L * kFeatureCount, T(0));
  for (std::size_t b = 0; b < B; ++b) {
    const auto& src = normalized[b]->values;
    std::transform(src.begin(), src.end(), values.begin() + b * L * kFeatureCount,
                   [](double v) { return static_cast<T>(v); });
  }
  return {Tensor<T>::constant(Shape{B, L, kFeatureCount}, std::move(values)), std::move(mask)};
}

// --- model ---------------------------------------------------------------------------

namespace {
std::string layer_prefix(std::size_t layer) { return "trajenc." + std::to_string(layer) + "."; }
}  // namespace

template <typename T>
TSMini<T>::TSMini(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  if (cfg_.ffn_hidden == 0) cfg_.ffn_hidden = default_ffn_hidden(cfg_.d);
  const std::size_t d = cfg_.d, k = ModelConfig::kConvKernel, f = cfg_.ffn_dim();
  std::mt19937_64 rng(seed);

  params_.add("svenc.linear_in.weight", Shape{kFeatureCount, d}, "uniform_fan_in", kFeatureCount, rng);
  params_.add("svenc.linear_in.bias", Shape{d}, "uniform_fan_in", kFeatureCount, rng);
  for (std::size_t b = 0; b < ModelConfig::kConvBlocks; ++b) {
    const std::string p = "svenc.conv" + std::to_string(b) + ".";
    params_.add(p + "weight", Shape{k, d, d}, "uniform_fan_in", k * d, rng);
    params_.add(p + "bias", Shape{d}, "uniform_fan_in", k * d, rng);
    params_.add(p + "bn.gamma", Shape{d}, "ones", 0, rng);
    params_.add(p + "bn.beta", Shape{d}, "zeros", 0, rng);
    bn_.emplace_back(d);
  }
  params_.add("svenc.linear_out.weight", Shape{d, d}, "uniform_fan_in", d, rng);
  params_.add("svenc.linear_out.bias", Shape{d}, "uniform_fan_in", d, rng);

  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    const std::string p = layer_prefix(l);
    params_.add(p + "attn_norm.gain", Shape{d}, "ones", 0, rng);
    // Head j of W_Q / W_K / W_V is the column block [j*d/h, (j+1)*d/h).
    params_.add(p + "attn.wq", Shape{d, d}, "uniform_fan_in", d, rng);
    params_.add(p + "attn.wk", Shape{d, d}, "uniform_fan_in", d, rng);
    params_.add(p + "attn.wv", Shape{d, d}, "uniform_fan_in", d, rng);
    params_.add(p + "attn.wo", Shape{d, d}, "uniform_fan_in", d, rng);
    params_.add(p + "ffn_norm.gain", Shape{d}, "ones", 0, rng);
    params_.add(p + "ffn.gate", Shape{d, f}, "uniform_fan_in", d, rng);
    params_.add(p + "ffn.up", Shape{d, f}, "uniform_fan_in", d, rng);
    params_.add(p + "ffn.down", Shape{f, d}, "uniform_fan_in", f, rng);
  }
}

template <typename T>
std::size_t TSMini<T>::trajenc_param_count(const ModelConfig& cfg) {
  const std::size_t d = cfg.d, h = cfg.heads, f = cfg.ffn_dim();
  return h * 3 * d * (d / h) + d * d + 2 * d + 3 * d * f;
}

template <typename T>
typename TSMini<T>::SubViews TSMini<T>::svenc_forward(const Tensor<T>& features, const Mask& mask) {
  const Shape& s = features.shape();
  if (s.rank != 3 || s[2] != kFeatureCount || s[0] != mask.batch() || s[1] != mask.max_len) {
    throw ad::ShapeError("svenc_forward: features " + s.str() + " do not match mask");
  }
  for (std::size_t len : mask.lengths) {
    if (len < ModelConfig::kLengthShrink + 1) {
      throw std::invalid_argument("trajectory with " + std::to_string(len) + " points is too short (need >= 7)");
    }
  }
  const T slope = static_cast<T>(cfg_.leaky_slope);
  Tensor<T> x = ad::add(ad::matmul(features, params_.get("svenc.linear_in.weight")), params_.get("svenc.linear_in.bias"));
  Mask m = mask;
  for (std::size_t b = 0; b < ModelConfig::kConvBlocks; ++b) {
    const std::string p = "svenc.conv" + std::to_string(b) + ".";
    x = ad::conv1d_valid(x, params_.get(p + "weight"), params_.get(p + "bias"));
    m = m.after_valid_conv(ModelConfig::kConvKernel);
    x = ad::batch_norm_masked(x, m, params_.get(p + "bn.gamma"), params_.get(p + "bn.beta"), bn_[b], training_);
    x = ad::leaky_relu(x, slope);
  }
  x = ad::add(ad::matmul(x, params_.get("svenc.linear_out.weight")), params_.get("svenc.linear_out.bias"));
  return {x, std::move(m)};
}

template <typename T>
Tensor<T> TSMini<T>::mhsa_forward(const Tensor<T>& xn, const Mask& mask, std::size_t layer, bool use_rope) {
  const std::string p = layer_prefix(layer);
  const std::size_t dh = cfg_.head_dim();
  const T alpha = static_cast<T>(cfg_.attention_scale());
  const Tensor<T> q = ad::matmul(xn, params_.get(p + "attn.wq"));
  const Tensor<T> k = ad::matmul(xn, params_.get(p + "attn.wk"));
  const Tensor<T> v = ad::matmul(xn, params_.get(p + "attn.wv"));
  std::vector<Tensor<T>> heads;
  heads.reserve(cfg_.heads);
  for (std::size_t j = 0; j < cfg_.heads; ++j) {
    Tensor<T> qj = ad::slice_last(q, j * dh, (j + 1) * dh);
    Tensor<T> kj = ad::slice_last(k, j * dh, (j + 1) * dh);
    const Tensor<T> vj = ad::slice_last(v, j * dh, (j + 1) * dh);
    if (use_rope) {
      qj = ad::rope_rotate(qj, cfg_.rope_base);
      kj = ad::rope_rotate(kj, cfg_.rope_base);
    }
    const Tensor<T> scores = ad::scale(ad::matmul(qj, ad::transpose_last2(kj)), alpha);
    heads.push_back(ad::matmul(ad::softmax_last(scores, &mask), vj));
  }
  return ad::matmul(ad::concat_last(heads), params_.get(p + "attn.wo"));
}

template <typename T>
Tensor<T> TSMini<T>::ffn_forward(const Tensor<T>& xn, std::size_t layer) {
  const std::string p = layer_prefix(layer);
  const Tensor<T> gate = ad::silu(ad::matmul(xn, params_.get(p + "ffn.gate")));
  const Tensor<T> up = ad::matmul(xn, params_.get(p + "ffn.up"));
  return ad::matmul(ad::mul(gate, up), params_.get(p + "ffn.down"));
}

template <typename T>
Tensor<T> TSMini<T>::trajenc_forward(const Tensor<T>& x, const Mask& mask, bool use_rope) {
  Tensor<T> h = x;
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    const std::string p = layer_prefix(l);
    h = ad::add(h, mhsa_forward(ad::rms_norm(h, params_.get(p + "attn_norm.gain")), mask, l, use_rope));
    h = ad::add(h, ffn_forward(ad::rms_norm(h, params_.get(p + "ffn_norm.gain")), l));
  }
  return ad::masked_mean(h, mask);
}

template <typename T>
Tensor<T> TSMini<T>::forward(const FeatureBatch<T>& batch) {
  SubViews sv = svenc_forward(batch.features, batch.mask);
  return trajenc_forward(sv.x, sv.mask);
}

// --- inference helpers ------------------------------------------------------------------

template <typename T>
Embeddings embed_trajectories(TSMini<T>& model, std::span<const Trajectory> trajs, const NormStats& stats,
                              std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  model.set_training(false);
  ad::NoGradGuard no_grad;
  Embeddings out;
  out.count = trajs.size();
  out.d = model.config().d;
  out.values.reserve(out.count * out.d);
  std::vector<FeatureMatrix> feats;
  std::vector<const FeatureMatrix*> ptrs;
  for (std::size_t start = 0; start < trajs.size(); start += batch_size) {
    const std::size_t end = std::min(trajs.size(), start + batch_size);
    feats.clear();
    ptrs.clear();
    for (std::size_t i = start; i < end; ++i) {
      if (trajs[i].size() < ModelConfig::kLengthShrink + 1) {
        throw std::invalid_argument("trajectory '" + trajs[i].id + "' is too short to encode (need >= 7 points)");
      }
      feats.push_back(normalize_features(augment_features(trajs[i]), stats));
    }
    for (const auto& f : feats) ptrs.push_back(&f);
    const Tensor<T> emb = model.forward(make_feature_batch<T>(ptrs));
    for (T v : emb.value()) out.values.push_back(static_cast<float>(v));
  }
  return out;
}

template <typename T>
std::vector<T> encode(TSMini<T>& model, const Trajectory& traj, const NormStats& stats) {
  if (traj.size() < ModelConfig::kLengthShrink + 1) {
    throw std::invalid_argument("trajectory '" + traj.id + "' is too short to encode (need >= 7 points)");
  }
  model.set_training(false);
  ad::NoGradGuard no_grad;
  const FeatureMatrix f = normalize_features(augment_features(traj), stats);
  const FeatureMatrix* ptr = &f;
  const Tensor<T> emb = model.forward(make_feature_batch<T>(std::span<const FeatureMatrix* const>(&ptr, 1)));
  return {emb.value().begin(), emb.value().end()};
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template class TSMini<float>;
template class TSMini<double>;
template FeatureBatch<float> make_feature_batch<float>(std::span<const FeatureMatrix* const>);
template FeatureBatch<double> make_feature_batch<double>(std::span<const FeatureMatrix* const>);
template Embeddings embed_trajectories<float>(TSMini<float>&, std::span<const Trajectory>, const NormStats&,
                                              std::size_t);
template Embeddings embed_trajectories<double>(TSMini<double>&, std::span<const Trajectory>, const NormStats&,
                                               std::size_t);
template std::vector<float> encode<float>(TSMini<float>&, const Trajectory&, const NormStats&);
template std::vector<double> encode<double>(TSMini<double>&, const Trajectory&, const NormStats&);

}  // namespace tsmini
