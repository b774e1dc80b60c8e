#include "tsmini/loss.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

namespace tsmini {

using ad::Node;
using ad::Shape;
using ad::ShapeError;
using ad::Tensor;

void LossConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("lambda must lie in [0, 1]");
}

SimilarityRow make_similarity_row(std::size_t anchor, std::span<const double> y_row, std::span<const double> x_row,
                                  bool exclude_self) {
  if (y_row.size() != x_row.size()) throw std::invalid_argument("similarity row: y and x lengths differ");
  if (anchor >= y_row.size()) throw std::invalid_argument("similarity row: anchor out of range");
  SimilarityRow row;
  row.anchor = anchor;
  for (std::size_t j = 0; j < y_row.size(); ++j) {
    if (exclude_self && j == anchor) continue;
    row.members.push_back(j);
    row.y.push_back(y_row[j]);
    row.x.push_back(x_row[j]);
  }
  row.order.resize(row.y.size());
  std::iota(row.order.begin(), row.order.end(), std::size_t{0});
  std::stable_sort(row.order.begin(), row.order.end(),
                   [&](std::size_t a, std::size_t b) { return row.y[a] > row.y[b]; });
  return row;
}

GainTable compute_gains(const SimilarityRow& row) {
  GainTable g;
  g.gains.resize(row.size());
  double dcg = 0.0;
  for (std::size_t r = 0; r < row.size(); ++r) {
    const double num = std::exp2(row.y[row.order[r]]) - 1.0;
    g.gains[r] = num;
    dcg += num / std::log2(static_cast<double>(r + 2));
  }
  g.max_dcg = dcg;
  const double denom = std::max(dcg, kMaxDcgFloor);
  for (double& v : g.gains) v /= denom;
  return g;
}

double rank_discount(std::size_t i, std::size_t j) {
  if (i == 0 || j <= i) throw std::invalid_argument("rank_discount: positions must satisfy 1 <= i < j");
  const double gap = static_cast<double>(j - i);
  return 1.0 / std::log2(gap + 1.0) - 1.0 / std::log2(gap + 2.0);
}

double log2_sigmoid(double z) {
  const double ln = z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
  return ln / std::numbers::ln2;
}

namespace {
// d/dz log2(sigmoid(z)) = (1 - sigmoid(z)) / ln 2 = sigmoid(-z) / ln 2.
double dlog2_sigmoid(double z) {
  const double s = z >= 0.0 ? std::exp(-z) / (1.0 + std::exp(-z)) : 1.0 / (1.0 + std::exp(z));
  return s / std::numbers::ln2;
}
}  // namespace

double knn_row_loss(const SimilarityRow& row, const LossConfig& cfg, std::vector<double>* grad_x) {
  const std::size_t L = row.size();
  if (grad_x) grad_x->assign(L, 0.0);
  if (L < 2) return 0.0;
  const GainTable g = compute_gains(row);
  const double lead = cfg.include_N_scale ? static_cast<double>(L) : 1.0;
  double total = 0.0;
  for (std::size_t i = 0; i < L; ++i) {
    const std::size_t ei = row.order[i];
    for (std::size_t j = i + 1; j < L; ++j) {
      const std::size_t ej = row.order[j];
      if (!(row.y[ei] > row.y[ej])) continue;
      const double w = rank_discount(i + 1, j + 1) * (g.gains[i] - g.gains[j]);
      const double z = row.x[ei] - row.x[ej];
      total += w * log2_sigmoid(z);
      if (grad_x) {
        const double dz = -lead * w * dlog2_sigmoid(z);
        (*grad_x)[ei] += dz;
        (*grad_x)[ej] -= dz;
      }
    }
  }
  return -lead * total;
}

double knn_loss(std::span<const SimilarityRow> rows, const LossConfig& cfg) {
  if (rows.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& r : rows) sum += knn_row_loss(r, cfg);
  return sum / static_cast<double>(rows.size());
}

std::vector<double> to_double_targets(const GroundTruthMatrix& gt) { return {gt.values.begin(), gt.values.end()}; }

template <typename T>
Tensor<T> predicted_similarity_matrix(const Tensor<T>& h) {
  const Shape& s = h.shape();
  if (s.rank != 2) throw ShapeError("predicted_similarity_matrix: expected (N, d), got " + s.str());
  const std::size_t n = s[0], d = s[1];
  const T* hv = h.data();
  std::vector<double> dist(n * n, 0.0);
  std::vector<T> out(n * n, T(1));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = static_cast<double>(hv[i * d + c]) - static_cast<double>(hv[j * d + c]);
        acc += diff * diff;
      }
      const double r = std::sqrt(acc);
      dist[i * n + j] = dist[j * n + i] = r;
      out[i * n + j] = out[j * n + i] = static_cast<T>(1.0 - r);
    }
  }
  return ad::make_result<T>(Shape{n, n}, std::move(out), {h}, [n, d, dist = std::move(dist)](Node<T>& node) {
    Node<T>& hn = *node.parents[0];
    if (!hn.requires_grad) return;
    T* gh = hn.grad_buffer();
    const T* hv = hn.value.data();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double r = dist[i * n + j];
        if (r == 0.0) continue;
        const double g = static_cast<double>(node.grad[i * n + j]);
        if (g == 0.0) continue;
        // d x_ij / d h_i = -(h_i - h_j) / r
        for (std::size_t c = 0; c < d; ++c) {
          const double u = (static_cast<double>(hv[i * d + c]) - static_cast<double>(hv[j * d + c])) / r;
          gh[i * d + c] -= static_cast<T>(g * u);
          gh[j * d + c] += static_cast<T>(g * u);
        }
      }
    }
  });
}

namespace {

template <typename T>
std::size_t check_square(const Tensor<T>& x, std::span<const double> y, const char* what) {
  const Shape& s = x.shape();
  if (s.rank != 2 || s[0] != s[1]) throw ShapeError(std::string(what) + ": expected square (N, N), got " + s.str());
  if (y.size() != s.numel()) {
    throw ShapeError(std::string(what) + ": targets hold " + std::to_string(y.size()) + " values for " + s.str());
  }
  return s[0];
}

}  // namespace

template <typename T>
Tensor<T> knn_loss(const Tensor<T>& x, std::span<const double> y, const LossConfig& cfg) {
  const std::size_t n = check_square(x, y, "knn_loss");
  std::vector<double> xd(x.value().begin(), x.value().end());
  std::vector<double> grad(n * n, 0.0);
  std::vector<double> row_grad;
  double total = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    const SimilarityRow row = make_similarity_row(a, y.subspan(a * n, n), std::span<const double>(xd).subspan(a * n, n),
                                                  cfg.exclude_self);
    total += knn_row_loss(row, cfg, &row_grad);
    for (std::size_t k = 0; k < row.size(); ++k) grad[a * n + row.members[k]] = row_grad[k] / static_cast<double>(n);
  }
  const double value = n == 0 ? 0.0 : total / static_cast<double>(n);
  return ad::make_result<T>(Shape{1}, {static_cast<T>(value)}, {x}, [grad = std::move(grad)](Node<T>& node) {
    Node<T>& xn = *node.parents[0];
    if (!xn.requires_grad) return;
    T* gx = xn.grad_buffer();
    const double up = static_cast<double>(node.grad[0]);
    for (std::size_t k = 0; k < grad.size(); ++k) gx[k] += static_cast<T>(up * grad[k]);
  });
}

template <typename T>
Tensor<T> weighted_mse(std::span<const double> y, const Tensor<T>& x, bool exclude_self) {
  const std::size_t n = check_square(x, y, "weighted_mse");
  const T* xv = x.data();
  std::vector<double> grad(n * n, 0.0);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (exclude_self && i == j) continue;
      const double yi = y[i * n + j];
      const double diff = yi - static_cast<double>(xv[i * n + j]);
      total += yi * diff * diff;
      grad[i * n + j] = -2.0 * yi * diff;
      ++count;
    }
  }
  const double denom = count == 0 ? 1.0 : static_cast<double>(count);
  for (double& g : grad) g /= denom;
  return ad::make_result<T>(Shape{1}, {static_cast<T>(total / denom)}, {x}, [grad = std::move(grad)](Node<T>& node) {
    Node<T>& xn = *node.parents[0];
    if (!xn.requires_grad) return;
    T* gx = xn.grad_buffer();
    const double up = static_cast<double>(node.grad[0]);
    for (std::size_t k = 0; k < grad.size(); ++k) gx[k] += static_cast<T>(up * grad[k]);
  });
}

template <typename T>
Tensor<T> combined_loss(const Tensor<T>& embeddings, std::span<const double> y, const LossConfig& cfg) {
  cfg.validate();
  const Tensor<T> x = predicted_similarity_matrix(embeddings);
  if (cfg.lambda == 1.0) return weighted_mse(y, x, cfg.exclude_self);
  if (cfg.lambda == 0.0) return knn_loss(x, y, cfg);
  return ad::add(ad::scale(weighted_mse(y, x, cfg.exclude_self), static_cast<T>(cfg.lambda)),
                 ad::scale(knn_loss(x, y, cfg), static_cast<T>(1.0 - cfg.lambda)));
}

#define TSMINI_INSTANTIATE_LOSS(T)                                                                        \
  template Tensor<T> predicted_similarity_matrix<T>(const Tensor<T>&);                                   \
  template Tensor<T> knn_loss<T>(const Tensor<T>&, std::span<const double>, const LossConfig&);          \
  template Tensor<T> weighted_mse<T>(std::span<const double>, const Tensor<T>&, bool);                   \
  template Tensor<T> combined_loss<T>(const Tensor<T>&, std::span<const double>, const LossConfig&);

TSMINI_INSTANTIATE_LOSS(float)
TSMINI_INSTANTIATE_LOSS(double)

#undef TSMINI_INSTANTIATE_LOSS

}  // namespace tsmini
