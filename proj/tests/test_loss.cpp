#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "reference_loss.hpp"
#include "tsmini/loss.hpp"

using namespace tsmini;
using ad::Shape;
using ad::Tensor;
using tsmini::testing::reference_knn_loss;

namespace {

std::vector<double> random_symmetric(std::size_t n, std::mt19937_64& rng, double lo, double hi, double diag) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> m(n * n, diag);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) m[i * n + j] = m[j * n + i] = u(rng);
  return m;
}

double knn_value(const std::vector<double>& y, const std::vector<double>& x, std::size_t n, const LossConfig& cfg = {}) {
  return knn_loss(Tensor<double>::constant(Shape{n, n}, x), y, cfg).item();
}

Tensor<double> random_embeddings(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0, 0.5);
  std::vector<double> v(n * d);
  for (auto& e : v) e = g(rng);
  return Tensor<double>::leaf(Shape{n, d}, v);
}

}  // namespace

TEST(Gains, SingleElement) {
  const std::vector<double> y{1.0, 1.0}, x{1.0, 0.0};
  const SimilarityRow row = make_similarity_row(0, std::span<const double>(y).subspan(0, 2),
                                                std::span<const double>(x).subspan(0, 2), true);
  ASSERT_EQ(row.size(), 1u);
  const GainTable g = compute_gains(row);
  EXPECT_DOUBLE_EQ(g.max_dcg, 1.0);
  EXPECT_DOUBLE_EQ(g.gains[0], 1.0);
}

TEST(Gains, TwoElementExample) {
  const std::vector<double> y{1.0, 0.1, 0.9}, x{1.0, 0.5, 0.5};
  const SimilarityRow row = make_similarity_row(0, y, x, true);
  EXPECT_EQ(row.order, (std::vector<std::size_t>{1, 0}));
  const GainTable g = compute_gains(row);
  EXPECT_NEAR(g.max_dcg, (std::pow(2.0, 0.9) - 1.0) + (std::pow(2.0, 0.1) - 1.0) / std::log2(3.0), 1e-15);
  EXPECT_NEAR(g.gains[0], 0.9503, 1e-4);
  EXPECT_NEAR(g.gains[1], 0.0788, 1e-4);
}

TEST(Gains, EqualTargetsAndAllZero) {
  const std::vector<double> y{1.0, 0.4, 0.4, 0.4}, x(4, 0.0);
  const GainTable g = compute_gains(make_similarity_row(0, y, x, true));
  EXPECT_EQ(g.gains[0], g.gains[1]);
  EXPECT_EQ(g.gains[1], g.gains[2]);
  const std::vector<double> zeros(4, 0.0);
  const GainTable z = compute_gains(make_similarity_row(0, zeros, x, true));
  EXPECT_EQ(z.max_dcg, 0.0);
  for (double v : z.gains) EXPECT_EQ(v, 0.0);
}

TEST(Gains, NonincreasingInRank) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    const auto y = random_symmetric(12, rng, 0.0, 1.0, 1.0);
    const GainTable g = compute_gains(make_similarity_row(0, std::span<const double>(y).subspan(0, 12),
                                                          std::span<const double>(y).subspan(0, 12), true));
    for (std::size_t r = 1; r < g.gains.size(); ++r) EXPECT_LE(g.gains[r], g.gains[r - 1]);
  }
}

TEST(Discount, KnownValues) {
  EXPECT_NEAR(rank_discount(1, 2), 1.0 - 1.0 / std::log2(3.0), 1e-15);
  EXPECT_NEAR(rank_discount(1, 2), 0.3691, 1e-4);
  EXPECT_NEAR(rank_discount(2, 5), 1.0 / 2.0 - 1.0 / std::log2(5.0), 1e-15);
  EXPECT_THROW(rank_discount(2, 2), std::invalid_argument);
  EXPECT_THROW(rank_discount(0, 1), std::invalid_argument);
}

TEST(Log2Sigmoid, StableAtExtremes) {
  EXPECT_DOUBLE_EQ(log2_sigmoid(0.0), -1.0);
  EXPECT_NEAR(log2_sigmoid(-800.0), -800.0 / std::log(2.0), 1e-9);
  EXPECT_EQ(log2_sigmoid(800.0), -0.0);
  EXPECT_NEAR(log2_sigmoid(2.0), std::log2(1.0 / (1.0 + std::exp(-2.0))), 1e-15);
}

TEST(KnnLoss, TwoMemberExample) {
  // Anchor 0 sees y = [0.9, 0.1] with equal predictions.
  const std::vector<double> y{1.0, 0.9, 0.1}, x{1.0, 0.3, 0.3};
  const SimilarityRow row = make_similarity_row(0, y, x, true);
  EXPECT_NEAR(knn_row_loss(row, LossConfig{}), 0.6434, 1e-3);
  const double exact = 2.0 * rank_discount(1, 2) * (compute_gains(row).gains[0] - compute_gains(row).gains[1]);
  EXPECT_NEAR(knn_row_loss(row, LossConfig{}), exact, 1e-15);
  LossConfig unscaled;
  unscaled.include_N_scale = false;
  EXPECT_NEAR(knn_row_loss(row, unscaled), exact / 2.0, 1e-15);
}

TEST(KnnLoss, MatchesTermByTermReference) {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<std::size_t> size(2, 17);
  for (int batch = 0; batch < 50; ++batch) {
    const std::size_t n = size(rng);
    auto y = random_symmetric(n, rng, 0.0, 1.0, 1.0);
    if (batch % 5 == 0) {
      // Inject ties.
      for (std::size_t i = 0; i + 1 < n; i += 2) y[i * n + ((i + 1) % n)] = y[((i + 1) % n) * n + i] = 0.5;
    }
    const auto x = random_symmetric(n, rng, -2.0, 1.0, 1.0);
    EXPECT_NEAR(knn_value(y, x, n), reference_knn_loss(y, x, n), 1e-9) << "batch " << batch << " n " << n;
    LossConfig unscaled;
    unscaled.include_N_scale = false;
    EXPECT_NEAR(knn_value(y, x, n, unscaled), reference_knn_loss(y, x, n, false), 1e-9);
  }
}

TEST(KnnLoss, RowAndTensorPathsAgree) {
  std::mt19937_64 rng(5);
  const std::size_t n = 9;
  const auto y = random_symmetric(n, rng, 0.0, 1.0, 1.0);
  const auto x = random_symmetric(n, rng, -1.0, 1.0, 1.0);
  std::vector<SimilarityRow> rows;
  for (std::size_t a = 0; a < n; ++a)
    rows.push_back(make_similarity_row(a, std::span<const double>(y).subspan(a * n, n),
                                       std::span<const double>(x).subspan(a * n, n), true));
  EXPECT_NEAR(knn_loss(std::span<const SimilarityRow>(rows), LossConfig{}), knn_value(y, x, n), 1e-12);
}

TEST(KnnLoss, AllEqualTargetsGiveZero) {
  std::mt19937_64 rng(6);
  const std::size_t n = 6;
  const std::vector<double> y(n * n, 0.7);
  const auto x = random_symmetric(n, rng, -1.0, 1.0, 1.0);
  EXPECT_EQ(knn_value(y, x, n), 0.0);
}

TEST(KnnLoss, InvariantUnderBatchPermutation) {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = 10;
    const auto y = random_symmetric(n, rng, 0.0, 1.0, 1.0);
    const auto x = random_symmetric(n, rng, -1.0, 1.0, 1.0);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> yp(n * n), xp(n * n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        yp[i * n + j] = y[perm[i] * n + perm[j]];
        xp[i * n + j] = x[perm[i] * n + perm[j]];
      }
    const double a = knn_value(y, x, n), b = knn_value(yp, xp, n);
    EXPECT_NEAR(a, b, 1e-12 * std::abs(a));
  }
}

TEST(KnnLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  for (std::size_t n : {3u, 7u, 12u}) {
    const auto y = random_symmetric(n, rng, 0.0, 1.0, 1.0);
    std::vector<double> x = random_symmetric(n, rng, -1.0, 1.0, 1.0);
    const Tensor<double> leaf = Tensor<double>::leaf(Shape{n, n}, x);
    const Tensor<double> loss = knn_loss(leaf, y, LossConfig{});
    ad::backward(loss);
    const double h = 1e-6;
    for (std::size_t k = 0; k < n * n; ++k) {
      std::vector<double> plus = x, minus = x;
      plus[k] += h;
      minus[k] -= h;
      const double numeric = (knn_value(y, plus, n) - knn_value(y, minus, n)) / (2 * h);
      EXPECT_NEAR(leaf.grad()[k], numeric, 1e-6) << "n " << n << " k " << k;
    }
  }
}

TEST(KnnLoss, DecreasesAsTopMarginGrows) {
  std::mt19937_64 rng(9);
  const std::size_t n = 8;
  const auto y = random_symmetric(n, rng, 0.0, 1.0, 1.0);
  auto x = random_symmetric(n, rng, -1.0, 1.0, 1.0);
  // Entry with the largest target in anchor 0's row outranks every other
  // member, so raising its prediction widens only correctly-ordered margins.
  std::size_t top = 1;
  for (std::size_t j = 2; j < n; ++j)
    if (y[j] > y[top]) top = j;
  double prev = knn_value(y, x, n);
  for (int step = 0; step < 40; ++step) {
    x[top] += 0.5;
    const double cur = knn_value(y, x, n);
    EXPECT_LT(cur, prev);
    prev = cur;
  }
  // Rows other than anchor 0 are unaffected, so the remaining loss is theirs.
  std::vector<double> xa = x;
  xa[top] += 1e6;
  const double remaining = knn_value(y, xa, n);
  EXPECT_GE(remaining, 0.0);
  EXPECT_LT(remaining, prev);
}

TEST(KnnLoss, VanishesWithLargeCorrectMargins) {
  const std::size_t n = 5;
  std::vector<double> y(n * n), x(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double d = std::abs(static_cast<double>(i) - static_cast<double>(j));
      y[i * n + j] = std::exp(-d);
      x[i * n + j] = -40.0 * d;
    }
  double prev = knn_value(y, x, n);
  for (double s : {2.0, 4.0, 8.0}) {
    std::vector<double> xs = x;
    for (auto& v : xs) v *= s;
    const double cur = knn_value(y, xs, n);
    EXPECT_LE(cur, prev);
    prev = cur;
  }
  EXPECT_LT(prev, 1e-12);
}

TEST(PredictedSimilarity, DefinitionAndSymmetry) {
  const Tensor<double> e = Tensor<double>::constant(Shape{3, 2}, {0, 0, 0, 1, 0, 0});
  const auto x = predicted_similarity_matrix(e);
  EXPECT_EQ(x.value()[0 * 3 + 0], 1.0);
  EXPECT_DOUBLE_EQ(x.value()[0 * 3 + 1], 0.0);
  EXPECT_DOUBLE_EQ(x.value()[0 * 3 + 2], 1.0);
  std::mt19937_64 rng(10);
  const auto r = predicted_similarity_matrix(random_embeddings(7, 5, rng));
  for (std::size_t i = 0; i < 7; ++i) {
    EXPECT_EQ(r.value()[i * 7 + i], 1.0);
    for (std::size_t j = 0; j < 7; ++j) EXPECT_NEAR(r.value()[i * 7 + j], r.value()[j * 7 + i], 1e-7);
  }
}

TEST(PredictedSimilarity, GradientThroughEmbeddings) {
  std::mt19937_64 rng(11);
  const auto e = random_embeddings(6, 4, rng);
  std::vector<double> w(36);
  std::uniform_real_distribution<double> u(-1, 1);
  for (auto& v : w) v = u(rng);
  const auto r = ad::grad_check(
      [&] { return ad::sum(ad::mul(predicted_similarity_matrix(e), Tensor<double>::constant(Shape{6, 6}, w))); }, {e});
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(WeightedMse, Examples) {
  const std::vector<double> y{1.0, 1.0, 1.0, 1.0};
  EXPECT_EQ(weighted_mse(y, Tensor<double>::constant(Shape{2, 2}, y), true).item(), 0.0);
  const auto half = Tensor<double>::constant(Shape{2, 2}, {1.0, 0.5, 0.5, 1.0});
  EXPECT_DOUBLE_EQ(weighted_mse(y, half, true).item(), 0.25);
  EXPECT_DOUBLE_EQ(weighted_mse(y, half, false).item(), 0.125);
  const std::vector<double> y2{1.0, 0.5, 0.5, 1.0};
  const auto x1 = Tensor<double>::constant(Shape{2, 2}, {1.0, 0.3, 0.3, 1.0});
  const auto x2 = Tensor<double>::constant(Shape{2, 2}, {1.0, 0.1, 0.1, 1.0});
  EXPECT_NEAR(weighted_mse(y2, x2, true).item(), 4.0 * weighted_mse(y2, x1, true).item(), 1e-15);
  EXPECT_THROW(weighted_mse(std::vector<double>(3, 1.0), half, true), std::invalid_argument);
}

TEST(CombinedLoss, EndpointsAndLinearity) {
  std::mt19937_64 rng(12);
  const std::size_t n = 8;
  const auto e = random_embeddings(n, 6, rng);
  const auto y = random_symmetric(n, rng, 0.0, 1.0, 1.0);
  const auto x = predicted_similarity_matrix(e);
  const double mse = weighted_mse(y, x, true).item();
  const double knn = knn_loss(x, y, LossConfig{}).item();
  LossConfig c;
  c.lambda = 1.0;
  EXPECT_EQ(combined_loss(e, y, c).item(), mse);
  c.lambda = 0.0;
  EXPECT_EQ(combined_loss(e, y, c).item(), knn);
  c.lambda = 0.2;
  EXPECT_NEAR(combined_loss(e, y, c).item(), 0.2 * mse + 0.8 * knn, 1e-12);
  double prev = mse;
  for (double lam = 0.9; lam > -0.05; lam -= 0.1) {
    c.lambda = std::max(lam, 0.0);
    const double v = combined_loss(e, y, c).item();
    EXPECT_GE(v, std::min(mse, knn) - 1e-12);
    EXPECT_LE(v, std::max(mse, knn) + 1e-12);
    if (knn > mse) EXPECT_GE(v, prev - 1e-12);
    else EXPECT_LE(v, prev + 1e-12);
    prev = v;
  }
  c.lambda = 1.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}
