#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "tsmini/errors.hpp"
#include "tsmini/eval.hpp"

using namespace tsmini;

namespace {

Ranking iota_ranking(std::size_t n, std::size_t start = 0) {
  Ranking r(n);
  std::iota(r.begin(), r.end(), start);
  return r;
}

GroundTruthMatrix random_gt(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.01f, 0.99f);
  GroundTruthMatrix m{n, std::vector<float>(n * n, 1.0f)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) m.values[i * n + j] = m.values[j * n + i] = u(rng);
  return m;
}

Embeddings random_embeddings(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<float> g(0.0f, 1.0f);
  Embeddings e{n, d, std::vector<float>(n * d)};
  for (auto& v : e.values) v = g(rng);
  return e;
}

}  // namespace

TEST(HitRatio, IdenticalDisjointAndPartial) {
  const Ranking r = iota_ranking(20);
  EXPECT_EQ(hr_at_k(r, r, 10), 1.0);
  EXPECT_EQ(hr_at_k(iota_ranking(10), iota_ranking(10, 10), 10), 0.0);
  // gt top-3 {A,B,C} = {0,1,2}; pred top-3 {A,C,D} = {0,2,3}.
  EXPECT_DOUBLE_EQ(hr_at_k({0, 1, 2, 3}, {0, 2, 3, 1}, 3), 2.0 / 3.0);
  EXPECT_THROW(hr_at_k(iota_ranking(5), iota_ranking(5), 6), std::invalid_argument);
  EXPECT_THROW(hr_at_k(iota_ranking(5), iota_ranking(5), 0), std::invalid_argument);
}

TEST(HitRatio, IgnoresOrderBelowCutoff) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 50; ++t) {
    Ranking gt = iota_ranking(60), pred = iota_ranking(60);
    std::shuffle(gt.begin(), gt.end(), rng);
    std::shuffle(pred.begin(), pred.end(), rng);
    const double a10 = hr_at_k(gt, pred, 10), a50 = r10_at_50(gt, pred);
    Ranking pred2 = pred;
    std::shuffle(pred2.begin() + 50, pred2.end(), rng);
    std::shuffle(pred2.begin() + 10, pred2.begin() + 50, rng);
    EXPECT_EQ(hr_at_k(gt, pred2, 10), a10);
    EXPECT_EQ(r10_at_50(gt, pred2), a50);
    EXPECT_GE(r10_at_50(gt, pred), hr_at_k(gt, pred, 10));
  }
}

TEST(RecallTenAtFifty, Cases) {
  const Ranking r = iota_ranking(60);
  EXPECT_EQ(r10_at_50(r, r), 1.0);
  // gt top-10 sits at predicted positions 41-50.
  Ranking pred = iota_ranking(60, 0);
  std::rotate(pred.begin(), pred.begin() + 10, pred.begin() + 50);
  EXPECT_EQ(std::vector<std::size_t>(pred.begin() + 40, pred.begin() + 50), iota_ranking(10));
  EXPECT_EQ(r10_at_50(r, pred), 1.0);
  // gt top-10 beyond predicted position 50.
  Ranking far = iota_ranking(60, 0);
  std::rotate(far.begin(), far.begin() + 10, far.end());
  EXPECT_EQ(r10_at_50(r, far), 0.0);
  EXPECT_THROW(r10_at_50(iota_ranking(49), iota_ranking(49)), std::invalid_argument);
}

TEST(Ranking, DescendingStableAndSelfFree) {
  const std::vector<double> sims{0.2, 0.9, 0.5, 0.9, 1.0};
  EXPECT_EQ(rank_by_similarity(sims), (Ranking{4, 1, 3, 2, 0}));
  EXPECT_EQ(rank_by_similarity(sims, 4), (Ranking{1, 3, 2, 0}));
}

TEST(KnnQuery, FindsSelfAndMatchesNaiveSort) {
  std::mt19937_64 rng(2);
  const Embeddings corpus = random_embeddings(30, 8, rng);
  EXPECT_EQ(knn_query(corpus.row(5), corpus, 1), (Ranking{5}));
  for (int t = 0; t < 20; ++t) {
    const Embeddings q = random_embeddings(1, 8, rng);
    std::vector<std::pair<double, std::size_t>> naive;
    for (std::size_t i = 0; i < corpus.count; ++i) {
      double d2 = 0;
      for (std::size_t k = 0; k < 8; ++k) d2 += std::pow(double(q.values[k]) - double(corpus.row(i)[k]), 2);
      naive.push_back({1.0 - std::sqrt(d2), i});
    }
    std::stable_sort(naive.begin(), naive.end(), [](auto& a, auto& b) { return a.first > b.first; });
    const Ranking full = knn_query(q.row(0), corpus, corpus.count);
    ASSERT_EQ(full.size(), corpus.count);
    for (std::size_t i = 0; i < full.size(); ++i) EXPECT_EQ(full[i], naive[i].second);
  }
  EXPECT_THROW(knn_query(corpus.row(0), corpus, 31), std::invalid_argument);
  EXPECT_THROW(knn_query(corpus.row(0), Embeddings{0, 8, {}}, 1), std::invalid_argument);
}

TEST(KnnQuery, TiesBreakByLowerIndex) {
  const Embeddings corpus{4, 2, {1, 0, -1, 0, 0, 1, 0, -1}};
  const std::vector<float> origin{0, 0};
  EXPECT_EQ(knn_query(origin, corpus, 4), (Ranking{0, 1, 2, 3}));
}

TEST(Evaluate, OracleScoresOne) {
  std::mt19937_64 rng(3);
  const MetricsReport r = evaluate_oracle(random_gt(80, rng));
  ASSERT_TRUE(r.hr10 && r.hr50 && r.r10_50);
  EXPECT_EQ(*r.hr10, 1.0);
  EXPECT_EQ(*r.hr50, 1.0);
  EXPECT_EQ(*r.r10_50, 1.0);
  EXPECT_EQ(r.queries, 80u);
}

TEST(Evaluate, RandomEmbeddingsNearChance) {
  double hr10 = 0, hr50 = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(100 + seed);
    const GroundTruthMatrix gt = random_gt(200, rng);
    const Embeddings e = random_embeddings(200, 16, rng);
    const MetricsReport r = evaluate_embeddings(e, e, gt);
    hr10 += *r.hr10 / 5.0;
    hr50 += *r.hr50 / 5.0;
  }
  EXPECT_NEAR(hr10, 10.0 / 199.0, 0.03);
  EXPECT_NEAR(hr50, 50.0 / 199.0, 0.03);
  EXPECT_GE(hr50, hr10 - 0.03);
}

TEST(Evaluate, SmallSetsReportAbsentMetrics) {
  std::mt19937_64 rng(4);
  const GroundTruthMatrix gt = random_gt(30, rng);
  const MetricsReport r = evaluate_embeddings(random_embeddings(30, 4, rng), random_embeddings(30, 4, rng), gt);
  EXPECT_TRUE(r.hr10.has_value());
  EXPECT_FALSE(r.hr50.has_value());
  EXPECT_FALSE(r.r10_50.has_value());
  EXPECT_FALSE(r.notes.empty());
  const MetricsReport tiny = evaluate_oracle(random_gt(5, rng));
  EXPECT_FALSE(tiny.hr10.has_value());
  EXPECT_THROW(evaluate_embeddings(random_embeddings(4, 2, rng), random_embeddings(4, 2, rng), random_gt(5, rng)),
               std::invalid_argument);
}

TEST(Evaluate, MeanHitRatioMatchesReport) {
  std::mt19937_64 rng(5);
  const GroundTruthMatrix gt = random_gt(60, rng);
  const Embeddings e = random_embeddings(60, 6, rng);
  EXPECT_DOUBLE_EQ(mean_hr_at_k(e, gt, 10), *evaluate_embeddings(e, e, gt).hr10);
}

TEST(Evaluate, ModelPipelineWithDegradedQueries) {
  SynthConfig sc;
  sc.count = 60;
  sc.n_min = 20;
  sc.n_max = 40;
  sc.seed = 6;
  const auto test = synth_generate(sc);
  std::vector<FeatureMatrix> feats;
  for (const auto& t : test) feats.push_back(augment_features(t));
  const NormStats stats = fit_norm_stats(feats);
  const GroundTruthMatrix gt =
      build_gt_matrix(test, MeasureKind::DTW, estimate_scale(test, MeasureKind::DTW, 0));
  ModelConfig mc;
  mc.d = 16;
  mc.heads = 2;
  TSMini<float> model(mc, 1);
  const MetricsReport clean = evaluate(model, std::span<const Trajectory>(test), stats, gt);
  const MetricsReport again = evaluate(model, std::span<const Trajectory>(test), stats, gt);
  EXPECT_EQ(*clean.hr10, *again.hr10);
  for (const auto& v : {clean.hr10, clean.hr50, clean.r10_50}) {
    ASSERT_TRUE(v.has_value());
    EXPECT_GE(*v, 0.0);
    EXPECT_LE(*v, 1.0);
  }
  RobustnessOptions ro;
  ro.mask_ratio = 0.4;
  ro.seed = 9;
  const MetricsReport masked = evaluate(model, std::span<const Trajectory>(test), stats, gt, ro);
  EXPECT_NE(*masked.hr10, *clean.hr10);
}

TEST(Degrade, QueriesOnlyAndSeeded) {
  SynthConfig sc;
  sc.count = 10;
  sc.seed = 7;
  const auto trajs = synth_generate(sc);
  RobustnessOptions ro;
  EXPECT_FALSE(ro.active());
  EXPECT_EQ(degrade_queries(trajs, ro), trajs);
  ro.mask_ratio = 0.4;
  ro.shift_meters = 20.0;
  const auto a = degrade_queries(trajs, ro), b = degrade_queries(trajs, ro);
  EXPECT_EQ(a, b);
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    EXPECT_LT(a[i].points.size(), trajs[i].points.size());
    EXPECT_EQ(a[i].id, trajs[i].id);
  }
}

TEST(TembFormat, RoundTripAndErrors) {
  std::mt19937_64 rng(8);
  const Embeddings e = random_embeddings(7, 5, rng);
  std::stringstream ss;
  write_embeddings(ss, e);
  const std::string bytes = ss.str();
  ASSERT_EQ(bytes.size(), 16u + 4u * 35u);
  EXPECT_EQ(bytes.substr(0, 4), "TEMB");
  EXPECT_EQ(read_embeddings(ss), e);

  std::string bad = bytes;
  bad[3] = 'X';
  std::istringstream b1(bad);
  EXPECT_THROW(read_embeddings(b1), FormatError);
  std::string newer = bytes;
  newer[4] = 2;
  std::istringstream b2(newer);
  EXPECT_THROW(read_embeddings(b2), VersionError);
  std::istringstream b3(bytes.substr(0, bytes.size() - 1));
  EXPECT_THROW(read_embeddings(b3), FormatError);
}

TEST(MetricsText, SixDecimalsAndNotes) {
  MetricsReport r;
  r.hr10 = 0.5;
  r.r10_50 = 2.0 / 3.0;
  r.notes.push_back("HR@50 needs at least 50 candidates");
  std::ostringstream os;
  write_metrics(os, r);
  EXPECT_EQ(os.str(), "HR@10\t0.500000\nR10@50\t0.666667\n# HR@50 needs at least 50 candidates\n");
}
