#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "tsmini/errors.hpp"
#include "tsmini/geo.hpp"

using namespace tsmini;

namespace {

Trajectory make(std::initializer_list<Point> pts, std::string id = "t") { return {std::move(id), pts}; }

Trajectory distinct_line(std::size_t n) {
  Trajectory t{"line", {}};
  for (std::size_t i = 0; i < n; ++i) t.points.push_back({static_cast<double>(i), 0.5 * static_cast<double>(i % 3)});
  return t;
}

// Angle between two vectors via atan2 of cross and dot; independent of the
// acos route used by augment_features.
double vector_angle(double ax, double ay, double bx, double by) {
  return std::abs(std::atan2(ax * by - ay * bx, ax * bx + ay * by));
}

}  // namespace

TEST(Clean, CollapsesConsecutiveDuplicates) {
  Trajectory raw{"dups", {}};
  for (int k = 0; k < 20; ++k) {
    const Point p = k % 2 == 0 ? Point{0, 0} : Point{1, 1};
    raw.points.push_back(p);
    raw.points.push_back(p);
  }
  ASSERT_EQ(raw.size(), 40u);
  const auto c = clean_trajectory(raw);
  ASSERT_TRUE(c.has_value());
  EXPECT_EQ(c->size(), 20u);
  for (std::size_t i = 1; i < c->size(); ++i) EXPECT_FALSE(c->points[i] == c->points[i - 1]);
}

TEST(Clean, RejectsTooShortAndTooLong) {
  EXPECT_FALSE(clean_trajectory(distinct_line(19)).has_value());
  EXPECT_TRUE(clean_trajectory(distinct_line(20)).has_value());
  EXPECT_TRUE(clean_trajectory(distinct_line(200)).has_value());
  EXPECT_FALSE(clean_trajectory(distinct_line(250)).has_value());
}

TEST(Clean, NonFiniteIsAFault) {
  Trajectory t = distinct_line(25);
  t.points[3].x = std::nan("");
  EXPECT_THROW(clean_trajectory(t), std::invalid_argument);
  EXPECT_THROW(clean_trajectory(Trajectory{"empty", {}}), std::invalid_argument);
}

TEST(Clean, Idempotent) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> coord(0, 3);
  for (int trial = 0; trial < 50; ++trial) {
    Trajectory t{"r", {}};
    for (int i = 0; i < 80; ++i) t.points.push_back({static_cast<double>(coord(rng)), static_cast<double>(coord(rng))});
    const auto once = clean_trajectory(t, {1, 1000});
    ASSERT_TRUE(once.has_value());
    const auto twice = clean_trajectory(*once, {1, 1000});
    ASSERT_TRUE(twice.has_value());
    EXPECT_EQ(once->points, twice->points);
  }
}

TEST(Projection, OriginAndMilliDegree) {
  const LocalFrame f{0.0};
  const Point o = f.project({0.0, 0.0});
  EXPECT_DOUBLE_EQ(o.x, 0.0);
  EXPECT_DOUBLE_EQ(o.y, 0.0);
  const double expected = 6371000.0 * (0.001 * std::numbers::pi / 180.0);  // ≈ 111.19 m
  const Point p = f.project({0.001, 0.0});
  EXPECT_NEAR(p.x, expected, 1e-9);
  EXPECT_NEAR(p.x, 111.19, 0.01);
  EXPECT_DOUBLE_EQ(p.y, 0.0);
}

TEST(Projection, LatitudeStepIndependentOfReference) {
  for (double ref : {0.0, 30.0, 60.0}) {
    const LocalFrame f{ref};
    const double dy = f.project({5.0, 10.001}).y - f.project({5.0, 10.0}).y;
    EXPECT_NEAR(dy, 111.19, 0.01);
  }
}

TEST(Projection, RoundTripAndRangeErrors) {
  const LocalFrame f{41.15};
  const Trajectory t = make({{-8.61, 41.15}, {-8.6, 41.16}, {-8.59, 41.2}});
  const Trajectory back = unproject_from_local_plane(project_to_local_plane(t, f), f);
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_NEAR(back.points[i].x, t.points[i].x, 1e-12);
    EXPECT_NEAR(back.points[i].y, t.points[i].y, 1e-12);
  }
  EXPECT_THROW(f.project({181.0, 0.0}), std::invalid_argument);
  EXPECT_THROW(f.project({0.0, 90.0}), std::invalid_argument);
}

TEST(Projection, PreservesSmallDistanceRatios) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> lat0(-60.0, 60.0), off(-0.08, 0.08), ang(0, 2 * std::numbers::pi);
  for (int trial = 0; trial < 200; ++trial) {
    const double lat = lat0(rng);
    const double lon = 10.0;
    const LocalFrame f{lat};
    // Two short east and north hops near a point within ~10 km of the center.
    const Point c{lon + off(rng) / std::cos(lat * std::numbers::pi / 180.0) * 0.5, lat + off(rng) * 0.5};
    auto great_circle = [](Point a, Point b) {
      const double r = std::numbers::pi / 180.0;
      const double dlat = (b.y - a.y) * r, dlon = (b.x - a.x) * r;
      const double h = std::sin(dlat / 2) * std::sin(dlat / 2) +
                       std::cos(a.y * r) * std::cos(b.y * r) * std::sin(dlon / 2) * std::sin(dlon / 2);
      return 2 * 6371000.0 * std::asin(std::sqrt(h));
    };
    const double a1 = ang(rng), a2 = ang(rng);
    const Point p{c.x + 0.002 * std::cos(a1), c.y + 0.002 * std::sin(a1)};
    const Point q{c.x + 0.002 * std::cos(a2), c.y + 0.002 * std::sin(a2)};
    const double planar = distance(f.project(c), f.project(p)) / distance(f.project(c), f.project(q));
    const double sphere = great_circle(c, p) / great_circle(c, q);
    EXPECT_NEAR(planar / sphere, 1.0, 0.01);
  }
}

TEST(Features, RightAngleRows) {
  const FeatureMatrix f = augment_features(make({{0, 0}, {1, 0}, {1, 1}}));
  ASSERT_EQ(f.rows, 3u);
  const double half_pi = std::numbers::pi / 2;
  const std::array<double, 7> p2{1, 0, 1, 1, 0, half_pi, half_pi};
  const std::array<double, 7> p1{0, 0, 0, 1, 0, 0, 0};
  for (std::size_t c = 0; c < 7; ++c) {
    EXPECT_NEAR(f.at(1, c), p2[c], 1e-12) << "col " << c;
    EXPECT_NEAR(f.at(0, c), p1[c], 1e-12) << "col " << c;
  }
  // Interior angle against an independent atan2 routine.
  EXPECT_NEAR(f.at(1, 6), vector_angle(1, 0, 0, 1), 1e-12);
  // Last row: successor-dependent entries are zero.
  EXPECT_EQ(f.at(2, 3), 0.0);
  EXPECT_EQ(f.at(2, 5), 0.0);
  EXPECT_EQ(f.at(2, 6), 0.0);
}

TEST(Features, CollinearTurnIsZero) {
  const FeatureMatrix f = augment_features(make({{0, 0}, {1, 0}, {2, 0}}));
  EXPECT_NEAR(f.at(1, 6), 0.0, 1e-12);
}

TEST(Features, RangesAndTranslationInvariance) {
  SynthConfig sc;
  sc.count = 40;
  const auto trajs = synth_generate(sc);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> shift(-5000, 5000);
  for (const auto& t : trajs) {
    const FeatureMatrix f = augment_features(t);
    ASSERT_EQ(f.rows, t.size());
    Trajectory moved = t;
    const double dx = shift(rng), dy = shift(rng);
    for (auto& p : moved.points) p = {p.x + dx, p.y + dy};
    const FeatureMatrix g = augment_features(moved);
    for (std::size_t r = 0; r < f.rows; ++r) {
      EXPECT_GE(f.at(r, 2), 0.0);
      EXPECT_GE(f.at(r, 3), 0.0);
      EXPECT_GE(f.at(r, 6), 0.0);
      EXPECT_LE(f.at(r, 6), std::numbers::pi);
      for (std::size_t c = 2; c < 7; ++c) EXPECT_NEAR(f.at(r, c), g.at(r, c), 1e-6);
      // Interior rows against the independent angle routine.
      if (r > 0 && r + 1 < f.rows) {
        const Point a = t.points[r - 1], b = t.points[r], c = t.points[r + 1];
        EXPECT_NEAR(f.at(r, 6), vector_angle(b.x - a.x, b.y - a.y, c.x - b.x, c.y - b.y), 1e-7);
      }
    }
  }
}

TEST(Features, NeedsTwoPoints) { EXPECT_THROW(augment_features(make({{0, 0}})), std::invalid_argument); }

TEST(Normalize, ZScoreContract) {
  FeatureMatrix a;
  a.rows = 2;
  a.values.assign(14, 0.0);
  for (std::size_t c = 0; c < 7; ++c) {
    a.at(0, c) = 3.0;
    a.at(1, c) = c == 0 ? 3.0 : 5.0;
  }
  const std::vector<FeatureMatrix> train{a};
  const NormStats st = fit_norm_stats(train);
  EXPECT_EQ(st.stddev[0], 1.0);  // constant column
  const FeatureMatrix z = normalize_features(a, st);
  EXPECT_EQ(z.at(0, 0), 0.0);
  EXPECT_EQ(z.at(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(z.at(1, 1), 1.0);  // mean + std
  EXPECT_DOUBLE_EQ(z.at(0, 1), -1.0);
  const FeatureMatrix twice = normalize_features(z, st);
  EXPECT_NE(twice.at(1, 1), z.at(1, 1));
}

TEST(Synth, DeterministicAndWithinBounds) {
  SynthConfig sc;
  sc.count = 100;
  sc.n_min = 20;
  sc.n_max = 50;
  const auto a = synth_generate(sc);
  const auto b = synth_generate(sc);
  ASSERT_EQ(a.size(), 100u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].points, b[i].points);
    EXPECT_GE(a[i].size(), 20u);
    EXPECT_LE(a[i].size(), 50u);
    EXPECT_TRUE(clean_trajectory(a[i]).has_value());
  }
}

TEST(Synth, PathLengthMatchesLogNormalMoments) {
  SynthConfig sc;
  sc.count = 200;
  sc.n_min = sc.n_max = 20;
  sc.step_log_mu = std::log(10.0);
  sc.step_log_sigma = 0.4;
  const double s2 = sc.step_log_sigma * sc.step_log_sigma;
  const double mean_step = std::exp(sc.step_log_mu + s2 / 2);
  const double var_step = (std::exp(s2) - 1) * std::exp(2 * sc.step_log_mu + s2);
  const double mean = 19 * mean_step, sd = std::sqrt(19 * var_step);
  for (const auto& t : synth_generate(sc)) {
    double len = 0.0;
    for (std::size_t i = 1; i < t.size(); ++i) len += distance(t.points[i - 1], t.points[i]);
    EXPECT_NEAR(len, mean, 5 * sd);
  }
}

TEST(Synth, RejectsBadConfig) {
  SynthConfig sc;
  sc.x_max = sc.x_min;
  EXPECT_THROW(synth_generate(sc), std::invalid_argument);
  SynthConfig short_len;
  short_len.n_min = 10;
  EXPECT_THROW(synth_generate(short_len), std::invalid_argument);
}

TEST(Mask, RemovesInteriorPoints) {
  const Trajectory t = distinct_line(20);
  EXPECT_EQ(mask_points(t, 0.0, 1).points, t.points);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Trajectory m = mask_points(t, 0.4, seed);
    EXPECT_EQ(m.size(), 12u);
    EXPECT_EQ(m.points.front(), t.points.front());
    EXPECT_EQ(m.points.back(), t.points.back());
  }
  EXPECT_EQ(mask_points(t, 0.4, 9).points, mask_points(t, 0.4, 9).points);
  EXPECT_THROW(mask_points(t, 1.0, 0), std::invalid_argument);
}

TEST(Shift, StaysInsideDisk) {
  const Trajectory t = distinct_line(50);
  EXPECT_EQ(shift_points(t, 0.0, 1).points, t.points);
  const Trajectory s = shift_points(t, 100.0, 4);
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_LE(distance(s.points[i], t.points[i]), 100.0);
  EXPECT_NE(shift_points(t, 100.0, 1).points, shift_points(t, 100.0, 2).points);
  EXPECT_EQ(shift_points(t, 100.0, 3).points, shift_points(t, 100.0, 3).points);
}

TEST(TextFormat, RoundTripAndErrors) {
  SynthConfig sc;
  sc.count = 5;
  const auto trajs = synth_generate(sc);
  std::stringstream ss;
  write_trajectories(ss, trajs);
  const auto back = read_trajectories(ss);
  ASSERT_EQ(back.size(), trajs.size());
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    EXPECT_EQ(back[i].id, trajs[i].id);
    EXPECT_EQ(back[i].points, trajs[i].points);
  }
  std::istringstream comments("# header\n\nx\t1,2;3,4\n");
  EXPECT_EQ(read_trajectories(comments).size(), 1u);
  std::istringstream bad("ok\t1,2\nbad\t1,2;abc,3\n");
  try {
    read_trajectories(bad, "in.txt");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("abc"), std::string::npos);
  }
}
