// Direct transcriptions of the recursive measure definitions. No memo, no
// rolling rows, no projection shortcuts: these exist to be obviously right.

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "tsmini/measures.hpp"

namespace tsmini {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double naive_dtw(const std::vector<Point>& a, const std::vector<Point>& b, long i, long j) {
  if (i < 0 || j < 0) return kInf;
  const double d = std::hypot(a[i].x - b[j].x, a[i].y - b[j].y);
  if (i == 0 && j == 0) return d;
  return d + std::min({naive_dtw(a, b, i - 1, j), naive_dtw(a, b, i, j - 1), naive_dtw(a, b, i - 1, j - 1)});
}

double naive_frechet(const std::vector<Point>& a, const std::vector<Point>& b, long i, long j) {
  if (i < 0 || j < 0) return kInf;
  const double d = std::hypot(a[i].x - b[j].x, a[i].y - b[j].y);
  if (i == 0 && j == 0) return d;
  return std::max(d, std::min({naive_frechet(a, b, i - 1, j), naive_frechet(a, b, i, j - 1),
                               naive_frechet(a, b, i - 1, j - 1)}));
}

double dist(Point p, Point q) { return std::hypot(p.x - q.x, p.y - q.y); }

// Closest point to p on the segment [s, e].
Point closest_on_segment(Point p, Point s, Point e) {
  const double vx = e.x - s.x;
  const double vy = e.y - s.y;
  const double len2 = vx * vx + vy * vy;
  if (len2 == 0.0) return s;
  double t = ((p.x - s.x) * vx + (p.y - s.y) * vy) / len2;
  if (t < 0.0) t = 0.0;
  if (t > 1.0) t = 1.0;
  return {s.x + t * vx, s.y + t * vy};
}

double rep(Point e0, Point e1, Point f0, Point f1) { return dist(e0, f0) + dist(e1, f1); }
double cov(Point e0, Point e1, Point f0, Point f1) { return dist(e0, e1) + dist(f0, f1); }

std::vector<Point> rest(const std::vector<Point>& t) { return {t.begin() + 1, t.end()}; }

std::vector<Point> replace_first(std::vector<Point> t, Point p) {
  t.front() = p;
  return t;
}

double naive_edwp(const std::vector<Point>& t1, const std::vector<Point>& t2) {
  if (t1.size() == 1 && t2.size() == 1) return 0.0;
  if (t1.size() == 1 || t2.size() == 1) {
    const Point p = t1.size() == 1 ? t1.front() : t2.front();
    const std::vector<Point>& other = t1.size() == 1 ? t2 : t1;
    double total = 0.0;
    for (std::size_t k = 0; k + 1 < other.size(); ++k) {
      total += (dist(other[k], p) + dist(other[k + 1], p)) * dist(other[k], other[k + 1]);
    }
    return total;
  }
  const Point p1 = t1[0], p2 = t1[1];
  const Point q1 = t2[0], q2 = t2[1];

  const double replace = rep(p1, p2, q1, q2) * cov(p1, p2, q1, q2) + naive_edwp(rest(t1), rest(t2));

  const Point proj_b = closest_on_segment(p2, q1, q2);
  const double insert_b =
      rep(p1, p2, q1, proj_b) * cov(p1, p2, q1, proj_b) + naive_edwp(rest(t1), replace_first(t2, proj_b));

  const Point proj_a = closest_on_segment(q2, p1, p2);
  const double insert_a =
      rep(p1, proj_a, q1, q2) * cov(p1, proj_a, q1, q2) + naive_edwp(replace_first(t1, proj_a), rest(t2));

  return std::min({replace, insert_b, insert_a});
}

}  // namespace

double naive_measure(MeasureKind kind, const Trajectory& a, const Trajectory& b) {
  if (a.size() + b.size() > kNaiveMeasureMaxPoints) {
    throw std::invalid_argument("naive_measure is limited to 16 combined points");
  }
  if (a.empty() || b.empty()) throw std::invalid_argument("naive_measure needs non-empty trajectories");
  const long n = static_cast<long>(a.size());
  const long m = static_cast<long>(b.size());
  switch (kind) {
    case MeasureKind::DTW: return naive_dtw(a.points, b.points, n - 1, m - 1);
    case MeasureKind::DiscreteFrechet: return naive_frechet(a.points, b.points, n - 1, m - 1);
    case MeasureKind::EDwP:
      if (n < 2 || m < 2) throw std::invalid_argument("edwp needs at least 2 points per trajectory");
      return naive_edwp(a.points, b.points);
  }
  throw std::invalid_argument("unknown measure kind");
}

}  // namespace tsmini
