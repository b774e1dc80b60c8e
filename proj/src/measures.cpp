#include "tsmini/measures.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <random>
#include <stdexcept>
#include <thread>

#include "tsmini/binary_io.hpp"
#include "tsmini/errors.hpp"

namespace tsmini {

std::string_view to_string(MeasureKind kind) {
  switch (kind) {
    case MeasureKind::DTW: return "dtw";
    case MeasureKind::DiscreteFrechet: return "frechet";
    case MeasureKind::EDwP: return "edwp";
  }
  return "unknown";
}

MeasureKind parse_measure_kind(std::string_view name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "dtw") return MeasureKind::DTW;
  if (s == "frechet" || s == "discrete_frechet" || s == "dfd") return MeasureKind::DiscreteFrechet;
  if (s == "edwp") return MeasureKind::EDwP;
  throw std::invalid_argument("unknown measure '" + std::string(name) + "' (expected dtw, frechet or edwp)");
}

namespace {

void require_non_empty(const Trajectory& a, const Trajectory& b, const char* what) {
  if (a.empty() || b.empty()) throw std::invalid_argument(std::string(what) + " needs non-empty trajectories");
}

// Shared rolling-row DP for DTW (accumulate = sum) and discrete Frechet
// (accumulate = max). The shorter trajectory indexes the row.
template <typename Combine>
double rolling_dp(const Trajectory& a, const Trajectory& b, Combine combine) {
  const auto& outer = a.size() >= b.size() ? a.points : b.points;
  const auto& inner = a.size() >= b.size() ? b.points : a.points;
  const std::size_t m = inner.size();
  std::vector<double> prev(m), cur(m);
  for (std::size_t i = 0; i < outer.size(); ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double d = distance(outer[i], inner[j]);
      if (i == 0 && j == 0) {
        cur[j] = d;
      } else if (i == 0) {
        cur[j] = combine(d, cur[j - 1]);
      } else if (j == 0) {
        cur[j] = combine(d, prev[j]);
      } else {
        cur[j] = combine(d, std::min({prev[j], cur[j - 1], prev[j - 1]}));
      }
    }
    std::swap(prev, cur);
  }
  return prev[m - 1];
}

// --- EDwP --------------------------------------------------------------------

double seg_len(const Point& a, const Point& b) { return distance(a, b); }

double rep_cov(const Point& e_start, const Point& e_end, const Point& f_start, const Point& f_end) {
  return (distance(e_start, f_start) + distance(e_end, f_end)) * (seg_len(e_start, e_end) + seg_len(f_start, f_end));
}

// Parameter of the point of segment [s, e] closest to p, clamped to [0, 1].
double clamped_param(const Point& p, const Point& s, const Point& e) {
  const double dx = e.x - s.x;
  const double dy = e.y - s.y;
  const double len2 = dx * dx + dy * dy;
  if (len2 == 0.0) return 0.0;
  return std::clamp(((p.x - s.x) * dx + (p.y - s.y) * dy) / len2, 0.0, 1.0);
}

Point lerp(const Point& s, const Point& e, double t) { return {s.x + t * (e.x - s.x), s.y + t * (e.y - s.y)}; }

// Cost of collapsing the polyline [start, pts[from+1], ..., pts.back()] onto p.
double collapse_cost(const Point& p, const Point& start, const std::vector<Point>& pts, std::size_t from) {
  double total = 0.0;
  Point s = start;
  for (std::size_t k = from + 1; k < pts.size(); ++k) {
    total += (distance(s, p) + distance(pts[k], p)) * seg_len(s, pts[k]);
    s = pts[k];
  }
  return total;
}

// State (i, j, side, streak): side 0 = both starts original; side 1 = the
// start of b lies on segment (b[j], b[j+1]) after inserts of a[streak+1..i];
// side 2 = the mirror for a. The replaced start is the point at parameter
// max_k clamp01(proj_k), so the state key determines it.
class EdwpSolver {
 public:
  EdwpSolver(const std::vector<Point>& a, const std::vector<Point>& b) : a_(a), b_(b), n_(a.size()), m_(b.size()) {
    offset_.resize(n_ * m_ + 1);
    std::size_t off = 0;
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < m_; ++j) {
        offset_[i * m_ + j] = off;
        off += 1 + i + j;
      }
    offset_[n_ * m_] = off;
    memo_.assign(off, std::numeric_limits<double>::quiet_NaN());
  }

  double solve() { return eval(0, 0, 0, 0, 0.0); }

 private:
  std::size_t slot(std::size_t i, std::size_t j, int side, std::size_t streak) const {
    const std::size_t base = offset_[i * m_ + j];
    if (side == 0) return base;
    if (side == 1) return base + 1 + streak;
    return base + 1 + i + streak;
  }

  // `t` is the replaced start's parameter on its segment (ignored for side 0).
  double eval(std::size_t i, std::size_t j, int side, std::size_t streak, double t) {
    double& cell = memo_[slot(i, j, side, streak)];
    if (!std::isnan(cell)) return cell;

    const Point s1 = side == 2 ? lerp(a_[i], a_[i + 1], t) : a_[i];
    const Point s2 = side == 1 ? lerp(b_[j], b_[j + 1], t) : b_[j];
    double result;
    if (i + 1 == n_ && j + 1 == m_) {
      result = 0.0;
    } else if (i + 1 == n_) {
      result = collapse_cost(s1, s2, b_, j);
    } else if (j + 1 == m_) {
      result = collapse_cost(s2, s1, a_, i);
    } else {
      const Point& p_next = a_[i + 1];
      const Point& q_next = b_[j + 1];
      // replace
      result = rep_cov(s1, p_next, s2, q_next) + eval(i + 1, j + 1, 0, 0, 0.0);
      // insert into b: p_next projected onto (s2, q_next)
      {
        const double t_prev = side == 1 ? t : 0.0;
        const double t_new = std::max(t_prev, clamped_param(p_next, b_[j], q_next));
        const Point proj = lerp(b_[j], q_next, t_new);
        const std::size_t st = side == 1 ? streak : i;
        result = std::min(result, rep_cov(s1, p_next, s2, proj) + eval(i + 1, j, 1, st, t_new));
      }
      // insert into a: q_next projected onto (s1, p_next)
      {
        const double t_prev = side == 2 ? t : 0.0;
        const double t_new = std::max(t_prev, clamped_param(q_next, a_[i], p_next));
        const Point proj = lerp(a_[i], p_next, t_new);
        const std::size_t st = side == 2 ? streak : j;
        result = std::min(result, rep_cov(s1, proj, s2, q_next) + eval(i, j + 1, 2, st, t_new));
      }
    }
    memo_[slot(i, j, side, streak)] = result;
    return result;
  }

  const std::vector<Point>& a_;
  const std::vector<Point>& b_;
  std::size_t n_;
  std::size_t m_;
  std::vector<std::size_t> offset_;
  std::vector<double> memo_;
};

}  // namespace

double dtw(const Trajectory& a, const Trajectory& b) {
  require_non_empty(a, b, "dtw");
  return rolling_dp(a, b, [](double d, double best) { return d + best; });
}

double discrete_frechet(const Trajectory& a, const Trajectory& b) {
  require_non_empty(a, b, "discrete_frechet");
  return rolling_dp(a, b, [](double d, double best) { return std::max(d, best); });
}

double edwp(const Trajectory& a, const Trajectory& b) {
  if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("edwp needs at least 2 points per trajectory");
  EdwpSolver solver(a.points, b.points);
  return solver.solve();
}

double measure(MeasureKind kind, const Trajectory& a, const Trajectory& b) {
  switch (kind) {
    case MeasureKind::DTW: return dtw(a, b);
    case MeasureKind::DiscreteFrechet: return discrete_frechet(a, b);
    case MeasureKind::EDwP: return edwp(a, b);
  }
  throw std::invalid_argument("unknown measure kind");
}

double distance_to_similarity(double dist, const SimilarityScale& scale) {
  if (!(dist >= 0.0)) throw std::invalid_argument("distance must be non-negative");
  if (!(scale.s > 0.0)) throw std::invalid_argument("similarity scale must be positive");
  return std::exp(-dist / scale.s);
}

SimilarityScale estimate_scale(std::span<const Trajectory> trajs, MeasureKind kind, std::uint64_t seed,
                               std::size_t max_pairs) {
  const std::size_t n = trajs.size();
  if (n < 2) throw std::invalid_argument("scale estimation needs at least 2 trajectories");
  double sum = 0.0;
  std::size_t count = 0;
  const std::size_t all_pairs = n * (n - 1) / 2;
  if (all_pairs <= max_pairs) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        sum += measure(kind, trajs[i], trajs[j]);
        ++count;
      }
  } else {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    while (count < max_pairs) {
      const std::size_t i = pick(rng);
      const std::size_t j = pick(rng);
      if (i == j) continue;
      sum += measure(kind, trajs[i], trajs[j]);
      ++count;
    }
  }
  const double mean = sum / static_cast<double>(count);
  return {kind, mean > 0.0 && std::isfinite(mean) ? mean : 1.0};
}

GroundTruthMatrix GroundTruthMatrix::submatrix(std::span<const std::size_t> idx) const {
  GroundTruthMatrix out;
  out.n = idx.size();
  out.values.resize(out.n * out.n);
  for (std::size_t r = 0; r < out.n; ++r) {
    if (idx[r] >= n) throw std::out_of_range("submatrix index out of range");
    for (std::size_t c = 0; c < out.n; ++c) out.values[r * out.n + c] = at(idx[r], idx[c]);
  }
  return out;
}

GroundTruthMatrix build_gt_matrix(std::span<const Trajectory> trajs, MeasureKind kind, const SimilarityScale& scale,
                                  const GtBuildOptions& opts) {
  const std::size_t n = trajs.size();
  GroundTruthMatrix m;
  m.n = n;
  m.values.assign(n * n, 0.0f);
  if (n == 0) return m;

  const std::size_t total = n * (n - 1) / 2;
  std::atomic<std::size_t> next_row{0};
  std::atomic<std::size_t> done{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mu;

  auto work = [&](bool report) {
    while (!failed.load()) {
      const std::size_t i = next_row.fetch_add(1);
      if (i >= n) break;
      for (std::size_t j = i + 1; j < n; ++j) {
        try {
          m.values[i * n + j] = static_cast<float>(distance_to_similarity(measure(kind, trajs[i], trajs[j]), scale));
        } catch (const std::exception& e) {
          std::lock_guard lock(error_mu);
          if (!failed.exchange(true)) {
            error = std::make_exception_ptr(std::runtime_error("measure failed for pair ('" + trajs[i].id + "', '" +
                                                               trajs[j].id + "'): " + e.what()));
          }
          return;
        }
      }
      done.fetch_add(n - 1 - i);
      if (report && opts.progress) opts.progress(done.load(), total);
    }
  };

  std::size_t threads = opts.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : opts.threads;
  threads = std::min(threads, n);
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(work, false);
  work(true);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);

  for (std::size_t i = 0; i < n; ++i) {
    m.values[i * n + i] = 1.0f;
    for (std::size_t j = i + 1; j < n; ++j) m.values[j * n + i] = m.values[i * n + j];
  }
  if (opts.progress) opts.progress(total, total);
  return m;
}

void write_gt_matrix(std::ostream& os, const GroundTruthMatrix& m) {
  bin::write_magic(os, "TSIM");
  bin::write_u32(os, kTsimVersion);
  bin::write_u32(os, static_cast<std::uint32_t>(m.n));
  bin::write_f32_array(os, m.values.data(), m.values.size());
}

GroundTruthMatrix read_gt_matrix(std::istream& is) {
  bin::expect_magic(is, "TSIM");
  bin::expect_version(is, kTsimVersion, "TSIM");
  GroundTruthMatrix m;
  m.n = bin::read_u32(is, "matrix size");
  bin::read_f32_array(is, m.values, m.n * m.n, "matrix values");
  return m;
}

void save_gt_matrix(const std::filesystem::path& path, const GroundTruthMatrix& m) {
  bin::write_file_atomically(path, [&](std::ostream& os) { write_gt_matrix(os, m); });
}

GroundTruthMatrix load_gt_matrix(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open ground-truth file '" + path.string() + "'");
  return read_gt_matrix(is);
}

}  // namespace tsmini
