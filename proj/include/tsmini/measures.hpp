#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tsmini/geo.hpp"

namespace tsmini {

enum class MeasureKind : std::uint8_t { DTW = 0, DiscreteFrechet = 1, EDwP = 2 };

std::string_view to_string(MeasureKind kind);
/// Accepts "dtw", "frechet" / "discrete_frechet", "edwp" (case-insensitive).
MeasureKind parse_measure_kind(std::string_view name);

/// Dynamic time warping with Euclidean point cost and sum-of-costs
/// accumulation. O(n*m) time, O(min(n, m)) memory.
double dtw(const Trajectory& a, const Trajectory& b);

/// Discrete Frechet distance (minimax coupling). O(n*m) time,
/// O(min(n, m)) memory.
double discrete_frechet(const Trajectory& a, const Trajectory& b);

/// Edit distance with projections.
///
/// Each step consumes the leading segment e1 = (p1, p2) of `a` and/or
/// e2 = (q1, q2) of `b` and pays rep(e, f) * cov(e, f), where
/// rep(e, f) = d(e.start, f.start) + d(e.end, f.end) and cov(e, f) = |e| + |f|:
///   replace: match e1 with e2, advance both;
///   insert into b: match e1 with (q1, proj) where proj is the point of e2
///     closest to p2; advance a, and b restarts at proj;
///   insert into a: the mirror image.
/// When one side is reduced to a single point p the remaining segments e of
/// the other side cost (d(e.start, p) + d(e.end, p)) * |e| each.
/// Both inputs need at least two points.
double edwp(const Trajectory& a, const Trajectory& b);

double measure(MeasureKind kind, const Trajectory& a, const Trajectory& b);

/// Literal, un-memoized recursion of each definition. Exponential; refuses
/// inputs whose combined length exceeds 16 points. Test oracle only.
double naive_measure(MeasureKind kind, const Trajectory& a, const Trajectory& b);

inline constexpr std::size_t kNaiveMeasureMaxPoints = 16;

struct SimilarityScale {
  MeasureKind kind = MeasureKind::DiscreteFrechet;
  double s = 1.0;

  friend bool operator==(const SimilarityScale&, const SimilarityScale&) = default;
};

/// y = exp(-dist / s), in (0, 1].
double distance_to_similarity(double dist, const SimilarityScale& scale);

/// Mean measure value over up to `max_pairs` distinct random pairs (all
/// pairs when fewer exist). Deterministic per seed.
SimilarityScale estimate_scale(std::span<const Trajectory> trajs, MeasureKind kind,
                               std::uint64_t seed, std::size_t max_pairs = 10000);

/// Dense n x n ground-truth similarity, row-major float32.
struct GroundTruthMatrix {
  std::size_t n = 0;
  std::vector<float> values;

  float at(std::size_t i, std::size_t j) const { return values[i * n + j]; }
  float& at(std::size_t i, std::size_t j) { return values[i * n + j]; }

  /// Rows/columns restricted to `idx`, in that order.
  GroundTruthMatrix submatrix(std::span<const std::size_t> idx) const;

  friend bool operator==(const GroundTruthMatrix&, const GroundTruthMatrix&) = default;
};

using ProgressFn = std::function<void(std::size_t done, std::size_t total)>;

struct GtBuildOptions {
  std::size_t threads = 0;  // 0 = hardware concurrency
  ProgressFn progress;      // called from the calling thread only
};

/// Upper triangle computed by worker threads, mirrored, diagonal set to 1.
/// A failing pair is rethrown as std::runtime_error naming both ids.
GroundTruthMatrix build_gt_matrix(std::span<const Trajectory> trajs, MeasureKind kind,
                                  const SimilarityScale& scale, const GtBuildOptions& opts = {});

// TSIM: magic "TSIM", u32 version = 1, u32 n, n*n float32 row-major, all LE.
inline constexpr std::uint32_t kTsimVersion = 1;

void write_gt_matrix(std::ostream& os, const GroundTruthMatrix& m);
GroundTruthMatrix read_gt_matrix(std::istream& is);
void save_gt_matrix(const std::filesystem::path& path, const GroundTruthMatrix& m);
GroundTruthMatrix load_gt_matrix(const std::filesystem::path& path);

}  // namespace tsmini
