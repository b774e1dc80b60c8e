#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tsmini {

/// A planar point in meters (x east, y north). Raw ingested points carry
/// longitude in `x` and latitude in `y` (degrees) until projected.
struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

double distance(const Point& a, const Point& b);

struct Trajectory {
  std::string id;
  std::vector<Point> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

inline constexpr std::size_t kFeatureCount = 7;

/// Per-point augmented features, row-major n x 7:
///   [x, y, |p_{i-1}p_i|, |p_i p_{i+1}|, heading_in, heading_out, turn]
/// Headings are atan2 angles against the x-axis, `turn` is the angle between
/// the incoming and outgoing direction vectors in [0, pi]. Entries that need a
/// missing neighbor (first/last row) are zero.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::vector<double> values;

  double at(std::size_t r, std::size_t c) const { return values[r * kFeatureCount + c]; }
  double& at(std::size_t r, std::size_t c) { return values[r * kFeatureCount + c]; }
  std::span<const double> row(std::size_t r) const {
    return {values.data() + r * kFeatureCount, kFeatureCount};
  }
};

/// Column-wise z-score statistics, fitted on the training split.
struct NormStats {
  std::array<double, kFeatureCount> mean{};
  std::array<double, kFeatureCount> stddev{1, 1, 1, 1, 1, 1, 1};

  friend bool operator==(const NormStats&, const NormStats&) = default;
};

struct LengthBounds {
  std::size_t min_len = 20;
  std::size_t max_len = 200;
};

// --- cleaning and projection -------------------------------------------------

/// Collapses consecutive duplicate points. Returns nullopt when the result
/// falls outside `bounds`. Throws std::invalid_argument on non-finite
/// coordinates or an empty input.
std::optional<Trajectory> clean_trajectory(const Trajectory& raw, LengthBounds bounds = {});

inline constexpr double kEarthRadiusMeters = 6371000.0;

/// Equirectangular frame centred on a reference latitude:
///   x = R * lon_rad * cos(ref_lat), y = R * lat_rad.
struct LocalFrame {
  double ref_lat_deg = 0.0;

  Point project(const Point& lonlat) const;
  Point unproject(const Point& xy) const;
};

/// Mean latitude over every point of a lon/lat dataset.
double mean_latitude(std::span<const Trajectory> lonlat);

Trajectory project_to_local_plane(const Trajectory& lonlat, const LocalFrame& frame);
Trajectory unproject_from_local_plane(const Trajectory& xy, const LocalFrame& frame);

// --- features ----------------------------------------------------------------

FeatureMatrix augment_features(const Trajectory& t);

NormStats fit_norm_stats(std::span<const FeatureMatrix> training);

/// Column-wise z-score. Apply exactly once: normalizing an already normalized
/// matrix is not a no-op.
FeatureMatrix normalize_features(const FeatureMatrix& f, const NormStats& stats);

// --- synthetic data and perturbations -----------------------------------------

struct SynthConfig {
  std::size_t count = 1000;
  std::size_t n_min = 20;
  std::size_t n_max = 80;
  // Start points are uniform inside [x_min, x_max] x [y_min, y_max] (meters).
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 20000.0;
  double y_max = 20000.0;
  double heading_noise_std = 0.3;  // radians per step
  double step_log_mu = 4.0;        // log-normal step length, ln(meters)
  double step_log_sigma = 0.4;
  std::uint64_t seed = 7;
};

/// Random walks: uniform start in the box, Gaussian heading drift,
/// log-normal step lengths. Deterministic per seed. Throws
/// std::invalid_argument on a degenerate box or n_min < 20 / n_min > n_max.
std::vector<Trajectory> synth_generate(const SynthConfig& cfg);

/// Removes floor(ratio * n) interior points chosen uniformly; endpoints stay.
/// The result may be shorter than the cleaning minimum (evaluation only).
Trajectory mask_points(const Trajectory& t, double ratio, std::uint64_t seed);

/// Displaces every point by an offset drawn uniformly from the disk of
/// radius `max_dist` meters.
Trajectory shift_points(const Trajectory& t, double max_dist, std::uint64_t seed);

// --- text format ---------------------------------------------------------------
//
// One trajectory per line: `<id>\t<lon>,<lat>;<lon>,<lat>;...`
// Blank lines and lines starting with '#' are ignored.

std::vector<Trajectory> read_trajectories(std::istream& is, const std::string& source = "<stream>");
std::vector<Trajectory> read_trajectory_file(const std::filesystem::path& path);
void write_trajectories(std::ostream& os, std::span<const Trajectory> trajs);
void write_trajectory_file(const std::filesystem::path& path, std::span<const Trajectory> trajs);

}  // namespace tsmini
