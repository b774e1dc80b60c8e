#include "tsmini/geo.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "tsmini/binary_io.hpp"
#include "tsmini/errors.hpp"

namespace tsmini {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

bool finite(const Point& p) { return std::isfinite(p.x) && std::isfinite(p.y); }

double heading(const Point& from, const Point& to) { return std::atan2(to.y - from.y, to.x - from.x); }

}  // namespace

double distance(const Point& a, const Point& b) { return std::hypot(a.x - b.x, a.y - b.y); }

std::optional<Trajectory> clean_trajectory(const Trajectory& raw, LengthBounds bounds) {
  if (raw.empty()) throw std::invalid_argument("trajectory '" + raw.id + "' has no points");
  Trajectory out;
  out.id = raw.id;
  out.points.reserve(raw.size());
  for (const Point& p : raw.points) {
    if (!finite(p)) throw std::invalid_argument("trajectory '" + raw.id + "' has a non-finite coordinate");
    if (out.points.empty() || !(out.points.back() == p)) out.points.push_back(p);
  }
  if (out.size() < bounds.min_len || out.size() > bounds.max_len) return std::nullopt;
  return out;
}

Point LocalFrame::project(const Point& lonlat) const {
  if (!(lonlat.x >= -180.0 && lonlat.x <= 180.0) || !(lonlat.y > -90.0 && lonlat.y < 90.0)) {
    throw std::invalid_argument("coordinate out of range: lon=" + std::to_string(lonlat.x) +
                                " lat=" + std::to_string(lonlat.y));
  }
  const double c = std::cos(ref_lat_deg * kDegToRad);
  return {kEarthRadiusMeters * lonlat.x * kDegToRad * c, kEarthRadiusMeters * lonlat.y * kDegToRad};
}

Point LocalFrame::unproject(const Point& xy) const {
  const double c = std::cos(ref_lat_deg * kDegToRad);
  return {xy.x / (kEarthRadiusMeters * c) / kDegToRad, xy.y / kEarthRadiusMeters / kDegToRad};
}

double mean_latitude(std::span<const Trajectory> lonlat) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& t : lonlat) {
    for (const auto& p : t.points) {
      sum += p.y;
      ++count;
    }
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

Trajectory project_to_local_plane(const Trajectory& lonlat, const LocalFrame& frame) {
  Trajectory out{lonlat.id, {}};
  out.points.reserve(lonlat.size());
  for (const auto& p : lonlat.points) out.points.push_back(frame.project(p));
  return out;
}

Trajectory unproject_from_local_plane(const Trajectory& xy, const LocalFrame& frame) {
  Trajectory out{xy.id, {}};
  out.points.reserve(xy.size());
  for (const auto& p : xy.points) out.points.push_back(frame.unproject(p));
  return out;
}

FeatureMatrix augment_features(const Trajectory& t) {
  const std::size_t n = t.size();
  if (n < 2) throw std::invalid_argument("augment_features needs at least 2 points");
  FeatureMatrix f;
  f.rows = n;
  f.values.assign(n * kFeatureCount, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const Point& p = t.points[i];
    f.at(i, 0) = p.x;
    f.at(i, 1) = p.y;
    if (i > 0) {
      const Point& prev = t.points[i - 1];
      f.at(i, 2) = distance(prev, p);
      f.at(i, 4) = heading(prev, p);
    }
    if (i + 1 < n) {
      const Point& next = t.points[i + 1];
      f.at(i, 3) = distance(p, next);
      f.at(i, 5) = heading(p, next);
    }
    if (i > 0 && i + 1 < n) {
      const double len_in = f.at(i, 2);
      const double len_out = f.at(i, 3);
      if (len_in > 0.0 && len_out > 0.0) {
        const Point& prev = t.points[i - 1];
        const Point& next = t.points[i + 1];
        const double dot = (p.x - prev.x) * (next.x - p.x) + (p.y - prev.y) * (next.y - p.y);
        f.at(i, 6) = std::acos(std::clamp(dot / (len_in * len_out), -1.0, 1.0));
      }
    }
  }
  return f;
}

NormStats fit_norm_stats(std::span<const FeatureMatrix> training) {
  NormStats s;
  std::array<double, kFeatureCount> sum{};
  std::size_t rows = 0;
  for (const auto& f : training) {
    for (std::size_t r = 0; r < f.rows; ++r)
      for (std::size_t c = 0; c < kFeatureCount; ++c) sum[c] += f.at(r, c);
    rows += f.rows;
  }
  if (rows == 0) return s;
  for (std::size_t c = 0; c < kFeatureCount; ++c) s.mean[c] = sum[c] / static_cast<double>(rows);
  std::array<double, kFeatureCount> sq{};
  for (const auto& f : training) {
    for (std::size_t r = 0; r < f.rows; ++r)
      for (std::size_t c = 0; c < kFeatureCount; ++c) {
        const double d = f.at(r, c) - s.mean[c];
        sq[c] += d * d;
      }
  }
  for (std::size_t c = 0; c < kFeatureCount; ++c) {
    const double sd = std::sqrt(sq[c] / static_cast<double>(rows));
    s.stddev[c] = sd > 0.0 && std::isfinite(sd) ? sd : 1.0;
  }
  return s;
}

FeatureMatrix normalize_features(const FeatureMatrix& f, const NormStats& stats) {
  FeatureMatrix out = f;
  for (std::size_t r = 0; r < f.rows; ++r)
    for (std::size_t c = 0; c < kFeatureCount; ++c) {
      const double sd = stats.stddev[c] > 0.0 ? stats.stddev[c] : 1.0;
      out.at(r, c) = (f.at(r, c) - stats.mean[c]) / sd;
    }
  return out;
}

std::vector<Trajectory> synth_generate(const SynthConfig& cfg) {
  if (!(cfg.x_max > cfg.x_min) || !(cfg.y_max > cfg.y_min)) {
    throw std::invalid_argument("synthetic bounding box is degenerate");
  }
  if (cfg.n_min < 20 || cfg.n_max < cfg.n_min) {
    throw std::invalid_argument("synthetic length range must satisfy 20 <= n_min <= n_max");
  }
  if (!(cfg.step_log_sigma >= 0.0) || !(cfg.heading_noise_std >= 0.0)) {
    throw std::invalid_argument("synthetic noise parameters must be non-negative");
  }
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> ux(cfg.x_min, cfg.x_max);
  std::uniform_real_distribution<double> uy(cfg.y_min, cfg.y_max);
  std::uniform_real_distribution<double> uheading(-std::numbers::pi, std::numbers::pi);
  std::uniform_int_distribution<std::size_t> ulen(cfg.n_min, cfg.n_max);
  std::normal_distribution<double> turn(0.0, cfg.heading_noise_std);
  std::lognormal_distribution<double> step(cfg.step_log_mu, cfg.step_log_sigma);

  std::vector<Trajectory> out;
  out.reserve(cfg.count);
  for (std::size_t k = 0; k < cfg.count; ++k) {
    Trajectory t;
    t.id = "synth-" + std::to_string(k);
    const std::size_t n = ulen(rng);
    Point p{ux(rng), uy(rng)};
    double theta = uheading(rng);
    t.points.reserve(n);
    t.points.push_back(p);
    while (t.points.size() < n) {
      theta += cfg.heading_noise_std > 0.0 ? turn(rng) : 0.0;
      const double len = step(rng);
      p = {p.x + len * std::cos(theta), p.y + len * std::sin(theta)};
      if (!(p == t.points.back())) t.points.push_back(p);
    }
    out.push_back(std::move(t));
  }
  return out;
}

Trajectory mask_points(const Trajectory& t, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw std::invalid_argument("mask ratio must be in [0, 1)");
  const std::size_t n = t.size();
  if (n <= 2) return t;
  const std::size_t interior = n - 2;
  const std::size_t drop =
      std::min(interior, static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n))));
  if (drop == 0) return t;
  std::vector<std::size_t> idx(interior);
  std::iota(idx.begin(), idx.end(), std::size_t{1});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<bool> removed(n, false);
  for (std::size_t k = 0; k < drop; ++k) removed[idx[k]] = true;
  Trajectory out{t.id, {}};
  out.points.reserve(n - drop);
  for (std::size_t i = 0; i < n; ++i)
    if (!removed[i]) out.points.push_back(t.points[i]);
  return out;
}

Trajectory shift_points(const Trajectory& t, double max_dist, std::uint64_t seed) {
  if (!(max_dist >= 0.0)) throw std::invalid_argument("shift distance must be non-negative");
  if (max_dist == 0.0) return t;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Trajectory out = t;
  for (auto& p : out.points) {
    const double r = max_dist * std::sqrt(u01(rng));
    const double a = 2.0 * std::numbers::pi * u01(rng);
    p.x += r * std::cos(a);
    p.y += r * std::sin(a);
  }
  return out;
}

// --- text format -------------------------------------------------------------

namespace {

double parse_number(std::string_view s, std::size_t line_no) {
  while (!s.empty() && (s.front() == ' ')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) {
    throw FormatError("line " + std::to_string(line_no) + ": malformed coordinate '" + std::string(s) + "'");
  }
  return v;
}

Trajectory parse_line(std::string_view line, std::size_t line_no) {
  const auto tab = line.find('\t');
  if (tab == std::string_view::npos) {
    throw FormatError("line " + std::to_string(line_no) + ": missing tab between id and points");
  }
  Trajectory t;
  t.id = std::string(line.substr(0, tab));
  std::string_view rest = line.substr(tab + 1);
  while (!rest.empty() && (rest.back() == '\r' || rest.back() == ' ')) rest.remove_suffix(1);
  if (rest.empty()) throw FormatError("line " + std::to_string(line_no) + ": no points");
  while (!rest.empty()) {
    const auto semi = rest.find(';');
    const std::string_view pair = rest.substr(0, semi);
    const auto comma = pair.find(',');
    if (comma == std::string_view::npos) {
      throw FormatError("line " + std::to_string(line_no) + ": point '" + std::string(pair) +
                        "' is not '<lon>,<lat>'");
    }
    const Point p{parse_number(pair.substr(0, comma), line_no), parse_number(pair.substr(comma + 1), line_no)};
    if (!finite(p)) throw FormatError("line " + std::to_string(line_no) + ": non-finite coordinate");
    t.points.push_back(p);
    if (semi == std::string_view::npos) break;
    rest.remove_prefix(semi + 1);
  }
  return t;
}

void append_number(std::string& out, double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, ptr);
}

}  // namespace

std::vector<Trajectory> read_trajectories(std::istream& is, const std::string& source) {
  std::vector<Trajectory> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::string_view v(line);
    if (!v.empty() && v.back() == '\r') v.remove_suffix(1);
    if (v.empty() || v.front() == '#') continue;
    if (v.find_first_not_of(" \t") == std::string_view::npos) continue;
    try {
      out.push_back(parse_line(v, line_no));
    } catch (const FormatError& e) {
      throw FormatError(source + ": " + e.what());
    }
  }
  return out;
}

std::vector<Trajectory> read_trajectory_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open trajectory file '" + path.string() + "'");
  return read_trajectories(is, path.string());
}

void write_trajectories(std::ostream& os, std::span<const Trajectory> trajs) {
  std::string line;
  for (const auto& t : trajs) {
    line.clear();
    line += t.id;
    line += '\t';
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (i > 0) line += ';';
      append_number(line, t.points[i].x);
      line += ',';
      append_number(line, t.points[i].y);
    }
    line += '\n';
    os << line;
  }
}

void write_trajectory_file(const std::filesystem::path& path, std::span<const Trajectory> trajs) {
  bin::write_file_atomically(path, [&](std::ostream& os) { write_trajectories(os, trajs); }, false);
}

}  // namespace tsmini
