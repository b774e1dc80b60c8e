#include "tsmini/commands.hpp"

#include <charconv>
#include <chrono>
#include <cstdio>
#include <exception>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "tsmini/binary_io.hpp"
#include "tsmini/checkpoint.hpp"
#include "tsmini/errors.hpp"

namespace tsmini::cmd {

namespace fs = std::filesystem;

int exit_code_for_current_exception() {
  try {
    throw;
  } catch (const UsageError&) {
    return kUsage;
  } catch (const NumericError&) {
    return kNumeric;
  } catch (const FormatError&) {
    return kData;
  } catch (const std::exception&) {
    return kData;
  }
}

namespace {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s, const std::string& what) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw FormatError("invalid " + what + " '" + std::string(s) + "'");
  return v;
}

std::vector<Trajectory> project_all(std::span<const Trajectory> lonlat, const LocalFrame& frame) {
  std::vector<Trajectory> out;
  out.reserve(lonlat.size());
  for (const auto& t : lonlat) out.push_back(project_to_local_plane(t, frame));
  return out;
}

template <typename Seq>
std::vector<Trajectory> pick(const Seq& all, std::span<const std::size_t> idx) {
  std::vector<Trajectory> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(all[i]);
  return out;
}

}  // namespace

PreprocessSummary preprocess(const fs::path& in, const fs::path& out, LengthBounds bounds) {
  if (bounds.min_len < 2 || bounds.min_len > bounds.max_len) throw UsageError("invalid length bounds");
  const std::vector<Trajectory> raw = read_trajectory_file(in);
  PreprocessSummary s;
  std::vector<Trajectory> kept;
  for (const auto& t : raw) {
    std::optional<Trajectory> c;
    try {
      c = clean_trajectory(t, bounds);
    } catch (const std::invalid_argument&) {
      c.reset();
    }
    if (c) {
      kept.push_back(std::move(*c));
      ++s.accepted;
    } else {
      ++s.rejected;
    }
  }
  write_trajectory_file(out, kept);
  return s;
}

void synth(const SynthConfig& cfg, const fs::path& out, GeoAnchor anchor) {
  std::vector<Trajectory> trajs;
  try {
    trajs = synth_generate(cfg);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const LocalFrame frame{anchor.lat_deg};
  for (auto& t : trajs) {
    t = unproject_from_local_plane(t, frame);
    for (auto& p : t.points) {
      p.x += anchor.lon_deg;
      p.y += anchor.lat_deg;
    }
  }
  write_trajectory_file(out, trajs);
}

fs::path gt_info_path(const fs::path& gt_path) {
  fs::path p = gt_path;
  p.replace_extension(".scale");
  return p;
}

void save_gt_info(const fs::path& path, const GtInfo& info) {
  bin::write_file_atomically(
      path,
      [&](std::ostream& os) {
        os << "measure\t" << to_string(info.scale.kind) << '\n'
           << "scale\t" << format_double(info.scale.s) << '\n'
           << "ref_lat\t" << format_double(info.frame.ref_lat_deg) << '\n';
      },
      false);
}

GtInfo load_gt_info(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open ground-truth scale file '" + path.string() + "'");
  GtInfo info;
  bool has_measure = false, has_scale = false, has_lat = false;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line.front() == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError(path.string() + ": malformed line '" + line + "'");
    const std::string key = line.substr(0, tab);
    const std::string_view value = std::string_view(line).substr(tab + 1);
    if (key == "measure") {
      try {
        info.scale.kind = parse_measure_kind(value);
      } catch (const std::invalid_argument& e) {
        throw FormatError(path.string() + ": " + e.what());
      }
      has_measure = true;
    } else if (key == "scale") {
      info.scale.s = parse_double(value, "scale");
      has_scale = true;
    } else if (key == "ref_lat") {
      info.frame.ref_lat_deg = parse_double(value, "reference latitude");
      has_lat = true;
    } else {
      throw FormatError(path.string() + ": unknown key '" + key + "'");
    }
  }
  if (!has_measure || !has_scale || !has_lat) throw FormatError(path.string() + ": incomplete scale file");
  if (!(info.scale.s > 0.0)) throw FormatError(path.string() + ": scale must be positive");
  return info;
}

GtResult ground_truth(const fs::path& dataset, MeasureKind kind, const fs::path& out_dir, std::uint64_t seed,
                      std::size_t threads) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<Trajectory> lonlat = read_trajectory_file(dataset);
  if (lonlat.size() < 2) throw UsageError("ground truth needs at least 2 trajectories");
  GtResult r;
  r.info.frame = LocalFrame{mean_latitude(lonlat)};
  const std::vector<Trajectory> xy = project_all(lonlat, r.info.frame);
  r.info.scale = estimate_scale(xy, kind, seed);
  GtBuildOptions opts;
  opts.threads = threads;
  const GroundTruthMatrix m = build_gt_matrix(xy, kind, r.info.scale, opts);
  r.matrix_path = out_dir / ("gt-" + std::string(to_string(kind)) + ".tsim");
  save_gt_matrix(r.matrix_path, m);
  save_gt_info(gt_info_path(r.matrix_path), r.info);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

Split make_split(std::size_t n, double train_frac, double val_frac, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n)));
  const auto n_val = std::min(n - std::min(n, n_train),
                              static_cast<std::size_t>(std::llround(val_frac * static_cast<double>(n))));
  Split s;
  s.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(std::min(n, n_train)));
  s.val.assign(perm.begin() + static_cast<std::ptrdiff_t>(s.train.size()),
               perm.begin() + static_cast<std::ptrdiff_t>(s.train.size() + n_val));
  s.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(s.train.size() + n_val), perm.end());
  return s;
}

TrainReport train(const RunConfig& cfg, std::ostream* log) {
  cfg.validate();
  const std::vector<Trajectory> lonlat = read_trajectory_file(cfg.dataset);
  const fs::path gt_path = cfg.gt_path();
  if (!fs::exists(gt_path)) {
    throw FormatError("ground-truth file '" + gt_path.string() + "' not found (run `tsmini gt` first)");
  }
  const GroundTruthMatrix gt = load_gt_matrix(gt_path);
  const GtInfo info = load_gt_info(gt_info_path(gt_path));
  if (info.scale.kind != cfg.measure) {
    throw FormatError("ground truth was built with measure '" + std::string(to_string(info.scale.kind)) +
                      "' but the config asks for '" + std::string(to_string(cfg.measure)) + "'");
  }
  if (gt.n != lonlat.size()) {
    throw FormatError("ground truth covers " + std::to_string(gt.n) + " trajectories, dataset has " +
                      std::to_string(lonlat.size()));
  }
  const std::vector<Trajectory> xy = project_all(lonlat, info.frame);
  const Split split = make_split(xy.size(), cfg.train_frac, cfg.val_frac, cfg.seed);
  if (split.train.size() < cfg.train.min_batch || split.val.size() < 2) {
    throw UsageError("dataset too small for the configured split");
  }

  const std::vector<Trajectory> train_set = pick(xy, split.train);
  const std::vector<Trajectory> val_set = pick(xy, split.val);
  std::vector<FeatureMatrix> feats;
  feats.reserve(train_set.size());
  for (const auto& t : train_set) feats.push_back(augment_features(t));
  const NormStats stats = fit_norm_stats(feats);

  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  TSMini<float> model(cfg.model, cfg.seed);
  const TrainData data{train_set, gt.submatrix(split.train), val_set, gt.submatrix(split.val)};

  std::ostringstream text;
  text << "epoch\tloss\tval_hr10\n";
  if (log) *log << "epoch\tloss\tval_hr10\n";
  const TrainReport report = fit(model, data, stats, tc, [&](const EpochRecord& r) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%zu\t%.6f\t%.6f\n", r.epoch, r.train_loss, r.val_hr);
    text << buf;
    if (log) *log << buf << std::flush;
  });
  std::ostringstream footer;
  footer << "# best_epoch " << report.best_epoch << " stop " << to_string(report.stop) << '\n';
  text << footer.str();
  if (log) *log << footer.str();

  write_trajectory_file(cfg.out / "split-train.txt", pick(lonlat, split.train));
  write_trajectory_file(cfg.out / "split-val.txt", pick(lonlat, split.val));
  write_trajectory_file(cfg.out / "split-test.txt", pick(lonlat, split.test));
  save_checkpoint(cfg.out / "checkpoint.tsck", model, stats, info.scale, info.frame);
  bin::write_file_atomically(cfg.out / "train.log", [&](std::ostream& os) { os << text.str(); }, false);
  return report;
}

void embed(const fs::path& checkpoint, const fs::path& dataset, const fs::path& out) {
  LoadedModel lm = load_checkpoint(checkpoint);
  const std::vector<Trajectory> xy = project_all(read_trajectory_file(dataset), lm.frame);
  const Embeddings e = embed_trajectories(lm.model, std::span<const Trajectory>(xy), lm.stats);
  save_embeddings(out, e);
}

MetricsReport evaluate(const fs::path& checkpoint, const fs::path& dataset, const EvalOptions& opts) {
  const auto& rb = opts.robustness;
  if (!(rb.mask_ratio >= 0.0 && rb.mask_ratio < 1.0)) throw UsageError("--mask must lie in [0, 1)");
  if (!(rb.shift_meters >= 0.0)) throw UsageError("--shift must be non-negative");
  LoadedModel lm = load_checkpoint(checkpoint);
  const std::vector<Trajectory> xy = project_all(read_trajectory_file(dataset), lm.frame);
  if (xy.size() < 2) throw FormatError("evaluation needs at least 2 trajectories");
  const MeasureKind kind = opts.measure.value_or(lm.scale.kind);
  const SimilarityScale scale = kind == lm.scale.kind ? lm.scale : estimate_scale(xy, kind, rb.seed);
  const GroundTruthMatrix gt = build_gt_matrix(xy, kind, scale);
  MetricsReport rep = opts.oracle ? evaluate_oracle(gt)
                                  : tsmini::evaluate(lm.model, std::span<const Trajectory>(xy), lm.stats, gt, rb);
  if (opts.out_dir) {
    bin::write_file_atomically(*opts.out_dir / "metrics.txt", [&](std::ostream& os) { write_metrics(os, rep); },
                               false);
  }
  return rep;
}

}  // namespace tsmini::cmd
