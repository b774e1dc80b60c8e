#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "tsmini/config.hpp"
#include "tsmini/eval.hpp"
#include "tsmini/geo.hpp"
#include "tsmini/measures.hpp"
#include "tsmini/train.hpp"

// Subcommand bodies behind the `tsmini` executable. Each validates its
// inputs before writing anything and reports problems as exceptions:
// UsageError (exit 1), FormatError or std::invalid_argument (exit 2),
// NumericError (exit 3).
namespace tsmini::cmd {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

/// Maps the active exception to an exit code; call from a catch block.
int exit_code_for_current_exception();

struct PreprocessSummary {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
};

PreprocessSummary preprocess(const std::filesystem::path& in, const std::filesystem::path& out,
                             LengthBounds bounds = {});

/// Anchor of synthetic data on the globe.
struct GeoAnchor {
  double lon_deg = -8.61;
  double lat_deg = 41.15;
};

/// Writes `cfg.count` synthetic lon/lat trajectories.
void synth(const SynthConfig& cfg, const std::filesystem::path& out, GeoAnchor anchor = {});

/// Metadata written next to a ground-truth matrix (`gt-<kind>.scale`).
struct GtInfo {
  SimilarityScale scale;
  LocalFrame frame;
};

std::filesystem::path gt_info_path(const std::filesystem::path& gt_path);
void save_gt_info(const std::filesystem::path& path, const GtInfo& info);
GtInfo load_gt_info(const std::filesystem::path& path);

struct GtResult {
  std::filesystem::path matrix_path;
  GtInfo info;
  double seconds = 0.0;
};

/// Throws UsageError for fewer than 2 trajectories.
GtResult ground_truth(const std::filesystem::path& dataset, MeasureKind kind, const std::filesystem::path& out_dir,
                      std::uint64_t seed, std::size_t threads = 0);

/// Index lists of a seeded train/val/test split.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

Split make_split(std::size_t n, double train_frac, double val_frac, std::uint64_t seed);

/// Writes checkpoint.tsck, train.log and split-{train,val,test}.txt under
/// cfg.out. Log lines are also echoed to `log`.
TrainReport train(const RunConfig& cfg, std::ostream* log = nullptr);

void embed(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset,
           const std::filesystem::path& out);

struct EvalOptions {
  std::optional<MeasureKind> measure;  // default: the checkpoint's measure
  RobustnessOptions robustness;
  bool oracle = false;
  std::optional<std::filesystem::path> out_dir;  // writes metrics.txt
};

MetricsReport evaluate(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset,
                       const EvalOptions& opts);

}  // namespace tsmini::cmd
