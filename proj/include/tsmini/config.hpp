#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "tsmini/measures.hpp"
#include "tsmini/model.hpp"
#include "tsmini/train.hpp"

namespace tsmini {

/// Experiment description read from a flat `key=value` file. Blank lines and
/// `#` comments are ignored; unknown or repeated keys are rejected.
///
/// Keys: dataset, gt, out, measure, train_frac, val_frac, test_frac, d,
/// heads, layers, lr, batch, epochs, patience, lambda, seed.
struct RunConfig {
  std::filesystem::path dataset;
  std::filesystem::path gt;  // empty: <out>/gt-<measure>.tsim
  std::filesystem::path out = "out";
  MeasureKind measure = MeasureKind::DiscreteFrechet;
  double train_frac = 0.7;
  double val_frac = 0.1;
  double test_frac = 0.2;
  ModelConfig model;
  TrainConfig train;
  std::uint64_t seed = 0;

  std::filesystem::path gt_path() const;
  /// Throws UsageError for missing dataset, bad fractions or invalid
  /// model/train settings.
  void validate() const;
};

/// Throws UsageError naming the source and line.
RunConfig parse_run_config(std::istream& is, const std::string& source = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace tsmini
