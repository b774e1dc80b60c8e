#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tsmini/measures.hpp"
#include "tsmini/model.hpp"

namespace tsmini {

/// Candidate indices by descending similarity.
using Ranking = std::vector<std::size_t>;

inline constexpr std::size_t kNoSelf = static_cast<std::size_t>(-1);

/// Orders [0, n) by descending `sims`, ties by lower index, dropping `self`.
Ranking rank_by_similarity(std::span<const double> sims, std::size_t self = kNoSelf);

/// |top-k(gt) ∩ top-k(pred)| / k. Throws std::invalid_argument when either
/// ranking has fewer than k entries.
double hr_at_k(const Ranking& gt, const Ranking& pred, std::size_t k);

/// |top-10(gt) ∩ top-50(pred)| / 10.
double r10_at_50(const Ranking& gt, const Ranking& pred);

/// Exhaustive top-k of `corpus` by 1 - ||q - c||_2, ties by lower index.
Ranking knn_query(std::span<const float> query, const Embeddings& corpus, std::size_t k);

struct MetricsReport {
  std::optional<double> hr10;
  std::optional<double> hr50;
  std::optional<double> r10_50;
  std::size_t queries = 0;
  std::vector<std::string> notes;
};

/// Query i is compared against every corpus entry except i. `queries` and
/// `corpus` must have the same count as `gt`; metrics needing more
/// candidates than count - 1 are reported absent.
MetricsReport evaluate_embeddings(const Embeddings& queries, const Embeddings& corpus, const GroundTruthMatrix& gt);

/// Uses the ground truth itself as the prediction.
MetricsReport evaluate_oracle(const GroundTruthMatrix& gt);

/// Mean HR@k of embeddings against gt, self excluded on both sides.
double mean_hr_at_k(const Embeddings& emb, const GroundTruthMatrix& gt, std::size_t k);

/// Query-side degradations; the corpus and ground truth stay untouched.
struct RobustnessOptions {
  double mask_ratio = 0.0;
  double shift_meters = 0.0;
  std::uint64_t seed = 0;

  bool active() const { return mask_ratio > 0.0 || shift_meters > 0.0; }
};

std::vector<Trajectory> degrade_queries(std::span<const Trajectory> trajs, const RobustnessOptions& opts);

/// Embeds the test set, ranks every query against the rest, averages the
/// metrics. `gt` must be the test set's ground-truth matrix.
template <typename T>
MetricsReport evaluate(TSMini<T>& model, std::span<const Trajectory> test, const NormStats& stats,
                       const GroundTruthMatrix& gt, const RobustnessOptions& robustness = {});

// TEMB: magic "TEMB", u32 version = 1, u32 count, u32 d, float32 row-major, LE.
inline constexpr std::uint32_t kTembVersion = 1;

void write_embeddings(std::ostream& os, const Embeddings& e);
Embeddings read_embeddings(std::istream& is);
void save_embeddings(const std::filesystem::path& path, const Embeddings& e);
Embeddings load_embeddings(const std::filesystem::path& path);

/// `metric<TAB>value` lines with six decimals, then `# note` lines.
void write_metrics(std::ostream& os, const MetricsReport& report);

}  // namespace tsmini
