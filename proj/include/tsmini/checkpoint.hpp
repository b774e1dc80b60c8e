#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "tsmini/geo.hpp"
#include "tsmini/measures.hpp"
#include "tsmini/model.hpp"

namespace tsmini {

// TSCK layout (LE): magic "TSCK", u32 version; ModelConfig as u32 d, heads,
// layers, ffn_hidden and f64 leaky_slope, rope_base; NormStats as 7 f64
// means then 7 f64 stds; SimilarityScale as u8 kind, f64 s; f64 reference
// latitude of the planar projection; u32 parameter count, each as u32 name
// length, name bytes, u32 rank, u32 dims, float32 values; u32 batch-norm
// layer count, each as u32 channels, float32 running means, float32 running
// variances.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct LoadedModel {
  TSMini<float> model;
  NormStats stats;
  SimilarityScale scale;
  LocalFrame frame;
};

void write_checkpoint(std::ostream& os, const TSMini<float>& model, const NormStats& stats,
                      const SimilarityScale& scale, const LocalFrame& frame);
/// Throws FormatError (bad magic, truncation, layout mismatch) or
/// VersionError. The model comes back in eval mode.
LoadedModel read_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, const TSMini<float>& model, const NormStats& stats,
                     const SimilarityScale& scale, const LocalFrame& frame);
LoadedModel load_checkpoint(const std::filesystem::path& path);

}  // namespace tsmini
