#include "tsmini/checkpoint.hpp"

#include <fstream>
#include <stdexcept>
#include <string>

#include "tsmini/binary_io.hpp"

namespace tsmini {

namespace {

constexpr std::uint32_t kMaxDim = 1u << 16;

std::uint32_t checked_u32(std::istream& is, const char* what) {
  const std::uint32_t v = bin::read_u32(is, what);
  if (v > kMaxDim) throw FormatError(std::string("implausible ") + what + " " + std::to_string(v));
  return v;
}

}  // namespace

void write_checkpoint(std::ostream& os, const TSMini<float>& model, const NormStats& stats,
                      const SimilarityScale& scale, const LocalFrame& frame) {
  const ModelConfig& c = model.config();
  bin::write_magic(os, "TSCK");
  bin::write_u32(os, kCheckpointVersion);
  bin::write_u32(os, static_cast<std::uint32_t>(c.d));
  bin::write_u32(os, static_cast<std::uint32_t>(c.heads));
  bin::write_u32(os, static_cast<std::uint32_t>(c.layers));
  bin::write_u32(os, static_cast<std::uint32_t>(c.ffn_dim()));
  bin::write_f64(os, c.leaky_slope);
  bin::write_f64(os, c.rope_base);
  for (double m : stats.mean) bin::write_f64(os, m);
  for (double s : stats.stddev) bin::write_f64(os, s);
  const auto kind = static_cast<std::uint8_t>(scale.kind);
  os.write(reinterpret_cast<const char*>(&kind), 1);
  bin::write_f64(os, scale.s);
  bin::write_f64(os, frame.ref_lat_deg);

  const auto& params = model.params().all();
  bin::write_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    bin::write_string(os, p.name);
    const ad::Shape& s = p.tensor.shape();
    bin::write_u32(os, static_cast<std::uint32_t>(s.rank));
    for (std::size_t i = 0; i < s.rank; ++i) bin::write_u32(os, static_cast<std::uint32_t>(s[i]));
    bin::write_f32_array(os, p.tensor.data(), p.tensor.numel());
  }
  const auto& bn = model.bn_states();
  bin::write_u32(os, static_cast<std::uint32_t>(bn.size()));
  for (const auto& st : bn) {
    bin::write_u32(os, static_cast<std::uint32_t>(st.running_mean.size()));
    bin::write_f32_array(os, st.running_mean.data(), st.running_mean.size());
    bin::write_f32_array(os, st.running_var.data(), st.running_var.size());
  }
}

LoadedModel read_checkpoint(std::istream& is) {
  bin::expect_magic(is, "TSCK");
  bin::expect_version(is, kCheckpointVersion, "TSCK");
  ModelConfig cfg;
  cfg.d = checked_u32(is, "model dimension");
  cfg.heads = checked_u32(is, "head count");
  cfg.layers = checked_u32(is, "layer count");
  cfg.ffn_hidden = checked_u32(is, "ffn width");
  cfg.leaky_slope = bin::read_f64(is, "leaky slope");
  cfg.rope_base = bin::read_f64(is, "rope base");
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("checkpoint holds an invalid model config: ") + e.what());
  }
  NormStats stats;
  for (double& m : stats.mean) m = bin::read_f64(is, "norm mean");
  for (double& s : stats.stddev) s = bin::read_f64(is, "norm std");
  char kind = 0;
  bin::read_exact(is, &kind, 1, "measure kind");
  if (static_cast<std::uint8_t>(kind) > static_cast<std::uint8_t>(MeasureKind::EDwP)) {
    throw FormatError("unknown measure kind " + std::to_string(static_cast<unsigned char>(kind)));
  }
  SimilarityScale scale{static_cast<MeasureKind>(kind), bin::read_f64(is, "similarity scale")};

  const LocalFrame frame{bin::read_f64(is, "reference latitude")};

  LoadedModel out{TSMini<float>(cfg), stats, scale, frame};
  auto& params = out.model.params().all();
  const std::uint32_t count = bin::read_u32(is, "parameter count");
  if (count != params.size()) {
    throw FormatError("checkpoint has " + std::to_string(count) + " parameters, model expects " +
                      std::to_string(params.size()));
  }
  std::vector<float> buf;
  for (auto& p : params) {
    const std::string name = bin::read_string(is, 256);
    if (name != p.name) throw FormatError("unexpected parameter '" + name + "' (expected '" + p.name + "')");
    const std::uint32_t rank = bin::read_u32(is, "parameter rank");
    const ad::Shape& want = p.tensor.shape();
    if (rank != want.rank) throw FormatError("parameter '" + name + "' has the wrong rank");
    for (std::size_t i = 0; i < rank; ++i) {
      if (bin::read_u32(is, "parameter dim") != want[i]) {
        throw FormatError("parameter '" + name + "' has shape mismatching " + want.str());
      }
    }
    bin::read_f32_array(is, buf, want.numel(), "parameter values");
    std::copy(buf.begin(), buf.end(), p.tensor.mutable_value().begin());
  }
  auto& bn = out.model.bn_states();
  if (bin::read_u32(is, "batch-norm count") != bn.size()) throw FormatError("batch-norm layer count mismatch");
  for (auto& st : bn) {
    if (bin::read_u32(is, "batch-norm channels") != st.running_mean.size()) {
      throw FormatError("batch-norm channel mismatch");
    }
    bin::read_f32_array(is, st.running_mean, st.running_mean.size(), "running mean");
    bin::read_f32_array(is, st.running_var, st.running_var.size(), "running variance");
  }
  out.model.set_training(false);
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const TSMini<float>& model, const NormStats& stats,
                     const SimilarityScale& scale, const LocalFrame& frame) {
  bin::write_file_atomically(path, [&](std::ostream& os) { write_checkpoint(os, model, stats, scale, frame); });
}

LoadedModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint '" + path.string() + "'");
  return read_checkpoint(is);
}

}  // namespace tsmini
