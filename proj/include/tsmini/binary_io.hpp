#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "tsmini/errors.hpp"

// Little-endian readers/writers shared by the TSIM, TEMB and TSCK formats.
namespace tsmini::bin {

static_assert(sizeof(float) == 4, "float32 required");

inline void write_magic(std::ostream& os, std::string_view magic) {
  os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline void write_u32(std::ostream& os, std::uint32_t v) {
  std::array<unsigned char, 4> b{};
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFFu);
  os.write(reinterpret_cast<const char*>(b.data()), 4);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
  std::array<unsigned char, 8> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFFu);
  os.write(reinterpret_cast<const char*>(b.data()), 8);
}

inline void write_f32(std::ostream& os, float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  write_u32(os, u);
}

inline void write_f64(std::ostream& os, double v) {
  std::uint64_t u;
  std::memcpy(&u, &v, 8);
  write_u64(os, u);
}

inline void write_string(std::ostream& os, std::string_view s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void read_exact(std::istream& is, char* dst, std::size_t n, std::string_view what) {
  is.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    throw FormatError("truncated file while reading " + std::string(what));
  }
}

inline void expect_magic(std::istream& is, std::string_view magic) {
  std::string got(magic.size(), '\0');
  is.read(got.data(), static_cast<std::streamsize>(magic.size()));
  if (static_cast<std::size_t>(is.gcount()) != magic.size() || got != magic) {
    throw FormatError("bad magic bytes: expected '" + std::string(magic) + "'");
  }
}

inline std::uint32_t read_u32(std::istream& is, std::string_view what = "u32") {
  std::array<unsigned char, 4> b{};
  read_exact(is, reinterpret_cast<char*>(b.data()), 4, what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t read_u64(std::istream& is, std::string_view what = "u64") {
  std::array<unsigned char, 8> b{};
  read_exact(is, reinterpret_cast<char*>(b.data()), 8, what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline float read_f32(std::istream& is, std::string_view what = "f32") {
  const std::uint32_t u = read_u32(is, what);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

inline double read_f64(std::istream& is, std::string_view what = "f64") {
  const std::uint64_t u = read_u64(is, what);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

inline std::string read_string(std::istream& is, std::size_t max_len = 4096) {
  const std::uint32_t n = read_u32(is, "string length");
  if (n > max_len) throw FormatError("string length " + std::to_string(n) + " exceeds limit");
  std::string s(n, '\0');
  read_exact(is, s.data(), n, "string bytes");
  return s;
}

inline void read_f32_array(std::istream& is, std::vector<float>& out, std::size_t n,
                           std::string_view what) {
  // Grow while reading so a corrupt count fails as truncation, not as a huge allocation.
  out.clear();
  out.reserve(std::min<std::size_t>(n, std::size_t{1} << 20));
  for (std::size_t i = 0; i < n; ++i) out.push_back(read_f32(is, what));
}

inline void write_f32_array(std::ostream& os, const float* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) write_f32(os, data[i]);
}

inline void expect_version(std::istream& is, std::uint32_t supported, std::string_view format) {
  const std::uint32_t v = read_u32(is, "version");
  if (v != supported) {
    throw VersionError(std::string(format) + " version " + std::to_string(v) +
                       " is not supported (expected " + std::to_string(supported) + ")");
  }
}

// Writes to a sibling temporary file and renames into place, so a failed
// write never leaves a partial artifact at `path`.
template <typename Writer>
void write_file_atomically(const std::filesystem::path& path, Writer&& writer, bool binary = true) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
    if (!os) throw FormatError("cannot open '" + tmp.string() + "' for writing");
    writer(os);
    os.flush();
    if (!os) {
      os.close();
      std::filesystem::remove(tmp);
      throw FormatError("write failed for '" + path.string() + "'");
    }
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace tsmini::bin
