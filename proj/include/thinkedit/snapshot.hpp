#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"

namespace thinkedit {

// Layout: "TKSN" | version (1 byte) | u64 n_und | n_und f64 | u64 n_gen | n_gen f64.
// All integers and floats little-endian.
inline constexpr std::array<std::uint8_t, 4> kSnapshotMagic{'T', 'K', 'S', 'N'};
inline constexpr std::uint8_t kSnapshotVersion = 1;

namespace detail {

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint64_t get_u64(std::span<const std::uint8_t> in, std::size_t& pos) {
  if (in.size() < pos + 8) throw FormatError("snapshot truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[pos + i]) << (8 * i);
  pos += 8;
  return v;
}

inline void put_array(std::vector<std::uint8_t>& out, const Vec& v) {
  put_u64(out, v.size());
  for (double x : v) put_u64(out, std::bit_cast<std::uint64_t>(x));
}

inline Vec get_array(std::span<const std::uint8_t> in, std::size_t& pos) {
  const std::uint64_t n = get_u64(in, pos);
  if (n > (in.size() - pos) / 8) throw FormatError("snapshot length prefix exceeds payload");
  Vec v(n);
  for (auto& x : v) x = std::bit_cast<double>(get_u64(in, pos));
  return v;
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_snapshot(const PolicySnapshot& s) {
  require_finite(s.und_params, "snapshot");
  require_finite(s.gen_params, "snapshot");
  std::vector<std::uint8_t> out(kSnapshotMagic.begin(), kSnapshotMagic.end());
  out.push_back(kSnapshotVersion);
  out.reserve(out.size() + 16 + 8 * (s.und_params.size() + s.gen_params.size()));
  detail::put_array(out, s.und_params);
  detail::put_array(out, s.gen_params);
  return out;
}

inline PolicySnapshot deserialize_snapshot(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kSnapshotMagic.size() + 1) throw FormatError("snapshot header truncated");
  if (!std::equal(kSnapshotMagic.begin(), kSnapshotMagic.end(), bytes.begin()))
    throw FormatError("bad snapshot magic");
  if (bytes[4] != kSnapshotVersion) throw FormatError("unsupported snapshot version");
  std::size_t pos = 5;
  PolicySnapshot s;
  s.und_params = detail::get_array(bytes, pos);
  s.gen_params = detail::get_array(bytes, pos);
  if (pos != bytes.size()) throw FormatError("trailing bytes after snapshot payload");
  return s;
}

inline void save_snapshot(const std::string& path, const PolicySnapshot& s) {
  const auto bytes = serialize_snapshot(s);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open snapshot file for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("failed writing snapshot: " + path);
}

inline PolicySnapshot load_snapshot(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open snapshot file: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_snapshot(bytes);
}

}  // namespace thinkedit
