#pragma once

// Flat binary parameter checkpoints:
//   "WCRIT1" | u64 layer count | per layer: u64 rows, u64 cols |
//   per layer: weights row-major, then bias   (all little-endian)

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "wcrit/approx/mlp.hpp"
#include "wcrit/error.hpp"

namespace wcrit {

inline constexpr std::array<char, 6> kCheckpointMagic{'W', 'C', 'R', 'I', 'T', '1'};

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw ParseError("checkpoint truncated", 0);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline void put_f64(std::ostream& os, double x) { put_u64(os, std::bit_cast<std::uint64_t>(x)); }
inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const NetParams& params) {
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put_u64(os, params.layers.size());
  for (const auto& l : params.layers) {
    detail::put_u64(os, static_cast<std::uint64_t>(l.weight.rows()));
    detail::put_u64(os, static_cast<std::uint64_t>(l.weight.cols()));
  }
  for (const auto& l : params.layers) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) detail::put_f64(os, l.weight(r, c));
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) detail::put_f64(os, l.bias(r));
  }
}

/// The activation is not part of the binary format; callers restore it from metadata.
inline NetParams read_checkpoint(std::istream& is, Activation activation = Activation::gelu) {
  std::array<char, 6> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kCheckpointMagic) throw ParseError("not a WCRIT1 checkpoint", 0);
  const auto n = detail::get_u64(is);
  if (n > 1024) throw ParseError("implausible layer count in checkpoint", 0);
  NetParams p;
  p.activation = activation;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> dims;
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto rows = detail::get_u64(is);
    const auto cols = detail::get_u64(is);
    if (rows == 0 || cols == 0 || rows > (1u << 24) || cols > (1u << 24)) throw ParseError("implausible layer shape", 0);
    dims.emplace_back(rows, cols);
  }
  for (auto [rows, cols] : dims) {
    Dense d{Matrix(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)), Vector(static_cast<Eigen::Index>(rows))};
    for (Eigen::Index r = 0; r < d.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < d.weight.cols(); ++c) d.weight(r, c) = detail::get_f64(is);
    for (Eigen::Index r = 0; r < d.bias.size(); ++r) d.bias(r) = detail::get_f64(is);
    p.layers.push_back(std::move(d));
  }
  return p;
}

inline void save_checkpoint(const std::string& path, const NetParams& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write checkpoint '" + path + "'");
  write_checkpoint(os, params);
  if (!os) throw ConfigError("failed writing checkpoint '" + path + "'");
}

inline NetParams load_checkpoint(const std::string& path, Activation activation = Activation::gelu) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open checkpoint '" + path + "'");
  return read_checkpoint(is, activation);
}

}  // namespace wcrit
