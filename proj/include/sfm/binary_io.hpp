#pragma once

// Little-endian primitives for the on-disk containers.

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include <Eigen/Core>

#include "sfm/error.hpp"

namespace sfm::binary {

template <typename UInt>
void write_uint(std::ostream& out, UInt value) {
  std::array<char, sizeof(UInt)> bytes{};
  for (std::size_t i = 0; i < sizeof(UInt); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xff);
  }
  out.write(bytes.data(), bytes.size());
}

template <typename UInt>
UInt read_uint(std::istream& in, std::string_view what) {
  std::array<unsigned char, sizeof(UInt)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) {
    throw ParseError("unexpected end of input reading " + std::string(what) +
                     " at offset " + std::to_string(static_cast<long long>(in.tellg())));
  }
  UInt value = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) {
    value |= static_cast<UInt>(static_cast<UInt>(bytes[i]) << (8 * i));
  }
  return value;
}

inline void write_f64(std::ostream& out, double v) {
  write_uint<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
}

inline double read_f64(std::istream& in, std::string_view what) {
  return std::bit_cast<double>(read_uint<std::uint64_t>(in, what));
}

inline void write_magic(std::ostream& out, std::string_view magic) {
  out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline void expect_magic(std::istream& in, std::string_view magic) {
  std::string got(magic.size(), '\0');
  in.read(got.data(), static_cast<std::streamsize>(got.size()));
  if (!in || got != magic) {
    throw ParseError("bad magic at offset 0: expected \"" + std::string(magic) + "\"");
  }
}

/// Row-major matrix body of known shape.
template <typename Mat>
void write_matrix(std::ostream& out, const Mat& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) write_f64(out, m(i, j));
}

template <typename Mat>
void read_matrix(std::istream& in, Mat& m, std::string_view what) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = read_f64(in, what);
}

}  // namespace sfm::binary
