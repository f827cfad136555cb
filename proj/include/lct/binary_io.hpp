// Copyright 2026 The LCT Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "lct/tensor.hpp"

// Little-endian primitive encoding shared by every container format.
namespace lct::io {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  std::array<char, 4> b{};
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  os.write(b.data(), b.size());
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  os.write(b.data(), b.size());
}

inline void write_f64(std::ostream& os, double v) { write_u64(os, std::bit_cast<std::uint64_t>(v)); }

inline void write_magic(std::ostream& os, std::string_view magic) {
  os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline void write_string(std::ostream& os, std::string_view s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void write_tensor(std::ostream& os, const Tensor2D& t) {
  write_u32(os, static_cast<std::uint32_t>(t.rows()));
  write_u32(os, static_cast<std::uint32_t>(t.cols()));
  for (double v : t.data()) write_f64(os, v);
}

inline void read_exact(std::istream& is, char* dst, std::size_t n, const char* what) {
  is.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    throw DataError(std::string("unexpected end of file while reading ") + what);
  }
}

inline std::uint32_t read_u32(std::istream& is, const char* what = "u32") {
  std::array<unsigned char, 4> b{};
  read_exact(is, reinterpret_cast<char*>(b.data()), b.size(), what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t read_u64(std::istream& is, const char* what = "u64") {
  std::array<unsigned char, 8> b{};
  read_exact(is, reinterpret_cast<char*>(b.data()), b.size(), what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline double read_f64(std::istream& is, const char* what = "f64") {
  return std::bit_cast<double>(read_u64(is, what));
}

inline void expect_magic(std::istream& is, std::string_view magic) {
  std::string got(magic.size(), '\0');
  read_exact(is, got.data(), got.size(), "magic");
  if (got != magic) {
    throw DataError("bad magic: expected '" + std::string(magic) + "', got '" + got + "'");
  }
}

inline std::string read_string(std::istream& is) {
  const std::uint32_t n = read_u32(is, "string length");
  if (n > (1u << 20)) throw DataError("string length " + std::to_string(n) + " is implausible");
  std::string s(n, '\0');
  read_exact(is, s.data(), n, "string");
  return s;
}

inline Tensor2D read_tensor(std::istream& is) {
  const std::uint32_t r = read_u32(is, "tensor rows");
  const std::uint32_t c = read_u32(is, "tensor cols");
  if (static_cast<std::uint64_t>(r) * c > (1ull << 28)) {
    throw DataError("tensor shape " + std::to_string(r) + "x" + std::to_string(c) +
                    " is implausible");
  }
  Tensor2D t(r, c);
  for (double& v : t.data()) v = read_f64(is, "tensor data");
  return t;
}

}  // namespace lct::io
