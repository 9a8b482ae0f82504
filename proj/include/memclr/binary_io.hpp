#pragma once
//------------------------------------------------------------------------------
//
//   Copyright 2026 The memclr Authors
//
//   Licensed under the Apache License, Version 2.0 (the "License");
//   you may not use this file except in compliance with the License.
//   You may obtain a copy of the License at
//
//       http://www.apache.org/licenses/LICENSE-2.0
//
//   Unless required by applicable law or agreed to in writing, software
//   distributed under the License is distributed on an "AS IS" BASIS,
//   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
//   See the License for the specific language governing permissions and
//   limitations under the License.
//
//------------------------------------------------------------------------------

// Little-endian primitives for the checkpoint and memory-bank files.

#include "memclr/numerics.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string_view>

namespace memclr::io {

inline void write_u32(std::ostream &os, std::uint32_t v)
{
  std::array<char, 4> b{};
  for (std::size_t i = 0; i < 4; ++i)
  {
    b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
  }
  os.write(b.data(), b.size());
}

inline void write_u64(std::ostream &os, std::uint64_t v)
{
  std::array<char, 8> b{};
  for (std::size_t i = 0; i < 8; ++i)
  {
    b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
  }
  os.write(b.data(), b.size());
}

inline void write_f64(std::ostream &os, double v)
{
  write_u64(os, std::bit_cast<std::uint64_t>(v));
}

inline void write_magic(std::ostream &os, std::string_view magic)
{
  os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline void read_exact(std::istream &is, char *dst, std::size_t n)
{
  is.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n)
  {
    throw Error("binary read: unexpected end of stream");
  }
}

inline std::uint32_t read_u32(std::istream &is)
{
  std::array<unsigned char, 4> b{};
  read_exact(is, reinterpret_cast<char *>(b.data()), b.size());
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i)
  {
    v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  }
  return v;
}

inline std::uint64_t read_u64(std::istream &is)
{
  std::array<unsigned char, 8> b{};
  read_exact(is, reinterpret_cast<char *>(b.data()), b.size());
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < 8; ++i)
  {
    v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  }
  return v;
}

inline double read_f64(std::istream &is)
{
  return std::bit_cast<double>(read_u64(is));
}

inline void expect_magic(std::istream &is, std::string_view magic)
{
  std::array<char, 8> buf{};
  read_exact(is, buf.data(), magic.size());
  if (std::string_view(buf.data(), magic.size()) != magic)
  {
    throw Error("binary read: bad magic, expected \"" + std::string(magic) + "\"");
  }
}

/// Row-major payload only; shape is carried by the enclosing header.
inline void write_matrix_data(std::ostream &os, Matrix const &m)
{
  for (double v : m.values())
  {
    write_f64(os, v);
  }
}

inline Matrix read_matrix_data(std::istream &is, std::uint64_t rows, std::uint64_t cols)
{
  Matrix m(rows, cols);
  for (double &v : m.values())
  {
    v = read_f64(is);
  }
  return m;
}

}  // namespace memclr::io
