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

// Cross-attention key-value memory.
//
// The bank holds N_l unit-norm items of dimension C. Teacher features write
// into it: every item attends over the teacher keys and absorbs the
// attention-weighted values, then is renormalized. Student features read
// from it: each projected query attends over the items, and the
// attention-weighted sum of items is returned as that feature's positive.
// The least-attended items are mined as negatives.
//
// Projections are applied as column maps, q = W f, so for a feature matrix F
// with one instance per row the projected rows are F W^T.

#include "memclr/binary_io.hpp"
#include "memclr/numerics.hpp"

#include <cstdint>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace memclr {

struct MemoryBank
{
  Matrix items;  // N_l x C, unit-norm rows

  std::size_t n_items() const noexcept { return items.rows(); }
  std::size_t dim() const noexcept { return items.cols(); }

  friend bool operator==(MemoryBank const &, MemoryBank const &) = default;
};

struct ProjectionSet
{
  Matrix key;    // W_k, teacher write path
  Matrix value;  // W_v, teacher write path
  Matrix query;  // W_q, student read path (trained)

  friend bool operator==(ProjectionSet const &, ProjectionSet const &) = default;
};

struct ReadResult
{
  Matrix                                positives;  // N_f x C
  Matrix                                attention;  // N_f x N_l
  std::vector<std::vector<std::size_t>> negatives;  // per feature, ascending attention
};

/// Rows of F projected by W, i.e. F W^T.
inline Matrix project(Matrix const &weight, Matrix const &feats)
{
  return matmul_nt(feats, weight);
}

inline MemoryBank init_bank(std::size_t n_items, std::size_t dim, std::uint64_t seed)
{
  if (n_items == 0 || dim == 0)
  {
    throw Error("init_bank: n_items and dim must be positive");
  }
  std::mt19937_64                  rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  MemoryBank                       bank{Matrix(n_items, dim)};
  for (std::size_t j = 0; j < n_items; ++j)
  {
    auto row = bank.items.row(j);
    // A standard normal draw in dim >= 1 is zero with probability zero, but
    // redraw rather than rely on that.
    while (norm(row) <= kNormEpsilon)
    {
      for (auto &x : row)
      {
        x = normal(rng);
      }
    }
    auto const unit = l2_normalize(row);
    std::copy(unit.begin(), unit.end(), row.begin());
  }
  return bank;
}

/// Identity plus N(0, sigma^2) noise for all three projections.
inline ProjectionSet init_projections(std::size_t dim, std::uint64_t seed, double sigma = 0.01)
{
  std::mt19937_64                  rng(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  auto                             make = [&] {
    Matrix w = Matrix::identity(dim);
    for (auto &x : w.values())
    {
      x += normal(rng);
    }
    return w;
  };
  ProjectionSet p;
  p.key   = make();
  p.value = make();
  p.query = make();
  return p;
}

inline void check_projection_dims(ProjectionSet const &proj, std::size_t dim, char const *what)
{
  for (Matrix const *w : {&proj.key, &proj.value, &proj.query})
  {
    if (w->rows() != dim || w->cols() != dim)
    {
      throw Error(std::string(what) + ": projection must be " + std::to_string(dim) + "x" +
                  std::to_string(dim) + ", got " + shape_str(*w));
    }
  }
}

/// Memory write with teacher features. Every item is updated from the
/// pre-write bank; no gradient flows through this. Rows whose updated norm
/// collapses below kNormEpsilon keep their old value and are reported in
/// `skipped` when provided.
inline MemoryBank write(MemoryBank const &bank, Matrix const &teacher_feats,
                        ProjectionSet const &proj, std::vector<std::size_t> *skipped = nullptr)
{
  if (teacher_feats.rows() == 0)
  {
    return bank;
  }
  if (teacher_feats.cols() != bank.dim())
  {
    throw Error("memory write: feature dim " + std::to_string(teacher_feats.cols()) +
                " != bank dim " + std::to_string(bank.dim()));
  }
  check_projection_dims(proj, bank.dim(), "memory write");
  require_finite(teacher_feats, "memory write");

  Matrix const keys   = project(proj.key, teacher_feats);
  Matrix const values = project(proj.value, teacher_feats);
  // Row i: softmax over memory items of m^j . k^i.
  Matrix const attn = softmax_rows(matmul_nt(keys, bank.items));

  Matrix updated = bank.items;
  axpy(1.0, matmul_tn(attn, values), updated);

  MemoryBank out{bank.items};
  for (std::size_t j = 0; j < bank.n_items(); ++j)
  {
    auto const row = updated.row(j);
    if (!all_finite(row) || norm(row) <= kNormEpsilon)
    {
      std::clog << "memclr: memory write skipped degenerate item " << j << "\n";
      if (skipped != nullptr)
      {
        skipped->push_back(j);
      }
      continue;
    }
    auto const unit = l2_normalize(row);
    std::copy(unit.begin(), unit.end(), out.items.row(j).begin());
  }
  return out;
}

/// Number of mined negatives for a bank of `n_items`.
inline std::size_t negative_count(std::size_t n_items, double neg_ratio)
{
  auto const n = static_cast<std::size_t>(std::floor(neg_ratio * static_cast<double>(n_items)));
  return std::max<std::size_t>(1, std::min(n, n_items));
}

/// Indices of the least-attended items, ascending by attention; ties go to
/// the lower index.
inline std::vector<std::size_t> mine_negatives(std::span<double const> attention_row,
                                               double                  neg_ratio)
{
  if (!(neg_ratio > 0.0 && neg_ratio <= 1.0))
  {
    throw Error("mine_negatives: neg_ratio must be in (0, 1]");
  }
  if (attention_row.empty())
  {
    throw Error("mine_negatives: empty attention row");
  }
  std::size_t const        count = negative_count(attention_row.size(), neg_ratio);
  std::vector<std::size_t> idx(attention_row.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto const less = [&](std::size_t a, std::size_t b) {
    return attention_row[a] < attention_row[b] || (attention_row[a] == attention_row[b] && a < b);
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(count), idx.end(), less);
  idx.resize(count);
  return idx;
}

/// Attention over memory items for the queries W_q f_s, without mining.
inline Matrix read_attention(MemoryBank const &bank, Matrix const &student_feats,
                             Matrix const &query_weight)
{
  return softmax_rows(matmul_nt(project(query_weight, student_feats), bank.items));
}

/// Memory read with student features. The bank is not modified.
inline ReadResult read(MemoryBank const &bank, Matrix const &student_feats,
                       ProjectionSet const &proj, double neg_ratio)
{
  if (student_feats.rows() == 0)
  {
    throw Error("memory read: no student features");
  }
  if (student_feats.cols() != bank.dim())
  {
    throw Error("memory read: feature dim " + std::to_string(student_feats.cols()) +
                " != bank dim " + std::to_string(bank.dim()));
  }
  if (!(neg_ratio > 0.0 && neg_ratio <= 1.0))
  {
    throw Error("memory read: neg_ratio must be in (0, 1]");
  }
  check_projection_dims(proj, bank.dim(), "memory read");
  require_finite(student_feats, "memory read");

  ReadResult r;
  r.attention = read_attention(bank, student_feats, proj.query);
  r.positives = matmul(r.attention, bank.items);
  r.negatives.reserve(student_feats.rows());
  for (std::size_t i = 0; i < student_feats.rows(); ++i)
  {
    r.negatives.push_back(mine_negatives(r.attention.row(i), neg_ratio));
  }
  return r;
}

// Persistence: "MEMX", u32 version, u64 N_l, u64 C, then N_l*C f64, all
// little-endian.

inline constexpr std::uint32_t kBankFormatVersion = 1;
inline constexpr std::uint64_t kMaxElements       = std::uint64_t{1} << 32;

inline void save_bank(std::ostream &os, MemoryBank const &bank)
{
  io::write_magic(os, "MEMX");
  io::write_u32(os, kBankFormatVersion);
  io::write_u64(os, bank.n_items());
  io::write_u64(os, bank.dim());
  io::write_matrix_data(os, bank.items);
  if (!os)
  {
    throw Error("save_bank: write failed");
  }
}

inline MemoryBank load_bank(std::istream &is)
{
  io::expect_magic(is, "MEMX");
  auto const version = io::read_u32(is);
  if (version != kBankFormatVersion)
  {
    throw Error("load_bank: unsupported version " + std::to_string(version));
  }
  auto const n   = io::read_u64(is);
  auto const dim = io::read_u64(is);
  if (n == 0 || dim == 0 || n > kMaxElements / dim)
  {
    throw Error("load_bank: implausible shape");
  }
  MemoryBank bank{io::read_matrix_data(is, n, dim)};
  require_finite(bank.items, "load_bank");
  return bank;
}

inline void save_bank(std::string const &path, MemoryBank const &bank)
{
  std::ofstream os(path, std::ios::binary);
  if (!os)
  {
    throw Error("save_bank: cannot open " + path);
  }
  save_bank(os, bank);
}

inline MemoryBank load_bank(std::string const &path)
{
  std::ifstream is(path, std::ios::binary);
  if (!is)
  {
    throw Error("load_bank: cannot open " + path);
  }
  return load_bank(is);
}

}  // namespace memclr
