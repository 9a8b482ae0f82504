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

// Scalar reference implementations for the tests. Everything here is written
// with plain loops over std::vector and shares no code with the library
// beyond the Matrix container.

#include "memclr/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace memclr::oracle {

using Vec  = std::vector<double>;
using Grid = std::vector<Vec>;

inline Grid to_grid(Matrix const &m)
{
  Grid g(m.rows(), Vec(m.cols()));
  for (std::size_t r = 0; r < m.rows(); ++r)
  {
    for (std::size_t c = 0; c < m.cols(); ++c)
    {
      g[r][c] = m(r, c);
    }
  }
  return g;
}

inline Vec unit(Vec v)
{
  double s = 0.0;
  for (double x : v)
  {
    s += x * x;
  }
  s = std::sqrt(s);
  for (double &x : v)
  {
    x /= s;
  }
  return v;
}

// y_c = sum_d W[c][d] x_d
inline Vec apply(Grid const &w, Vec const &x)
{
  Vec y(w.size(), 0.0);
  for (std::size_t c = 0; c < w.size(); ++c)
  {
    for (std::size_t d = 0; d < x.size(); ++d)
    {
      y[c] += w[c][d] * x[d];
    }
  }
  return y;
}

inline double inner(Vec const &a, Vec const &b)
{
  double s = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c)
  {
    s += a[c] * b[c];
  }
  return s;
}

inline Vec softmax(Vec const &z)
{
  double mx = z[0];
  for (double v : z)
  {
    mx = std::max(mx, v);
  }
  Vec    out(z.size());
  double s = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j)
  {
    out[j] = std::exp(z[j] - mx);
    s += out[j];
  }
  for (double &v : out)
  {
    v /= s;
  }
  return out;
}

/// m_j <- normalize(m_j + sum_i s_ij v_i), s_i. = softmax_j(<m_j, k_i>).
inline Grid write(Grid const &bank, Grid const &feats, Grid const &wk, Grid const &wv)
{
  std::size_t const nl = bank.size();
  Grid              s(feats.size(), Vec(nl));
  Grid              values(feats.size());
  for (std::size_t i = 0; i < feats.size(); ++i)
  {
    Vec const k = apply(wk, feats[i]);
    values[i]   = apply(wv, feats[i]);
    Vec z(nl);
    for (std::size_t j = 0; j < nl; ++j)
    {
      z[j] = inner(bank[j], k);
    }
    s[i] = softmax(z);
  }
  Grid out = bank;
  for (std::size_t j = 0; j < nl; ++j)
  {
    for (std::size_t i = 0; i < feats.size(); ++i)
    {
      for (std::size_t c = 0; c < out[j].size(); ++c)
      {
        out[j][c] += s[i][j] * values[i][c];
      }
    }
    out[j] = unit(out[j]);
  }
  return out;
}

struct Read
{
  Grid positives;
  Grid attention;
};

inline Read read(Grid const &bank, Grid const &feats, Grid const &wq)
{
  Read r;
  for (auto const &f : feats)
  {
    Vec const q = apply(wq, f);
    Vec       z(bank.size());
    for (std::size_t j = 0; j < bank.size(); ++j)
    {
      z[j] = inner(bank[j], q);
    }
    Vec const a = softmax(z);
    Vec       p(bank[0].size(), 0.0);
    for (std::size_t j = 0; j < bank.size(); ++j)
    {
      for (std::size_t c = 0; c < p.size(); ++c)
      {
        p[c] += a[j] * bank[j][c];
      }
    }
    r.attention.push_back(a);
    r.positives.push_back(p);
  }
  return r;
}

/// Selection by repeated minimum scan.
inline std::vector<std::size_t> mine(Vec const &row, double ratio)
{
  auto count = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(row.size())));
  count      = std::max<std::size_t>(1, std::min(count, row.size()));
  std::vector<bool>        taken(row.size(), false);
  std::vector<std::size_t> out;
  for (std::size_t n = 0; n < count; ++n)
  {
    std::size_t best = row.size();
    for (std::size_t j = 0; j < row.size(); ++j)
    {
      if (!taken[j] && (best == row.size() || row[j] < row[best]))
      {
        best = j;
      }
    }
    taken[best] = true;
    out.push_back(best);
  }
  return out;
}

/// Direct evaluation of the memory contrastive loss, re-deriving attention
/// and positives from the bank.
inline double memclr(Grid const &feats, Grid const &bank, Grid const &wq,
                     std::vector<std::vector<std::size_t>> const &negatives, double tau,
                     bool normalize, MemclrReduction reduction)
{
  Read const r = read(bank, feats, wq);
  Vec        ratios;
  for (std::size_t i = 0; i < feats.size(); ++i)
  {
    Vec f = feats[i];
    Vec p = r.positives[i];
    if (normalize)
    {
      f = unit(f);
      p = unit(p);
    }
    double const pos = std::exp(inner(f, p) / tau);
    double       den = pos;
    for (std::size_t idx : negatives[i])
    {
      Vec m = bank[idx];
      if (normalize)
      {
        m = unit(m);
      }
      den += std::exp(inner(f, m) / tau);
    }
    ratios.push_back(pos / den);
  }
  double acc = 0.0;
  if (reduction == MemclrReduction::log_of_mean)
  {
    for (double x : ratios)
    {
      acc += x;
    }
    return -std::log(acc / static_cast<double>(ratios.size()));
  }
  for (double x : ratios)
  {
    acc += std::log(x);
  }
  return -acc / static_cast<double>(ratios.size());
}

/// Features x E and logits (x E) W_c for every row of `x`.
inline std::pair<Grid, Grid> forward(Grid const &x, Grid const &enc, Grid const &cls)
{
  Grid feats, logits;
  for (auto const &row : x)
  {
    Vec f(enc[0].size(), 0.0);
    for (std::size_t d = 0; d < row.size(); ++d)
    {
      for (std::size_t c = 0; c < f.size(); ++c)
      {
        f[c] += row[d] * enc[d][c];
      }
    }
    Vec l(cls[0].size(), 0.0);
    for (std::size_t c = 0; c < f.size(); ++c)
    {
      for (std::size_t k = 0; k < l.size(); ++k)
      {
        l[k] += f[c] * cls[c][k];
      }
    }
    feats.push_back(f);
    logits.push_back(l);
  }
  return {feats, logits};
}

inline double cross_entropy(Grid const &logits, std::vector<PseudoLabel> const &labels)
{
  if (labels.empty())
  {
    return 0.0;
  }
  double s = 0.0;
  for (auto const &pl : labels)
  {
    s -= std::log(softmax(logits[pl.instance])[pl.label]);
  }
  return s / static_cast<double>(labels.size());
}

// Random fixtures -------------------------------------------------------------

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64 &rng,
                            double scale = 1.0)
{
  std::normal_distribution<double> n(0.0, scale);
  Matrix                           m(rows, cols);
  for (auto &v : m.values())
  {
    v = n(rng);
  }
  return m;
}

inline Matrix near_identity(std::size_t dim, std::mt19937_64 &rng, double scale)
{
  Matrix m = random_matrix(dim, dim, rng, scale);
  for (std::size_t c = 0; c < dim; ++c)
  {
    m(c, c) += 1.0;
  }
  return m;
}

inline std::size_t uniform(std::mt19937_64 &rng, std::size_t lo, std::size_t hi)
{
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Gradient check --------------------------------------------------------------

struct GradCase
{
  std::size_t D = 0, C = 0, K = 0, n_f = 0, n_l = 0;
  double      h = 1e-6;
};

struct GradCheckResult
{
  GradCase   dims;
  GradReport report;
};

/// Analytic gradient of L_pl + L_memclr w.r.t. E, W_c and W_q against central
/// differences of the scalar oracle. The mined negative sets are taken at the
/// unperturbed point and held fixed.
inline GradCheckResult grad_check(std::uint64_t seed, MemclrReduction reduction, bool normalize,
                                  double h = 1e-6)
{
  std::mt19937_64 rng(seed);
  GradCase        g;
  g.D   = uniform(rng, 2, 6);
  g.C   = uniform(rng, 2, 8);
  g.K   = uniform(rng, 2, 4);
  g.n_f = uniform(rng, 1, 4);
  g.n_l = uniform(rng, 2, 16);
  g.h   = h;

  EncoderParams student{random_matrix(g.D, g.C, rng, 0.5), random_matrix(g.C, g.K, rng, 0.5)};
  Matrix const  wq   = near_identity(g.C, rng, 0.3);
  MemoryBank    bank = init_bank(g.n_l, g.C, rng());
  Matrix const  x    = random_matrix(g.n_f, g.D, rng);

  PseudoLabelSet labels;
  for (std::size_t i = 0; i < g.n_f; ++i)
  {
    if (std::bernoulli_distribution(0.7)(rng))
    {
      labels.push_back({i, uniform(rng, 0, g.K - 1), 1.0});
    }
  }

  AdaptConfig cfg;
  cfg.neg_ratio          = std::uniform_real_distribution<double>(0.1, 0.5)(rng);
  cfg.temperature        = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
  cfg.normalize_features = normalize;
  cfg.reduction          = reduction;

  ProjectionSet proj{Matrix::identity(g.C), Matrix::identity(g.C), wq};
  auto const    base = student_objective(student, wq, proj, bank, x, labels, cfg);
  auto const    negs = base.read.negatives;

  Grid const bank_g = to_grid(bank.items);
  Grid const x_g    = to_grid(x);
  auto const objective = [&](Matrix const &e, Matrix const &c, Matrix const &q) {
    auto const [feats, logits] = forward(x_g, to_grid(e), to_grid(c));
    return cross_entropy(logits, labels) +
           memclr(feats, bank_g, to_grid(q), negs, cfg.temperature, normalize, reduction);
  };

  auto const as_matrix = [](std::span<double const> v, Matrix const &like) {
    return Matrix(like.rows(), like.cols(), std::vector<double>(v.begin(), v.end()));
  };

  GradCheckResult out{g, {}};
  auto const      num_e = finite_diff_grad(
      [&](std::span<double const> v) {
        return objective(as_matrix(v, student.encoder), student.classifier, wq);
      },
      student.encoder.values(), h);
  auto const num_c = finite_diff_grad(
      [&](std::span<double const> v) {
        return objective(student.encoder, as_matrix(v, student.classifier), wq);
      },
      student.classifier.values(), h);
  auto const num_q = finite_diff_grad(
      [&](std::span<double const> v) {
        return objective(student.encoder, student.classifier, as_matrix(v, wq));
      },
      wq.values(), h);

  out.report.add("encoder", base.grads.d_encoder.values(), num_e);
  out.report.add("classifier", base.grads.d_classifier.values(), num_c);
  out.report.add("query", base.grads.d_query.values(), num_q);
  return out;
}

}  // namespace memclr::oracle
