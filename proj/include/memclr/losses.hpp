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

#include "memclr/memory.hpp"
#include "memclr/numerics.hpp"

#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace memclr {

/// How per-anchor ratios are combined. `log_of_mean` is -log(mean_i r_i);
/// `mean_of_log` is the usual InfoNCE average -mean_i log r_i.
enum class MemclrReduction
{
  log_of_mean,
  mean_of_log,
};

struct MemclrOptions
{
  double          temperature        = 1.0;
  bool            normalize_features = true;
  MemclrReduction reduction          = MemclrReduction::log_of_mean;
};

struct MemclrResult
{
  double              loss = 0.0;
  std::vector<double> ratios;      // r_i per anchor, in (0, 1]
  Matrix              d_features;  // dL/dF_s, N_f x C
  Matrix              d_query;     // dL/dW_q, C x C
};

namespace detail {

// x / |x| when `on`, else x; keeps |x| for the backward pass.
struct MaybeNormalized
{
  std::vector<double> v;
  double              length = 1.0;
  bool                on     = false;

  MaybeNormalized(std::span<double const> x, bool normalize)
    : on(normalize)
  {
    if (on)
    {
      length = norm(x);
      v      = l2_normalize(x);
    }
    else
    {
      v.assign(x.begin(), x.end());
    }
  }

  // Pull the gradient w.r.t. the normalized vector back to the raw one.
  std::vector<double> backward(std::span<double const> grad) const
  {
    std::vector<double> out(grad.begin(), grad.end());
    if (!on)
    {
      return out;
    }
    double const proj = dot(v, grad);
    for (std::size_t c = 0; c < out.size(); ++c)
    {
      out[c] = (grad[c] - v[c] * proj) / length;
    }
    return out;
  }
};

inline double log_sum_exp(std::span<double const> x)
{
  double const mx = *std::max_element(x.begin(), x.end());
  double       s  = 0.0;
  for (double v : x)
  {
    s += std::exp(v - mx);
  }
  return mx + std::log(s);
}

}  // namespace detail

/// Memory contrastive loss. Each student feature f^i is pulled toward its
/// read positive p^i and pushed from its mined negatives m^n:
///
///   r_i = exp(<f^i,p^i>/t) / (exp(<f^i,p^i>/t) + sum_n exp(<f^i,m^n>/t))
///
/// reduced per `opts.reduction`. Gradients reach F_s directly and through the
/// read attention (and thus W_q); memory items and the negative index sets are
/// constants.
inline MemclrResult memclr_loss(Matrix const &student_feats, ReadResult const &read,
                                MemoryBank const &bank, Matrix const &query_weight,
                                MemclrOptions const &opts = {})
{
  std::size_t const n   = student_feats.rows();
  std::size_t const dim = student_feats.cols();
  std::size_t const nl  = bank.n_items();
  if (n == 0)
  {
    throw Error("memclr_loss: no anchors");
  }
  if (dim != bank.dim() || read.positives.rows() != n || read.positives.cols() != dim ||
      read.attention.rows() != n || read.attention.cols() != nl || read.negatives.size() != n)
  {
    throw Error("memclr_loss: read result does not match features and bank");
  }
  if (query_weight.rows() != dim || query_weight.cols() != dim)
  {
    throw Error("memclr_loss: query weight must be " + std::to_string(dim) + "x" +
                std::to_string(dim));
  }
  if (!(opts.temperature > 0.0))
  {
    throw Error("memclr_loss: temperature must be positive");
  }
  require_finite(student_feats, "memclr_loss");

  double const tau = opts.temperature;

  MemclrResult res;
  res.ratios.resize(n);
  std::vector<double> log_ratio(n);

  // Per-anchor forward state kept for the backward pass.
  struct Anchor
  {
    detail::MaybeNormalized f;
    detail::MaybeNormalized p;
    std::vector<double>     weights;  // softmax over [pos, negatives...]
  };
  std::vector<Anchor> anchors;
  anchors.reserve(n);

  std::vector<detail::MaybeNormalized> items;
  items.reserve(nl);
  for (std::size_t j = 0; j < nl; ++j)
  {
    items.emplace_back(bank.items.row(j), opts.normalize_features);
  }

  for (std::size_t i = 0; i < n; ++i)
  {
    auto const &neg = read.negatives[i];
    if (neg.empty())
    {
      throw Error("memclr_loss: anchor " + std::to_string(i) + " has no negatives");
    }
    Anchor a{detail::MaybeNormalized(student_feats.row(i), opts.normalize_features),
             detail::MaybeNormalized(read.positives.row(i), opts.normalize_features),
             {}};
    std::vector<double> logits;
    logits.reserve(neg.size() + 1);
    logits.push_back(dot(a.f.v, a.p.v) / tau);
    for (std::size_t idx : neg)
    {
      if (idx >= nl)
      {
        throw Error("memclr_loss: negative index out of range");
      }
      logits.push_back(dot(a.f.v, items[idx].v) / tau);
    }
    double const lse = detail::log_sum_exp(logits);
    log_ratio[i]     = logits[0] - lse;
    res.ratios[i]    = std::exp(log_ratio[i]);
    a.weights.resize(logits.size());
    for (std::size_t k = 0; k < logits.size(); ++k)
    {
      a.weights[k] = std::exp(logits[k] - lse);
    }
    anchors.push_back(std::move(a));
  }

  // g_i = dL / d(log r_i)
  std::vector<double> g(n);
  if (opts.reduction == MemclrReduction::log_of_mean)
  {
    double const lse = detail::log_sum_exp(log_ratio);
    res.loss         = -(lse - std::log(static_cast<double>(n)));
    for (std::size_t i = 0; i < n; ++i)
    {
      g[i] = -std::exp(log_ratio[i] - lse);
    }
  }
  else
  {
    double s = 0.0;
    for (double lr : log_ratio)
    {
      s += lr;
    }
    res.loss = -s / static_cast<double>(n);
    std::fill(g.begin(), g.end(), -1.0 / static_cast<double>(n));
  }

  res.d_features = Matrix(n, dim);
  Matrix d_pos(n, dim);
  for (std::size_t i = 0; i < n; ++i)
  {
    auto const &a      = anchors[i];
    auto const &neg    = read.negatives[i];
    double const ds_pos = g[i] * (1.0 - a.weights[0]);

    std::vector<double> df(dim), dp(dim);
    for (std::size_t c = 0; c < dim; ++c)
    {
      df[c] = ds_pos * a.p.v[c] / tau;
      dp[c] = ds_pos * a.f.v[c] / tau;
    }
    for (std::size_t k = 0; k < neg.size(); ++k)
    {
      double const ds_neg = -g[i] * a.weights[k + 1];
      auto const  &m      = items[neg[k]].v;
      for (std::size_t c = 0; c < dim; ++c)
      {
        df[c] += ds_neg * m[c] / tau;
      }
    }
    auto const df_raw = a.f.backward(df);
    auto const dp_raw = a.p.backward(dp);
    std::copy(df_raw.begin(), df_raw.end(), res.d_features.row(i).begin());
    std::copy(dp_raw.begin(), dp_raw.end(), d_pos.row(i).begin());
  }

  // p = A M, A = softmax(Q M^T), Q = F W_q^T.
  Matrix const &attn   = read.attention;
  Matrix        d_attn = matmul_nt(d_pos, bank.items);
  Matrix        d_z(n, nl);
  for (std::size_t i = 0; i < n; ++i)
  {
    double const inner = dot(attn.row(i), d_attn.row(i));
    for (std::size_t j = 0; j < nl; ++j)
    {
      d_z(i, j) = attn(i, j) * (d_attn(i, j) - inner);
    }
  }
  Matrix const d_q = matmul(d_z, bank.items);
  res.d_query      = matmul_tn(d_q, student_feats);
  axpy(1.0, matmul(d_q, query_weight), res.d_features);

  require_finite(res.d_features, "memclr_loss");
  require_finite(res.d_query, "memclr_loss");
  if (!std::isfinite(res.loss))
  {
    throw Error("memclr_loss: non-finite loss");
  }
  return res;
}

/// NT-Xent over 2N views with cosine similarity; row k of `anchors` and row k
/// of `positives` are the two views of sample k. Returns the mean over all 2N
/// anchors. No gradient.
inline double simclr_loss(Matrix const &anchors, Matrix const &positives)
{
  require_same_shape(anchors, positives, "simclr_loss");
  std::size_t const n = anchors.rows();
  if (n == 0)
  {
    throw Error("simclr_loss: empty batch");
  }
  std::vector<std::vector<double>> z;
  z.reserve(2 * n);
  for (std::size_t k = 0; k < n; ++k)
  {
    z.push_back(l2_normalize(anchors.row(k)));
  }
  for (std::size_t k = 0; k < n; ++k)
  {
    z.push_back(l2_normalize(positives.row(k)));
  }

  double total = 0.0;
  for (std::size_t i = 0; i < 2 * n; ++i)
  {
    std::size_t const   partner = i < n ? i + n : i - n;
    std::vector<double> logits;
    logits.reserve(2 * n - 1);
    for (std::size_t l = 0; l < 2 * n; ++l)
    {
      if (l != i)
      {
        logits.push_back(dot(z[i], z[l]));
      }
    }
    total += detail::log_sum_exp(logits) - dot(z[i], z[partner]);
  }
  return total / static_cast<double>(2 * n);
}

struct PseudoLabel
{
  std::size_t instance   = 0;
  std::size_t label      = 0;
  double      confidence = 0.0;

  friend bool operator==(PseudoLabel const &, PseudoLabel const &) = default;
};

struct CrossEntropyResult
{
  double loss = 0.0;
  Matrix d_logits;
};

/// Mean cross-entropy of the listed instances against their pseudo-labels.
/// An empty list gives zero loss and zero gradient.
inline CrossEntropyResult pseudo_label_loss(Matrix const &logits,
                                            std::span<PseudoLabel const> labels)
{
  CrossEntropyResult out{0.0, Matrix(logits.rows(), logits.cols())};
  if (labels.empty())
  {
    return out;
  }
  require_finite(logits, "pseudo_label_loss");
  double const scale = 1.0 / static_cast<double>(labels.size());
  for (auto const &pl : labels)
  {
    if (pl.instance >= logits.rows() || pl.label >= logits.cols())
    {
      throw Error("pseudo_label_loss: label (" + std::to_string(pl.instance) + ", " +
                  std::to_string(pl.label) + ") out of range for logits " + shape_str(logits));
    }
    auto const          row = logits.row(pl.instance);
    double const        lse = detail::log_sum_exp(row);
    out.loss += (lse - row[pl.label]) * scale;
    auto                d = out.d_logits.row(pl.instance);
    for (std::size_t k = 0; k < row.size(); ++k)
    {
      d[k] += std::exp(row[k] - lse) * scale;
    }
    d[pl.label] -= scale;
  }
  return out;
}

struct LossValue
{
  double total  = 0.0;
  double pl     = 0.0;
  double memclr = 0.0;
};

inline LossValue total_loss(double pl, double memclr)
{
  return {pl + memclr, pl, memclr};
}

}  // namespace memclr
