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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace memclr {

/// Base class of every error raised by this library.
class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Raised when a vector is too short to be normalized.
class DegenerateVector : public Error
{
public:
  using Error::Error;
};

inline constexpr double kNormEpsilon = 1e-12;

/// Dense row-major matrix of doubles.
class Matrix
{
public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
    : rows_(rows)
    , cols_(cols)
    , data_(rows * cols, fill)
  {}

  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows)
    , cols_(cols)
    , data_(std::move(data))
  {
    if (data_.size() != rows_ * cols_)
    {
      throw Error("Matrix: data length " + std::to_string(data_.size()) + " != " +
                  std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }

  Matrix(std::initializer_list<std::initializer_list<double>> rows)
    : rows_(rows.size())
    , cols_(rows.size() == 0 ? 0 : rows.begin()->size())
  {
    data_.reserve(rows_ * cols_);
    for (auto const &r : rows)
    {
      if (r.size() != cols_)
      {
        throw Error("Matrix: ragged initializer list");
      }
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n)
  {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i)
    {
      m(i, i) = 1.0;
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool        empty() const noexcept { return data_.empty(); }

  double &operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double  operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double>       row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<double const> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double>       values() { return data_; }
  std::span<double const> values() const { return data_; }

  bool same_shape(Matrix const &o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  friend bool operator==(Matrix const &a, Matrix const &b) = default;

private:
  std::size_t         rows_ = 0;
  std::size_t         cols_ = 0;
  std::vector<double> data_;
};

inline std::string shape_str(Matrix const &m)
{
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline bool all_finite(std::span<double const> v)
{
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

inline void require_finite(Matrix const &m, char const *what)
{
  if (!all_finite(m.values()))
  {
    throw Error(std::string(what) + ": non-finite entry");
  }
}

inline void require_same_shape(Matrix const &a, Matrix const &b, char const *what)
{
  if (!a.same_shape(b))
  {
    throw Error(std::string(what) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

inline double dot(std::span<double const> a, std::span<double const> b)
{
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
  {
    s += a[i] * b[i];
  }
  return s;
}

inline double norm(std::span<double const> v)
{
  return std::sqrt(dot(v, v));
}

/// A * B
inline Matrix matmul(Matrix const &a, Matrix const &b)
{
  if (a.cols() != b.rows())
  {
    throw Error("matmul: inner dimension mismatch " + shape_str(a) + " * " + shape_str(b));
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
  {
    for (std::size_t k = 0; k < a.cols(); ++k)
    {
      double const aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j)
      {
        out(i, j) += aik * b(k, j);
      }
    }
  }
  return out;
}

/// A * B^T
inline Matrix matmul_nt(Matrix const &a, Matrix const &b)
{
  if (a.cols() != b.cols())
  {
    throw Error("matmul_nt: dimension mismatch " + shape_str(a) + " * " + shape_str(b) + "^T");
  }
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
  {
    for (std::size_t j = 0; j < b.rows(); ++j)
    {
      out(i, j) = dot(a.row(i), b.row(j));
    }
  }
  return out;
}

/// A^T * B
inline Matrix matmul_tn(Matrix const &a, Matrix const &b)
{
  if (a.rows() != b.rows())
  {
    throw Error("matmul_tn: dimension mismatch " + shape_str(a) + "^T * " + shape_str(b));
  }
  Matrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k)
  {
    for (std::size_t i = 0; i < a.cols(); ++i)
    {
      double const aki = a(k, i);
      for (std::size_t j = 0; j < b.cols(); ++j)
      {
        out(i, j) += aki * b(k, j);
      }
    }
  }
  return out;
}

/// y += alpha * x
inline void axpy(double alpha, Matrix const &x, Matrix &y)
{
  require_same_shape(x, y, "axpy");
  auto xs = x.values();
  auto ys = y.values();
  for (std::size_t i = 0; i < ys.size(); ++i)
  {
    ys[i] += alpha * xs[i];
  }
}

/// Numerically stable softmax of one vector, written into `out`.
inline void softmax_into(std::span<double const> x, std::span<double> out)
{
  double const mx = *std::max_element(x.begin(), x.end());
  double       z  = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j)
  {
    out[j] = std::exp(x[j] - mx);
    z += out[j];
  }
  for (auto &o : out)
  {
    o /= z;
  }
}

/// Row-wise softmax with max subtraction. Rejects non-finite input.
inline Matrix softmax_rows(Matrix const &x)
{
  require_finite(x, "softmax_rows");
  Matrix out(x.rows(), x.cols());
  if (x.cols() == 0)
  {
    return out;
  }
  for (std::size_t i = 0; i < x.rows(); ++i)
  {
    softmax_into(x.row(i), out.row(i));
  }
  return out;
}

/// Unit-norm copy of `v`. Throws DegenerateVector when ||v|| <= kNormEpsilon.
inline std::vector<double> l2_normalize(std::span<double const> v)
{
  double const n = norm(v);
  if (!(n > kNormEpsilon))
  {
    throw DegenerateVector("l2_normalize: norm " + std::to_string(n) + " below epsilon");
  }
  std::vector<double> out(v.begin(), v.end());
  for (auto &x : out)
  {
    x /= n;
  }
  return out;
}

/// One SGD step with classical (heavy-ball) momentum, applied in place:
///   velocity <- mu * velocity + grad
///   theta    <- theta - gamma * velocity
inline void sgd_step(std::span<double> theta, std::span<double const> grad, double gamma,
                     std::span<double> velocity, double mu)
{
  if (theta.size() != grad.size() || theta.size() != velocity.size())
  {
    throw Error("sgd_step: shape mismatch");
  }
  if (!(gamma >= 0.0) || !(mu >= 0.0 && mu < 1.0))
  {
    throw Error("sgd_step: invalid hyperparameters");
  }
  for (std::size_t i = 0; i < theta.size(); ++i)
  {
    velocity[i] = mu * velocity[i] + grad[i];
    theta[i] -= gamma * velocity[i];
  }
}

inline void sgd_step(Matrix &theta, Matrix const &grad, double gamma, Matrix &velocity, double mu)
{
  require_same_shape(theta, grad, "sgd_step");
  require_same_shape(theta, velocity, "sgd_step");
  sgd_step(theta.values(), grad.values(), gamma, velocity.values(), mu);
}

using ScalarFunction = std::function<double(std::span<double const>)>;

/// Central-difference gradient of `f` at `theta`.
inline std::vector<double> finite_diff_grad(ScalarFunction const &f, std::span<double const> theta,
                                            double h)
{
  std::vector<double> x(theta.begin(), theta.end());
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
  {
    double const orig = x[i];
    x[i]              = orig + h;
    double const fp   = f(x);
    x[i]              = orig - h;
    double const fm   = f(x);
    x[i]              = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
    {
      throw Error("finite_diff_grad: non-finite function value at coordinate " + std::to_string(i));
    }
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// Relative error with a floor on the denominator so that near-zero
/// gradients are judged on absolute error.
inline double relative_error(double analytic, double numeric, double floor = 1e-3)
{
  double const denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

struct GradReport
{
  struct Entry
  {
    std::string name;
    double      max_abs_err = 0.0;
    double      max_rel_err = 0.0;
  };

  double             max_abs_err = 0.0;
  double             max_rel_err = 0.0;
  std::vector<Entry> entries;

  void add(std::string name, std::span<double const> analytic, std::span<double const> numeric,
           double floor = 1e-3)
  {
    if (analytic.size() != numeric.size())
    {
      throw Error("GradReport: size mismatch for " + name);
    }
    Entry e{std::move(name)};
    for (std::size_t i = 0; i < analytic.size(); ++i)
    {
      e.max_abs_err = std::max(e.max_abs_err, std::abs(analytic[i] - numeric[i]));
      e.max_rel_err = std::max(e.max_rel_err, relative_error(analytic[i], numeric[i], floor));
    }
    max_abs_err = std::max(max_abs_err, e.max_abs_err);
    max_rel_err = std::max(max_rel_err, e.max_rel_err);
    entries.push_back(std::move(e));
  }
};

}  // namespace memclr
