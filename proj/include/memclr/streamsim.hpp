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

// Synthetic domains: Gaussian class clusters, parametric domain shifts, and
// ordered target streams of multi-instance samples.

#include "memclr/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace memclr {

/// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x)
{
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0)
{
  return mix_seed(mix_seed(mix_seed(base) ^ a) ^ b);
}

struct DomainSpec
{
  Matrix              class_means;  // K x D
  std::vector<double> class_scale;  // per-class isotropic std dev
  std::size_t         min_instances = 1;
  std::size_t         max_instances = 5;
  std::uint64_t       seed          = 0;

  std::size_t n_classes() const noexcept { return class_means.rows(); }
  std::size_t dim() const noexcept { return class_means.cols(); }
};

inline void validate(DomainSpec const &spec)
{
  if (spec.n_classes() < 2)
  {
    throw Error("DomainSpec: need at least two classes");
  }
  if (spec.dim() == 0)
  {
    throw Error("DomainSpec: zero instance dimension");
  }
  require_finite(spec.class_means, "DomainSpec means");
  if (spec.class_scale.size() != spec.n_classes())
  {
    throw Error("DomainSpec: class_scale needs one entry per class");
  }
  for (double s : spec.class_scale)
  {
    if (!(s >= 0.0) || !std::isfinite(s))
    {
      throw Error("DomainSpec: class scale must be finite and non-negative");
    }
  }
  if (spec.min_instances == 0 || spec.max_instances < spec.min_instances)
  {
    throw Error("DomainSpec: need 1 <= min_instances <= max_instances");
  }
  for (std::size_t a = 0; a < spec.n_classes(); ++a)
  {
    for (std::size_t b = a + 1; b < spec.n_classes(); ++b)
    {
      auto const ra = spec.class_means.row(a);
      auto const rb = spec.class_means.row(b);
      if (std::equal(ra.begin(), ra.end(), rb.begin()))
      {
        throw Error("DomainSpec: classes " + std::to_string(a) + " and " + std::to_string(b) +
                    " share a mean");
      }
    }
  }
}

struct LabeledSet
{
  Matrix                   instances;  // N x D
  std::vector<std::size_t> labels;

  std::size_t size() const noexcept { return labels.size(); }
};

namespace detail {

inline void draw_instance(DomainSpec const &spec, std::size_t label, std::mt19937_64 &rng,
                          std::span<double> out)
{
  std::normal_distribution<double> normal(0.0, 1.0);
  auto const                       mean  = spec.class_means.row(label);
  double const                     scale = spec.class_scale[label];
  for (std::size_t d = 0; d < out.size(); ++d)
  {
    out[d] = mean[d] + scale * normal(rng);
  }
}

}  // namespace detail

/// Labeled instances; labels cycle through the classes before shuffling, so
/// class counts differ by at most one.
inline LabeledSet gen_source(DomainSpec const &spec, std::size_t n_instances)
{
  validate(spec);
  if (n_instances == 0)
  {
    throw Error("gen_source: zero instances requested");
  }
  std::mt19937_64 rng(derive_seed(spec.seed, 0x50u));
  LabeledSet      set{Matrix(n_instances, spec.dim()), std::vector<std::size_t>(n_instances)};
  for (std::size_t i = 0; i < n_instances; ++i)
  {
    set.labels[i] = i % spec.n_classes();
  }
  std::shuffle(set.labels.begin(), set.labels.end(), rng);
  for (std::size_t i = 0; i < n_instances; ++i)
  {
    detail::draw_instance(spec, set.labels[i], rng, set.instances.row(i));
  }
  return set;
}

// Shifts ----------------------------------------------------------------------

/// Givens rotation by `degrees` in a 2-plane of R^D drawn from `plane_seed`.
struct Rotation
{
  double        degrees    = 0.0;
  std::uint64_t plane_seed = 0;
};

struct Translation
{
  std::vector<double> offset;
};

/// Additive isotropic Gaussian noise.
struct Noise
{
  double        sigma = 0.0;
  std::uint64_t seed  = 0;
};

struct Scale
{
  double factor = 1.0;
};

using ShiftOp = std::variant<Rotation, Translation, Noise, Scale>;

/// Shifts apply left to right.
struct ShiftSpec
{
  std::vector<ShiftOp> ops;
};

/// Orthonormal pair spanning the rotation plane.
inline std::pair<std::vector<double>, std::vector<double>> rotation_plane(std::size_t   dim,
                                                                          std::uint64_t seed)
{
  if (dim < 2)
  {
    throw Error("rotation_plane: need dimension >= 2");
  }
  std::mt19937_64                  rng(derive_seed(seed, 0x52u));
  std::normal_distribution<double> normal(0.0, 1.0);
  auto                             draw = [&] {
    std::vector<double> v(dim);
    for (auto &x : v)
    {
      x = normal(rng);
    }
    return v;
  };
  std::vector<double> u;
  do
  {
    u = draw();
  } while (norm(u) <= 1e-6);
  u = l2_normalize(u);

  std::vector<double> v;
  while (true)
  {
    v               = draw();
    double const pr = dot(u, v);
    for (std::size_t d = 0; d < dim; ++d)
    {
      v[d] -= pr * u[d];
    }
    if (norm(v) > 1e-6)
    {
      break;
    }
  }
  return {u, l2_normalize(v)};
}

namespace detail {

inline void apply_op(Matrix &x, Rotation const &r, std::uint64_t)
{
  if (x.rows() == 0)
  {
    return;
  }
  auto const [u, v]  = rotation_plane(x.cols(), r.plane_seed);
  double const theta = r.degrees * std::numbers::pi / 180.0;
  double const c     = std::cos(theta);
  double const s     = std::sin(theta);
  for (std::size_t i = 0; i < x.rows(); ++i)
  {
    auto         row = x.row(i);
    double const a   = dot(row, u);
    double const b   = dot(row, v);
    // In-plane coordinates (a, b) -> (c a - s b, s a + c b).
    double const da = (c - 1.0) * a - s * b;
    double const db = s * a + (c - 1.0) * b;
    for (std::size_t d = 0; d < row.size(); ++d)
    {
      row[d] += da * u[d] + db * v[d];
    }
  }
}

inline void apply_op(Matrix &x, Translation const &t, std::uint64_t)
{
  if (t.offset.size() != x.cols())
  {
    throw Error("apply_shift: translation offset has wrong dimension");
  }
  for (std::size_t i = 0; i < x.rows(); ++i)
  {
    auto row = x.row(i);
    for (std::size_t d = 0; d < row.size(); ++d)
    {
      row[d] += t.offset[d];
    }
  }
}

inline void apply_op(Matrix &x, Noise const &n, std::uint64_t salt)
{
  if (n.sigma == 0.0)
  {
    return;
  }
  std::mt19937_64                  rng(derive_seed(n.seed, 0x4Eu, salt));
  std::normal_distribution<double> normal(0.0, n.sigma);
  for (auto &v : x.values())
  {
    v += normal(rng);
  }
}

inline void apply_op(Matrix &x, Scale const &s, std::uint64_t)
{
  for (auto &v : x.values())
  {
    v *= s.factor;
  }
}

}  // namespace detail

/// Applies `shift` to every row of `instances`. `salt` decorrelates the noise
/// of different calls that share a noise seed.
inline Matrix apply_shift(Matrix instances, ShiftSpec const &shift, std::uint64_t salt = 0)
{
  for (auto const &op : shift.ops)
  {
    std::visit([&](auto const &o) { detail::apply_op(instances, o, salt); }, op);
  }
  return instances;
}

// Streams ---------------------------------------------------------------------

/// One online observation. Carries no labels.
struct StreamSample
{
  std::uint64_t id = 0;
  Matrix        weak;    // N_f x D
  Matrix        strong;  // N_f x D

  std::size_t n_instances() const noexcept { return weak.rows(); }
};

/// Ordered target stream. Labels sit beside the samples and are exposed only
/// through `hidden_labels`, which adaptation code never receives.
class TargetStream
{
public:
  TargetStream() = default;
  TargetStream(std::vector<StreamSample> samples, std::vector<std::vector<std::size_t>> labels)
    : samples_(std::move(samples))
    , labels_(std::move(labels))
  {
    if (samples_.size() != labels_.size())
    {
      throw Error("TargetStream: samples and labels differ in length");
    }
  }

  std::size_t size() const noexcept { return samples_.size(); }
  bool        empty() const noexcept { return samples_.empty(); }

  StreamSample const &operator[](std::size_t i) const { return samples_.at(i); }

  std::span<StreamSample const> samples() const noexcept { return samples_; }

  /// Evaluation-only access.
  std::span<std::size_t const> hidden_labels(std::size_t i) const { return labels_.at(i); }

  /// Sub-stream of the given positions, in the given order.
  TargetStream select(std::span<std::size_t const> positions) const
  {
    std::vector<StreamSample>             s;
    std::vector<std::vector<std::size_t>> l;
    s.reserve(positions.size());
    l.reserve(positions.size());
    for (std::size_t p : positions)
    {
      s.push_back(samples_.at(p));
      l.push_back(labels_.at(p));
    }
    return {std::move(s), std::move(l)};
  }

  /// All weak-view instances stacked, with their labels.
  LabeledSet flatten() const
  {
    std::size_t total = 0;
    std::size_t dim   = 0;
    for (auto const &s : samples_)
    {
      total += s.n_instances();
      dim = s.weak.cols();
    }
    LabeledSet out{Matrix(total, dim), {}};
    out.labels.reserve(total);
    std::size_t r = 0;
    for (std::size_t i = 0; i < samples_.size(); ++i)
    {
      for (std::size_t k = 0; k < samples_[i].n_instances(); ++k, ++r)
      {
        auto const src = samples_[i].weak.row(k);
        std::copy(src.begin(), src.end(), out.instances.row(r).begin());
        out.labels.push_back(labels_[i][k]);
      }
    }
    return out;
  }

private:
  std::vector<StreamSample>             samples_;
  std::vector<std::vector<std::size_t>> labels_;
};

/// Sample contents depend only on (spec.seed, sample id, shift); `order_seed`
/// only permutes them. Shift noise is salted with the data seed and sample id.
/// The strong view is the weak view plus N(0, strong_jitter^2) noise.
inline TargetStream gen_target_stream(DomainSpec const &spec, ShiftSpec const &shift,
                                      std::size_t length, std::uint64_t order_seed,
                                      double strong_jitter = 0.1)
{
  validate(spec);
  std::vector<StreamSample>             samples(length);
  std::vector<std::vector<std::size_t>> labels(length);
  for (std::size_t id = 0; id < length; ++id)
  {
    std::mt19937_64                            rng(derive_seed(spec.seed, 0x54u, id));
    std::uniform_int_distribution<std::size_t> count(spec.min_instances, spec.max_instances);
    std::uniform_int_distribution<std::size_t> cls(0, spec.n_classes() - 1);
    std::size_t const                          n_f = count(rng);

    Matrix raw(n_f, spec.dim());
    labels[id].resize(n_f);
    for (std::size_t k = 0; k < n_f; ++k)
    {
      labels[id][k] = cls(rng);
      detail::draw_instance(spec, labels[id][k], rng, raw.row(k));
    }

    StreamSample &s = samples[id];
    s.id            = id;
    s.weak          = apply_shift(std::move(raw), shift, derive_seed(spec.seed, 0x53u, id));
    s.strong        = s.weak;
    if (strong_jitter > 0.0)
    {
      std::mt19937_64                  jrng(derive_seed(spec.seed, 0x4Au, id));
      std::normal_distribution<double> jitter(0.0, strong_jitter);
      for (auto &v : s.strong.values())
      {
        v += jitter(jrng);
      }
    }
  }

  std::vector<std::size_t> order(length);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 orng(derive_seed(order_seed, 0x4Fu));
  std::shuffle(order.begin(), order.end(), orng);
  return TargetStream(std::move(samples), std::move(labels)).select(order);
}

// Text dump -------------------------------------------------------------------
//
// Version 1:
//   # memclr-dump v1 dim=<D>
//   sample_id,instance_index,label,x_0,...,x_{D-1}
// One instance per line; reals printed with 17 significant digits.

struct DumpRecord
{
  std::uint64_t       sample_id      = 0;
  std::uint64_t       instance_index = 0;
  std::size_t         label          = 0;
  std::vector<double> values;

  friend bool operator==(DumpRecord const &, DumpRecord const &) = default;
};

inline void write_dump_header(std::ostream &os, std::size_t dim)
{
  os << "# memclr-dump v1 dim=" << dim << "\n";
}

inline void write_dump_record(std::ostream &os, std::uint64_t sample_id,
                              std::uint64_t instance_index, std::size_t label,
                              std::span<double const> values)
{
  os << sample_id << ',' << instance_index << ',' << label;
  os << std::setprecision(17);
  for (double v : values)
  {
    os << ',' << v;
  }
  os << '\n';
}

/// Writes the weak views of `stream` in stream order.
inline void dump_stream(std::ostream &os, TargetStream const &stream)
{
  std::size_t const dim = stream.empty() ? 0 : stream[0].weak.cols();
  write_dump_header(os, dim);
  for (std::size_t i = 0; i < stream.size(); ++i)
  {
    auto const &s      = stream[i];
    auto const  labels = stream.hidden_labels(i);
    for (std::size_t k = 0; k < s.n_instances(); ++k)
    {
      write_dump_record(os, s.id, k, labels[k], s.weak.row(k));
    }
  }
}

/// Source sets are written with sample_id = row and instance_index = 0.
inline void dump_labeled(std::ostream &os, LabeledSet const &set)
{
  write_dump_header(os, set.instances.cols());
  for (std::size_t i = 0; i < set.size(); ++i)
  {
    write_dump_record(os, i, 0, set.labels[i], set.instances.row(i));
  }
}

inline std::vector<DumpRecord> read_dump(std::istream &is)
{
  std::string header;
  if (!std::getline(is, header) || header.rfind("# memclr-dump v1 dim=", 0) != 0)
  {
    throw Error("read_dump: missing or unsupported header");
  }
  std::size_t const       dim = std::stoul(header.substr(header.find('=') + 1));
  std::vector<DumpRecord> out;
  std::string             line;
  while (std::getline(is, line))
  {
    if (line.empty())
    {
      continue;
    }
    std::istringstream ls(line);
    std::string        field;
    std::vector<std::string> fields;
    while (std::getline(ls, field, ','))
    {
      fields.push_back(field);
    }
    if (fields.size() != dim + 3)
    {
      throw Error("read_dump: expected " + std::to_string(dim + 3) + " fields, got " +
                  std::to_string(fields.size()));
    }
    DumpRecord r;
    r.sample_id      = std::stoull(fields[0]);
    r.instance_index = std::stoull(fields[1]);
    r.label          = std::stoul(fields[2]);
    r.values.reserve(dim);
    for (std::size_t d = 0; d < dim; ++d)
    {
      r.values.push_back(std::stod(fields[3 + d]));
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace memclr
