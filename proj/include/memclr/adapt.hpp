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

// Student-teacher online adaptation with the memory contrastive objective.
//
// The proxy model is linear: features = X E (D -> C), logits = features W_c
// (C -> K). One call to adapt_one consumes one stream sample:
//
//   1. teacher forward on the weak view
//   2. keep teacher predictions with confidence > T as pseudo-labels
//   3. write teacher features into memory
//   4. student forward on the strong view
//   5. read memory with student features, mine negatives
//   6. L = L_pl + L_memclr and its gradient w.r.t. E, W_c and W_q
//   7. momentum SGD on the student (and W_q)
//   8. teacher <- alpha teacher + (1 - alpha) student
//   9. step_count += 1

#include "memclr/binary_io.hpp"
#include "memclr/losses.hpp"
#include "memclr/memory.hpp"
#include "memclr/numerics.hpp"
#include "memclr/streamsim.hpp"

#include <chrono>
#include <cstdint>
#include <fstream>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace memclr {

struct EncoderParams
{
  Matrix encoder;     // D x C
  Matrix classifier;  // C x K

  std::size_t input_dim() const noexcept { return encoder.rows(); }
  std::size_t feature_dim() const noexcept { return encoder.cols(); }
  std::size_t n_classes() const noexcept { return classifier.cols(); }

  friend bool operator==(EncoderParams const &, EncoderParams const &) = default;
};

inline void require_same_shape(EncoderParams const &a, EncoderParams const &b, char const *what)
{
  require_same_shape(a.encoder, b.encoder, what);
  require_same_shape(a.classifier, b.classifier, what);
}

/// Gaussian init scaled by fan-in.
inline EncoderParams init_encoder(std::size_t input_dim, std::size_t feature_dim,
                                  std::size_t n_classes, std::uint64_t seed)
{
  if (input_dim == 0 || feature_dim == 0 || n_classes < 2)
  {
    throw Error("init_encoder: invalid dimensions");
  }
  std::mt19937_64                  rng(derive_seed(seed, 0x45u));
  std::normal_distribution<double> normal(0.0, 1.0);
  EncoderParams                    p{Matrix(input_dim, feature_dim), Matrix(feature_dim, n_classes)};
  double const                     se = 1.0 / std::sqrt(static_cast<double>(input_dim));
  double const                     sc = 1.0 / std::sqrt(static_cast<double>(feature_dim));
  for (auto &v : p.encoder.values())
  {
    v = se * normal(rng);
  }
  for (auto &v : p.classifier.values())
  {
    v = sc * normal(rng);
  }
  return p;
}

struct Prediction
{
  Matrix features;  // N_f x C
  Matrix logits;    // N_f x K
  Matrix probs;     // N_f x K
};

inline Prediction predict(EncoderParams const &params, Matrix const &instances)
{
  if (instances.cols() != params.input_dim())
  {
    throw Error("predict: instance dim " + std::to_string(instances.cols()) + " != model dim " +
                std::to_string(params.input_dim()));
  }
  Prediction p;
  p.features = matmul(instances, params.encoder);
  p.logits   = matmul(p.features, params.classifier);
  p.probs    = softmax_rows(p.logits);
  return p;
}

/// First index of the row maximum.
inline std::size_t argmax(std::span<double const> row)
{
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

using PseudoLabelSet = std::vector<PseudoLabel>;

/// Instances whose top class probability is strictly greater than `threshold`.
inline PseudoLabelSet filter_pseudo_labels(Matrix const &class_probs, double threshold)
{
  PseudoLabelSet out;
  for (std::size_t i = 0; i < class_probs.rows(); ++i)
  {
    auto const        row = class_probs.row(i);
    std::size_t const k   = argmax(row);
    if (row[k] > threshold)
    {
      out.push_back({i, k, row[k]});
    }
  }
  return out;
}

inline void ema_into(Matrix &teacher, Matrix const &student, double alpha)
{
  auto       t = teacher.values();
  auto const s = student.values();
  for (std::size_t i = 0; i < t.size(); ++i)
  {
    t[i] = alpha * t[i] + (1.0 - alpha) * s[i];
  }
}

/// teacher' = alpha * teacher + (1 - alpha) * student, per parameter.
inline EncoderParams ema_update(EncoderParams const &teacher, EncoderParams const &student,
                                double alpha)
{
  require_same_shape(teacher, student, "ema_update");
  if (!(alpha >= 0.0 && alpha <= 1.0))
  {
    throw Error("ema_update: alpha must be in [0, 1]");
  }
  EncoderParams out = teacher;
  ema_into(out.encoder, student.encoder, alpha);
  ema_into(out.classifier, student.classifier, alpha);
  return out;
}

struct StudentTeacherState
{
  EncoderParams student;
  EncoderParams teacher;
  ProjectionSet projections;
  EncoderParams student_velocity;  // momentum buffers, same shapes as student
  Matrix        query_velocity;
  std::uint64_t step_count = 0;

  friend bool operator==(StudentTeacherState const &, StudentTeacherState const &) = default;
};

/// Both networks start from the source model; momentum buffers start at zero.
inline StudentTeacherState make_state(EncoderParams const &source, std::uint64_t projection_seed,
                                      double projection_noise = 0.01)
{
  StudentTeacherState s;
  s.student          = source;
  s.teacher          = source;
  s.projections      = init_projections(source.feature_dim(), projection_seed, projection_noise);
  s.student_velocity = {Matrix(source.encoder.rows(), source.encoder.cols()),
                        Matrix(source.classifier.rows(), source.classifier.cols())};
  s.query_velocity   = Matrix(source.feature_dim(), source.feature_dim());
  return s;
}

struct AdaptConfig
{
  double          alpha              = 0.99;   // teacher EMA rate
  double          gamma              = 0.001;  // student learning rate
  double          momentum           = 0.9;
  double          conf_threshold     = 0.9;
  std::size_t     n_memory           = 1024;
  double          neg_ratio          = 0.1;
  double          temperature        = 1.0;
  bool            normalize_features = true;
  MemclrReduction reduction          = MemclrReduction::log_of_mean;
  bool            use_memclr         = true;
  // Pulls W_k toward W_q at the teacher EMA rate after each step.
  bool            ema_key_to_query   = false;
};

inline void validate(AdaptConfig const &cfg)
{
  if (!(cfg.alpha >= 0.0 && cfg.alpha <= 1.0))
  {
    throw Error("AdaptConfig: alpha must be in [0, 1]");
  }
  if (!(cfg.gamma >= 0.0) || !std::isfinite(cfg.gamma))
  {
    throw Error("AdaptConfig: gamma must be finite and non-negative");
  }
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0))
  {
    throw Error("AdaptConfig: momentum must be in [0, 1)");
  }
  if (!(cfg.conf_threshold > 0.0 && cfg.conf_threshold < 1.0))
  {
    throw Error("AdaptConfig: conf_threshold must be in (0, 1)");
  }
  if (cfg.n_memory == 0)
  {
    throw Error("AdaptConfig: n_memory must be positive");
  }
  if (!(cfg.neg_ratio > 0.0 && cfg.neg_ratio <= 1.0))
  {
    throw Error("AdaptConfig: neg_ratio must be in (0, 1]");
  }
  if (!(cfg.temperature > 0.0))
  {
    throw Error("AdaptConfig: temperature must be positive");
  }
}

struct LossGradients
{
  Matrix d_encoder;
  Matrix d_classifier;
  Matrix d_query;
};

struct ObjectiveResult
{
  LossValue     loss;
  LossGradients grads;
  ReadResult    read;  // empty when MemCLR is disabled
};

/// Student objective on one strong view against a fixed bank and fixed
/// pseudo-labels, with its analytic gradient. When `fixed_negatives` is given
/// it replaces the mined negative sets, which lets a finite-difference check
/// hold the discrete mining constant.
inline ObjectiveResult student_objective(EncoderParams const &student, Matrix const &query_weight,
                                         ProjectionSet const &proj, MemoryBank const &bank,
                                         Matrix const &strong_view, PseudoLabelSet const &labels,
                                         AdaptConfig const                           &cfg,
                                         std::vector<std::vector<std::size_t>> const *fixed_negatives =
                                             nullptr)
{
  Prediction const pred = predict(student, strong_view);
  auto const       pl   = pseudo_label_loss(pred.logits, labels);

  ObjectiveResult out;
  out.grads.d_classifier = matmul_tn(pred.features, pl.d_logits);
  Matrix d_features      = matmul_nt(pl.d_logits, student.classifier);
  out.grads.d_query      = Matrix(query_weight.rows(), query_weight.cols());

  double memclr = 0.0;
  if (cfg.use_memclr && strong_view.rows() > 0)
  {
    ProjectionSet read_proj = proj;
    read_proj.query         = query_weight;
    out.read                = read(bank, pred.features, read_proj, cfg.neg_ratio);
    if (fixed_negatives != nullptr)
    {
      out.read.negatives = *fixed_negatives;
    }
    auto const mc = memclr_loss(pred.features, out.read, bank, query_weight,
                                {cfg.temperature, cfg.normalize_features, cfg.reduction});
    memclr        = mc.loss;
    axpy(1.0, mc.d_features, d_features);
    out.grads.d_query = mc.d_query;
  }
  out.grads.d_encoder = matmul_tn(strong_view, d_features);
  out.loss            = total_loss(pl.loss, memclr);
  return out;
}

struct StepMetrics
{
  LossValue   losses;
  std::size_t n_instances     = 0;
  std::size_t n_pseudo_labels = 0;
  // Filled in by the caller from evaluation-only labels; NaN otherwise.
  double      teacher_acc = std::numeric_limits<double>::quiet_NaN();
  double      student_acc = std::numeric_limits<double>::quiet_NaN();
  // Instance-weighted teacher accuracy over all samples seen so far.
  double      teacher_acc_running = std::numeric_limits<double>::quiet_NaN();
  double      wall_ms     = 0.0;
};

struct StepResult
{
  StudentTeacherState state;
  MemoryBank          bank;
  StepMetrics         metrics;
};

/// One online adaptation step. Inputs are never modified; on any error an
/// exception propagates and the caller's state and bank stay as they were.
inline StepResult adapt_one(StudentTeacherState const &state, MemoryBank const &bank,
                            StreamSample const &sample, AdaptConfig const &cfg)
{
  auto const t0 = std::chrono::steady_clock::now();
  validate(cfg);
  if (sample.weak.rows() != sample.strong.rows() || sample.weak.cols() != sample.strong.cols())
  {
    throw Error("adapt_one: weak and strong views differ in shape");
  }
  if (bank.dim() != state.student.feature_dim())
  {
    throw Error("adapt_one: bank dim does not match feature dim");
  }

  StepResult out{state, bank, {}};
  out.metrics.n_instances = sample.n_instances();

  if (sample.n_instances() > 0)
  {
    if (sample.weak.cols() != state.student.input_dim())
    {
      throw Error("adapt_one: sample dim " + std::to_string(sample.weak.cols()) +
                  " != model input dim " + std::to_string(state.student.input_dim()));
    }
    Prediction const teacher = predict(state.teacher, sample.weak);
    PseudoLabelSet   labels  = filter_pseudo_labels(teacher.probs, cfg.conf_threshold);
    out.metrics.n_pseudo_labels = labels.size();

    out.bank = write(bank, teacher.features, state.projections);

    ObjectiveResult const obj =
        student_objective(state.student, state.projections.query, state.projections, out.bank,
                          sample.strong, labels, cfg);
    out.metrics.losses = obj.loss;

    StudentTeacherState &s = out.state;
    sgd_step(s.student.encoder, obj.grads.d_encoder, cfg.gamma, s.student_velocity.encoder,
             cfg.momentum);
    sgd_step(s.student.classifier, obj.grads.d_classifier, cfg.gamma,
             s.student_velocity.classifier, cfg.momentum);
    sgd_step(s.projections.query, obj.grads.d_query, cfg.gamma, s.query_velocity, cfg.momentum);

    s.teacher = ema_update(s.teacher, s.student, cfg.alpha);
    if (cfg.ema_key_to_query)
    {
      ema_into(s.projections.key, s.projections.query, cfg.alpha);
    }
    require_finite(s.student.encoder, "adapt_one");
    require_finite(s.student.classifier, "adapt_one");
    require_finite(s.projections.query, "adapt_one");
  }

  ++out.state.step_count;
  out.metrics.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

// Checkpoint ------------------------------------------------------------------
//
// "MXAD", u32 version, u64 D, C, K, N_l, step_count, then row-major f64:
// student E, W_c; teacher E, W_c; W_k, W_v, W_q; velocities for E, W_c, W_q;
// followed by a complete memory-bank block. Little-endian throughout.

struct Checkpoint
{
  StudentTeacherState state;
  MemoryBank          bank;

  friend bool operator==(Checkpoint const &, Checkpoint const &) = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(std::ostream &os, Checkpoint const &ck)
{
  auto const &s = ck.state;
  io::write_magic(os, "MXAD");
  io::write_u32(os, kCheckpointVersion);
  io::write_u64(os, s.student.input_dim());
  io::write_u64(os, s.student.feature_dim());
  io::write_u64(os, s.student.n_classes());
  io::write_u64(os, ck.bank.n_items());
  io::write_u64(os, s.step_count);
  for (Matrix const *m :
       {&s.student.encoder, &s.student.classifier, &s.teacher.encoder, &s.teacher.classifier,
        &s.projections.key, &s.projections.value, &s.projections.query,
        &s.student_velocity.encoder, &s.student_velocity.classifier, &s.query_velocity})
  {
    io::write_matrix_data(os, *m);
  }
  save_bank(os, ck.bank);
  if (!os)
  {
    throw Error("save_checkpoint: write failed");
  }
}

inline Checkpoint load_checkpoint(std::istream &is)
{
  io::expect_magic(is, "MXAD");
  auto const version = io::read_u32(is);
  if (version != kCheckpointVersion)
  {
    throw Error("load_checkpoint: unsupported version " + std::to_string(version));
  }
  auto const d  = io::read_u64(is);
  auto const c  = io::read_u64(is);
  auto const k  = io::read_u64(is);
  auto const nl = io::read_u64(is);
  if (d == 0 || c == 0 || k == 0 || d > 1u << 16 || c > 1u << 16 || k > 1u << 16)
  {
    throw Error("load_checkpoint: implausible dimensions");
  }
  Checkpoint ck;
  auto      &s = ck.state;
  s.step_count = io::read_u64(is);
  s.student    = {io::read_matrix_data(is, d, c), io::read_matrix_data(is, c, k)};
  s.teacher    = {io::read_matrix_data(is, d, c), io::read_matrix_data(is, c, k)};
  s.projections.key   = io::read_matrix_data(is, c, c);
  s.projections.value = io::read_matrix_data(is, c, c);
  s.projections.query = io::read_matrix_data(is, c, c);
  s.student_velocity  = {io::read_matrix_data(is, d, c), io::read_matrix_data(is, c, k)};
  s.query_velocity    = io::read_matrix_data(is, c, c);
  ck.bank             = load_bank(is);
  if (ck.bank.n_items() != nl || ck.bank.dim() != c)
  {
    throw Error("load_checkpoint: memory block does not match header");
  }
  return ck;
}

inline void save_checkpoint(std::string const &path, Checkpoint const &ck)
{
  std::ofstream os(path, std::ios::binary);
  if (!os)
  {
    throw Error("save_checkpoint: cannot open " + path);
  }
  save_checkpoint(os, ck);
}

inline Checkpoint load_checkpoint(std::string const &path)
{
  std::ifstream is(path, std::ios::binary);
  if (!is)
  {
    throw Error("load_checkpoint: cannot open " + path);
  }
  return load_checkpoint(is);
}

}  // namespace memclr
