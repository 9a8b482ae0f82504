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

// Experiment orchestration: source training, online and offline adaptation
// runs, the stream-ordering experiment and the memory-size ablation.
//
// Accuracy (fraction of instances whose argmax class matches the hidden
// label) is the figure of merit throughout.

#include "memclr/adapt.hpp"
#include "memclr/streamsim.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace memclr {

enum class RunMode
{
  online,
  offline,
};

struct RunConfig
{
  AdaptConfig adapt;
  DomainSpec  domain;
  ShiftSpec   shift;
  RunMode     mode   = RunMode::online;
  std::size_t epochs = 1;  // offline only

  std::size_t feature_dim   = 8;
  std::size_t stream_length = 500;
  double      strong_jitter = 0.1;

  std::size_t source_samples  = 2000;
  std::size_t source_holdout  = 1000;
  std::size_t source_epochs   = 10;
  double      source_lr       = 0.001;
  double      source_momentum = 0.9;

  std::uint64_t order_seed   = 0;
  std::uint64_t model_seed   = 0;
  std::size_t   curve_points = 10;
  double        offline_train_fraction = 0.8;

  std::string out_dir = ".";
};

/// The default synthetic benchmark: two Gaussian classes in R^8, the target
/// rotated by 45 degrees in a fixed random plane plus N(0, 0.2^2) noise, a
/// 500-sample stream at batch size 1.
///
/// `seed` varies the data draws, the stream order and the model and memory
/// initialization; the shift geometry stays fixed so every seed faces the same
/// domain gap. The proxy model converges too slowly at the library default
/// learning rate for a 500-sample stream, so the benchmark runs at
/// gamma = 0.005 with MemCLR temperature 0.5.
inline RunConfig default_benchmark(std::uint64_t seed = 0)
{
  RunConfig cfg;
  cfg.domain.class_means = Matrix{
      {1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0},
      {-1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0},
  };
  cfg.domain.class_scale   = {0.4, 0.4};
  cfg.domain.min_instances = 1;
  cfg.domain.max_instances = 5;
  cfg.domain.seed          = seed;
  cfg.shift.ops            = {Rotation{45.0, 13}, Noise{0.2, 0}};
  cfg.stream_length        = 500;
  cfg.feature_dim          = 8;
  cfg.order_seed           = seed;
  cfg.model_seed           = seed;
  cfg.adapt.gamma          = 0.005;
  cfg.adapt.temperature    = 0.5;
  return cfg;
}

inline void validate(RunConfig const &cfg)
{
  validate(cfg.adapt);
  validate(cfg.domain);
  if (cfg.feature_dim == 0)
  {
    throw Error("RunConfig: feature_dim must be positive");
  }
  if (cfg.mode == RunMode::offline && cfg.epochs == 0)
  {
    throw Error("RunConfig: offline mode needs epochs >= 1");
  }
  if (cfg.source_epochs == 0)
  {
    throw Error("RunConfig: source_epochs must be >= 1");
  }
  if (cfg.source_samples == 0 || cfg.source_holdout == 0)
  {
    throw Error("RunConfig: source_samples and source_holdout must be positive");
  }
  if (cfg.stream_length == 0)
  {
    throw Error("RunConfig: stream_length must be positive");
  }
  if (!(cfg.offline_train_fraction > 0.0 && cfg.offline_train_fraction < 1.0))
  {
    throw Error("RunConfig: offline_train_fraction must be in (0, 1)");
  }
}

// Evaluation ------------------------------------------------------------------

inline double evaluate(EncoderParams const &params, LabeledSet const &data)
{
  if (data.size() == 0)
  {
    throw Error("evaluate: empty data");
  }
  Prediction const p       = predict(params, data.instances);
  std::size_t      correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i)
  {
    correct += argmax(p.logits.row(i)) == data.labels[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

inline double evaluate(EncoderParams const &params, TargetStream const &stream)
{
  return evaluate(params, stream.flatten());
}

// Source training -------------------------------------------------------------

struct SourceResult
{
  Checkpoint checkpoint;
  double     train_accuracy   = 0.0;
  double     holdout_accuracy = 0.0;
};

/// Holdout draws come from the same domain under an independent seed.
inline LabeledSet source_holdout(RunConfig const &cfg)
{
  DomainSpec spec = cfg.domain;
  spec.seed       = derive_seed(cfg.domain.seed, 0x48u);
  return gen_source(spec, cfg.source_holdout);
}

/// Supervised cross-entropy with momentum SGD, one instance per step. The
/// checkpoint holds the source model as both student and teacher, fresh
/// projections and a fresh memory bank of `cfg.adapt.n_memory` items.
inline SourceResult train_source(RunConfig const &cfg)
{
  validate(cfg);
  LabeledSet const data = gen_source(cfg.domain, cfg.source_samples);
  EncoderParams    model =
      init_encoder(cfg.domain.dim(), cfg.feature_dim, cfg.domain.n_classes(), cfg.model_seed);
  EncoderParams velocity{Matrix(model.encoder.rows(), model.encoder.cols()),
                         Matrix(model.classifier.rows(), model.classifier.cols())};

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(cfg.model_seed, 0x53u));

  Matrix x(1, data.instances.cols());
  for (std::size_t epoch = 0; epoch < cfg.source_epochs; ++epoch)
  {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t idx : order)
    {
      auto const src = data.instances.row(idx);
      std::copy(src.begin(), src.end(), x.row(0).begin());
      Prediction const  p     = predict(model, x);
      PseudoLabel const label{0, data.labels[idx], 1.0};
      auto const        ce    = pseudo_label_loss(p.logits, std::span(&label, 1));
      Matrix const      d_cls = matmul_tn(p.features, ce.d_logits);
      Matrix const      d_enc = matmul_tn(x, matmul_nt(ce.d_logits, model.classifier));
      sgd_step(model.classifier, d_cls, cfg.source_lr, velocity.classifier, cfg.source_momentum);
      sgd_step(model.encoder, d_enc, cfg.source_lr, velocity.encoder, cfg.source_momentum);
    }
  }

  SourceResult out;
  out.checkpoint.state = make_state(model, derive_seed(cfg.model_seed, 0x50u));
  out.checkpoint.bank  = init_bank(cfg.adapt.n_memory, cfg.feature_dim,
                                   derive_seed(cfg.model_seed, 0x4Du));
  out.train_accuracy   = evaluate(model, data);
  out.holdout_accuracy = evaluate(model, source_holdout(cfg));
  return out;
}

// Runs ------------------------------------------------------------------------

struct CurvePoint
{
  std::size_t samples_seen = 0;
  double      accuracy     = 0.0;
};

struct RunReport
{
  std::string              variant;
  RunMode                  mode = RunMode::online;
  std::vector<StepMetrics> steps;
  std::vector<CurvePoint>  curve;  // teacher accuracy on the evaluation set
  double                   source_only_accuracy = 0.0;
  double                   final_accuracy       = 0.0;
  double                   final_student_accuracy = 0.0;
  std::size_t              failed_steps         = 0;
  std::size_t              max_sample_reads     = 0;
  std::uint64_t            data_seed            = 0;
  std::uint64_t            order_seed           = 0;
  std::uint64_t            model_seed           = 0;
  Checkpoint               final_checkpoint;
};

/// Hands out stream samples to the adaptation loop in order and counts how
/// often each one is handed out.
class SampleFeed
{
public:
  explicit SampleFeed(TargetStream const &stream)
    : stream_(stream)
    , reads_(stream.size(), 0)
  {}

  bool done() const noexcept { return next_ >= stream_.size(); }

  StreamSample const &next()
  {
    if (done())
    {
      throw Error("SampleFeed: stream exhausted");
    }
    ++reads_[next_];
    return stream_[next_++];
  }

  std::size_t max_reads() const
  {
    return reads_.empty() ? 0 : *std::max_element(reads_.begin(), reads_.end());
  }

private:
  TargetStream const      &stream_;
  std::vector<std::size_t> reads_;
  std::size_t              next_ = 0;
};

namespace detail {

inline double sample_accuracy(EncoderParams const &params, StreamSample const &s,
                              std::span<std::size_t const> labels, std::size_t &correct)
{
  correct = 0;
  if (s.n_instances() == 0)
  {
    return std::numeric_limits<double>::quiet_NaN();
  }
  Prediction const p = predict(params, s.weak);
  for (std::size_t k = 0; k < s.n_instances(); ++k)
  {
    correct += argmax(p.logits.row(k)) == labels[k] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(s.n_instances());
}

/// Adapts on `train` for `epochs` passes (pass e > 0 in a permutation drawn
/// from `order_seed`), evaluating the teacher on `eval`.
inline RunReport adapt_over(RunConfig const &cfg, Checkpoint const &start, TargetStream const &train,
                            TargetStream const &eval, std::size_t epochs)
{
  if (start.bank.n_items() != cfg.adapt.n_memory)
  {
    throw Error("run: checkpoint memory has " + std::to_string(start.bank.n_items()) +
                " items, config asks for " + std::to_string(cfg.adapt.n_memory));
  }
  if (start.state.student.input_dim() != cfg.domain.dim() ||
      start.state.student.n_classes() != cfg.domain.n_classes() ||
      start.state.student.feature_dim() != cfg.feature_dim)
  {
    throw Error("run: checkpoint dimensions do not match config");
  }

  LabeledSet const eval_set = eval.flatten();
  RunReport        rep;
  rep.mode                 = cfg.mode;
  rep.data_seed            = cfg.domain.seed;
  rep.order_seed           = cfg.order_seed;
  rep.model_seed           = cfg.model_seed;
  rep.source_only_accuracy = evaluate(start.state.teacher, eval_set);

  StudentTeacherState state = start.state;
  MemoryBank          bank  = start.bank;

  std::size_t const total_steps = epochs * train.size();
  std::size_t const n_points    = std::min(cfg.curve_points, total_steps);
  std::size_t       seen_instances = 0, seen_correct = 0, step = 0;

  std::mt19937_64 erng(derive_seed(cfg.order_seed, 0x45u));
  for (std::size_t epoch = 0; epoch < epochs; ++epoch)
  {
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (epoch > 0)
    {
      std::shuffle(order.begin(), order.end(), erng);
    }
    TargetStream const pass = train.select(order);
    SampleFeed         feed(pass);
    for (std::size_t i = 0; !feed.done(); ++i, ++step)
    {
      StreamSample const &sample = feed.next();

      // Test-then-train: score both networks on the sample before adapting.
      auto const   labels  = pass.hidden_labels(i);
      std::size_t  correct = 0, unused = 0;
      double const t_acc   = sample_accuracy(state.teacher, sample, labels, correct);
      double const s_acc   = sample_accuracy(state.student, sample, labels, unused);
      seen_instances += sample.n_instances();
      seen_correct += correct;

      StepMetrics m;
      try
      {
        StepResult r = adapt_one(state, bank, sample, cfg.adapt);
        state        = std::move(r.state);
        bank         = std::move(r.bank);
        m            = r.metrics;
      }
      catch (Error const &e)
      {
        std::clog << "memclr: step " << step << " aborted: " << e.what() << "\n";
        ++rep.failed_steps;
        ++state.step_count;
        m.n_instances = sample.n_instances();
      }
      m.teacher_acc         = t_acc;
      m.student_acc         = s_acc;
      m.teacher_acc_running = seen_instances == 0 ? 0.0
                                                  : static_cast<double>(seen_correct) /
                                                        static_cast<double>(seen_instances);
      rep.steps.push_back(m);

      if (n_points > 0 && (step + 1) * n_points / total_steps != step * n_points / total_steps)
      {
        rep.curve.push_back({step + 1, evaluate(state.teacher, eval_set)});
      }
    }
    rep.max_sample_reads = std::max(rep.max_sample_reads, feed.max_reads());
  }

  rep.final_accuracy         = evaluate(state.teacher, eval_set);
  rep.final_student_accuracy = evaluate(state.student, eval_set);
  rep.final_checkpoint       = {std::move(state), std::move(bank)};
  return rep;
}

inline std::string variant_name(AdaptConfig const &a)
{
  return a.use_memclr ? "memclr" : "student_teacher";
}

}  // namespace detail

inline TargetStream make_stream(RunConfig const &cfg)
{
  return gen_target_stream(cfg.domain, cfg.shift, cfg.stream_length, cfg.order_seed,
                           cfg.strong_jitter);
}

/// Single pass over the stream; the teacher is finally evaluated on the whole
/// stream.
inline RunReport run_online(RunConfig const &cfg, Checkpoint const &checkpoint)
{
  validate(cfg);
  TargetStream const stream = make_stream(cfg);
  RunReport          rep    = detail::adapt_over(cfg, checkpoint, stream, stream, 1);
  rep.mode                  = RunMode::online;
  rep.variant               = detail::variant_name(cfg.adapt);
  return rep;
}

/// Train/test split of the generated target data, fixed by the data seed.
inline std::pair<TargetStream, TargetStream> offline_split(RunConfig const &cfg)
{
  TargetStream const       stream = make_stream(cfg);
  std::vector<std::size_t> by_id(stream.size());
  for (std::size_t i = 0; i < stream.size(); ++i)
  {
    by_id[stream[i].id] = i;
  }
  std::mt19937_64 rng(derive_seed(cfg.domain.seed, 0x73u));
  std::shuffle(by_id.begin(), by_id.end(), rng);
  auto const n_train = static_cast<std::size_t>(
      std::round(cfg.offline_train_fraction * static_cast<double>(stream.size())));
  if (n_train == 0 || n_train == stream.size())
  {
    throw Error("offline_split: stream too short to split");
  }
  std::vector<std::size_t> train(by_id.begin(), by_id.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test(by_id.begin() + static_cast<std::ptrdiff_t>(n_train), by_id.end());
  // Keep stream order within each split.
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {stream.select(train), stream.select(test)};
}

/// `cfg.epochs` passes over the target train split, evaluated on the disjoint
/// test split.
inline RunReport run_offline(RunConfig const &cfg, Checkpoint const &checkpoint)
{
  validate(cfg);
  if (cfg.epochs == 0)
  {
    throw Error("run_offline: epochs must be >= 1");
  }
  auto const [train, test] = offline_split(cfg);
  RunReport rep            = detail::adapt_over(cfg, checkpoint, train, test, cfg.epochs);
  rep.mode                 = RunMode::offline;
  rep.variant              = detail::variant_name(cfg.adapt);
  return rep;
}

inline RunReport run(RunConfig const &cfg, Checkpoint const &checkpoint)
{
  return cfg.mode == RunMode::online ? run_online(cfg, checkpoint) : run_offline(cfg, checkpoint);
}

struct Dispersion
{
  double mean = 0.0;
  double std  = 0.0;  // sample standard deviation (n - 1)
};

inline Dispersion dispersion(std::span<double const> xs)
{
  Dispersion d;
  if (xs.empty())
  {
    return d;
  }
  d.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() > 1)
  {
    double ss = 0.0;
    for (double x : xs)
    {
      ss += (x - d.mean) * (x - d.mean);
    }
    d.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return d;
}

struct OrderingResult
{
  std::vector<std::uint64_t> order_seeds;
  std::vector<RunReport>     reports;
  std::vector<double>        accuracies;
  Dispersion                 summary;
};

/// Online runs over the same sample multiset in `n_orders` orders
/// (order seeds cfg.order_seed, cfg.order_seed + 1, ...).
inline OrderingResult ordering_experiment(RunConfig const &cfg, Checkpoint const &checkpoint,
                                          std::size_t n_orders)
{
  if (n_orders < 2)
  {
    throw Error("ordering_experiment: need at least two orders");
  }
  OrderingResult out;
  for (std::size_t k = 0; k < n_orders; ++k)
  {
    RunConfig c  = cfg;
    c.mode       = RunMode::online;
    c.order_seed = cfg.order_seed + k;
    out.order_seeds.push_back(c.order_seed);
    out.reports.push_back(run_online(c, checkpoint));
    out.accuracies.push_back(out.reports.back().final_accuracy);
  }
  out.summary = dispersion(out.accuracies);
  return out;
}

struct AblationRow
{
  std::size_t n_memory = 0;
  double      accuracy = 0.0;
  RunReport   report;
};

/// Order-preserving removal of duplicates.
inline std::vector<std::size_t> dedup_sizes(std::span<std::size_t const> sizes)
{
  std::vector<std::size_t> out;
  std::set<std::size_t>    seen;
  for (std::size_t s : sizes)
  {
    if (seen.insert(s).second)
    {
      out.push_back(s);
    }
  }
  return out;
}

/// One run per memory size, everything else identical. Each arm gets a fresh
/// bank of the requested size.
inline std::vector<AblationRow> ablate_memory(RunConfig const &cfg, Checkpoint const &checkpoint,
                                              std::span<std::size_t const> sizes)
{
  if (sizes.empty())
  {
    throw Error("ablate_memory: no sizes given");
  }
  std::vector<AblationRow> rows;
  for (std::size_t n : dedup_sizes(sizes))
  {
    if (n == 0)
    {
      throw Error("ablate_memory: memory size must be positive");
    }
    RunConfig c      = cfg;
    c.adapt.n_memory = n;
    Checkpoint ck    = checkpoint;
    ck.bank          = init_bank(n, cfg.feature_dim, derive_seed(cfg.model_seed, 0x4Du));
    RunReport rep    = run(c, ck);
    rows.push_back({n, rep.final_accuracy, std::move(rep)});
  }
  return rows;
}

// Report output ---------------------------------------------------------------

inline std::string to_string(RunMode m)
{
  return m == RunMode::online ? "online" : "offline";
}

/// CSV columns: step, loss_total, loss_pl, loss_memclr, n_pseudo,
/// teacher_acc_running, wall_ms. With `include_timing` off the wall_ms column
/// is written as 0 so that reruns compare byte for byte.
inline void write_metrics_csv(std::ostream &os, RunReport const &rep, bool include_timing = true)
{
  os << "step,loss_total,loss_pl,loss_memclr,n_pseudo,teacher_acc_running,wall_ms\n";
  os << std::setprecision(17);
  for (std::size_t i = 0; i < rep.steps.size(); ++i)
  {
    auto const &m = rep.steps[i];
    os << i << ',' << m.losses.total << ',' << m.losses.pl << ',' << m.losses.memclr << ','
       << m.n_pseudo_labels << ',' << m.teacher_acc_running << ','
       << (include_timing ? m.wall_ms : 0.0) << '\n';
  }
}

/// Summary without timing, so identical runs give identical bytes.
inline nlohmann::ordered_json report_json(RunReport const &rep)
{
  nlohmann::ordered_json j;
  j["variant"]                = rep.variant;
  j["mode"]                   = to_string(rep.mode);
  j["steps"]                  = rep.steps.size();
  j["failed_steps"]           = rep.failed_steps;
  j["source_only_accuracy"]   = rep.source_only_accuracy;
  j["final_accuracy"]         = rep.final_accuracy;
  j["final_student_accuracy"] = rep.final_student_accuracy;
  j["max_sample_reads"]       = rep.max_sample_reads;
  j["seeds"] = {{"data", rep.data_seed}, {"order", rep.order_seed}, {"model", rep.model_seed}};
  auto &curve = j["curve"] = nlohmann::ordered_json::array();
  for (auto const &p : rep.curve)
  {
    curve.push_back({{"samples_seen", p.samples_seen}, {"accuracy", p.accuracy}});
  }
  double      loss_sum = 0.0;
  std::size_t pseudo   = 0;
  for (auto const &m : rep.steps)
  {
    loss_sum += m.losses.total;
    pseudo += m.n_pseudo_labels;
  }
  j["mean_loss"]         = rep.steps.empty() ? 0.0 : loss_sum / static_cast<double>(rep.steps.size());
  j["total_pseudo_labels"] = pseudo;
  return j;
}

inline std::string report_string(RunReport const &rep)
{
  return report_json(rep).dump(2) + "\n";
}

}  // namespace memclr
