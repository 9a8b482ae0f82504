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

// Key-value run configuration.
//
//   # comment
//   key = value
//
// One assignment per line, keys from `config_schema()`, later assignments win.
// Lists use ',' between values and ';' between rows. Shifts are written as
// ';'-separated ops applied left to right:
//
//   rotation:<degrees>:<plane_seed>   noise:<sigma>:<seed>
//   translation:<v0>,<v1>,...          scale:<factor>
//
// `shift = none` is the identity shift.

#include "memclr/harness.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace memclr {

namespace config_detail {

inline std::string trim(std::string_view s)
{
  auto const b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos)
  {
    return {};
  }
  auto const e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep)
{
  std::vector<std::string> out;
  std::size_t              start = 0;
  while (true)
  {
    auto const pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos)
    {
      break;
    }
    start = pos + 1;
  }
  return out;
}

inline double parse_double(std::string const &s)
{
  std::size_t used = 0;
  double      v    = 0.0;
  try
  {
    v = std::stod(s, &used);
  }
  catch (std::exception const &)
  {
    throw Error("config: not a number: \"" + s + "\"");
  }
  if (used != s.size() || !std::isfinite(v))
  {
    throw Error("config: not a finite number: \"" + s + "\"");
  }
  return v;
}

inline std::uint64_t parse_u64(std::string const &s)
{
  std::uint64_t v   = 0;
  auto const    res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
  {
    throw Error("config: not a non-negative integer: \"" + s + "\"");
  }
  return v;
}

inline bool parse_bool(std::string const &s)
{
  if (s == "true" || s == "1" || s == "on" || s == "yes")
  {
    return true;
  }
  if (s == "false" || s == "0" || s == "off" || s == "no")
  {
    return false;
  }
  throw Error("config: not a boolean: \"" + s + "\"");
}

inline std::vector<double> parse_list(std::string const &s)
{
  std::vector<double> out;
  for (auto const &item : split(s, ','))
  {
    out.push_back(parse_double(item));
  }
  return out;
}

inline Matrix parse_matrix(std::string const &s)
{
  std::vector<std::vector<double>> rows;
  for (auto const &r : split(s, ';'))
  {
    rows.push_back(parse_list(r));
  }
  std::size_t const   cols = rows.empty() ? 0 : rows.front().size();
  std::vector<double> data;
  for (auto const &r : rows)
  {
    if (r.size() != cols)
    {
      throw Error("config: ragged matrix \"" + s + "\"");
    }
    data.insert(data.end(), r.begin(), r.end());
  }
  return Matrix(rows.size(), cols, std::move(data));
}

// Shortest text that reads back to the same double.
inline std::string fmt(double v)
{
  char       buf[32];
  auto const res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string fmt_list(std::span<double const> v)
{
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i)
  {
    out += (i ? "," : "") + fmt(v[i]);
  }
  return out;
}

inline std::string fmt_matrix(Matrix const &m)
{
  std::string out;
  for (std::size_t r = 0; r < m.rows(); ++r)
  {
    out += (r ? ";" : "") + fmt_list(m.row(r));
  }
  return out;
}

}  // namespace config_detail

inline ShiftSpec parse_shift(std::string const &text)
{
  using namespace config_detail;
  ShiftSpec shift;
  if (trim(text) == "none" || trim(text).empty())
  {
    return shift;
  }
  for (auto const &op : split(text, ';'))
  {
    auto const parts = split(op, ':');
    auto const need  = [&](std::size_t n) {
      if (parts.size() != n)
      {
        throw Error("config: malformed shift op \"" + op + "\"");
      }
    };
    if (parts[0] == "rotation")
    {
      need(3);
      shift.ops.emplace_back(Rotation{parse_double(parts[1]), parse_u64(parts[2])});
    }
    else if (parts[0] == "noise")
    {
      need(3);
      shift.ops.emplace_back(Noise{parse_double(parts[1]), parse_u64(parts[2])});
    }
    else if (parts[0] == "translation")
    {
      need(2);
      shift.ops.emplace_back(Translation{parse_list(parts[1])});
    }
    else if (parts[0] == "scale")
    {
      need(2);
      shift.ops.emplace_back(Scale{parse_double(parts[1])});
    }
    else
    {
      throw Error("config: unknown shift op \"" + parts[0] + "\"");
    }
  }
  return shift;
}

inline std::string format_shift(ShiftSpec const &shift)
{
  using namespace config_detail;
  if (shift.ops.empty())
  {
    return "none";
  }
  std::string out;
  for (auto const &op : shift.ops)
  {
    if (!out.empty())
    {
      out += ";";
    }
    if (auto const *r = std::get_if<Rotation>(&op))
    {
      out += "rotation:" + fmt(r->degrees) + ":" + std::to_string(r->plane_seed);
    }
    else if (auto const *n = std::get_if<Noise>(&op))
    {
      out += "noise:" + fmt(n->sigma) + ":" + std::to_string(n->seed);
    }
    else if (auto const *t = std::get_if<Translation>(&op))
    {
      out += "translation:" + fmt_list(t->offset);
    }
    else if (auto const *s = std::get_if<Scale>(&op))
    {
      out += "scale:" + fmt(s->factor);
    }
  }
  return out;
}

struct ConfigField
{
  std::string                                              key;
  std::string                                              type;
  std::string                                              help;
  std::function<void(RunConfig &, std::string const &)>   set;
  std::function<std::string(RunConfig const &)>           get;
};

inline std::vector<ConfigField> const &config_schema()
{
  using namespace config_detail;
  using C = RunConfig;
  using S = std::string const &;

#define MEMCLR_REAL(key, member, help)                                                           \
  ConfigField                                                                                    \
  {                                                                                              \
    key, "real", help, [](C &c, S v) { c.member = parse_double(v); },                            \
        [](C const &c) { return fmt(c.member); }                                                 \
  }
#define MEMCLR_COUNT(key, member, help)                                                          \
  ConfigField                                                                                    \
  {                                                                                              \
    key, "count", help, [](C &c, S v) { c.member = static_cast<std::size_t>(parse_u64(v)); },    \
        [](C const &c) { return std::to_string(c.member); }                                      \
  }
#define MEMCLR_SEED(key, member, help)                                                           \
  ConfigField                                                                                    \
  {                                                                                              \
    key, "u64", help, [](C &c, S v) { c.member = parse_u64(v); },                                \
        [](C const &c) { return std::to_string(c.member); }                                      \
  }
#define MEMCLR_BOOL(key, member, help)                                                           \
  ConfigField                                                                                    \
  {                                                                                              \
    key, "bool", help, [](C &c, S v) { c.member = parse_bool(v); },                              \
        [](C const &c) { return std::string(c.member ? "true" : "false"); }                      \
  }

  static std::vector<ConfigField> const schema = {
      MEMCLR_REAL("alpha", adapt.alpha, "teacher EMA rate in [0, 1]"),
      MEMCLR_REAL("gamma", adapt.gamma, "student learning rate"),
      MEMCLR_REAL("momentum", adapt.momentum, "SGD momentum in [0, 1)"),
      MEMCLR_REAL("conf_threshold", adapt.conf_threshold,
                  "pseudo-label confidence threshold T (strict >)"),
      MEMCLR_COUNT("n_memory", adapt.n_memory, "memory items N_l"),
      MEMCLR_REAL("neg_ratio", adapt.neg_ratio, "fraction of least-attended items mined as negatives"),
      MEMCLR_REAL("temperature", adapt.temperature, "MemCLR similarity temperature"),
      MEMCLR_BOOL("normalize_features", adapt.normalize_features,
                  "cosine (true) or raw dot-product (false) MemCLR similarities"),
      ConfigField{"reduction", "enum", "MemCLR anchor reduction: log_of_mean | mean_of_log",
                  [](C &c, S v) {
                    if (v == "log_of_mean")
                      c.adapt.reduction = MemclrReduction::log_of_mean;
                    else if (v == "mean_of_log")
                      c.adapt.reduction = MemclrReduction::mean_of_log;
                    else
                      throw Error("config: unknown reduction \"" + v + "\"");
                  },
                  [](C const &c) {
                    return std::string(c.adapt.reduction == MemclrReduction::log_of_mean
                                           ? "log_of_mean"
                                           : "mean_of_log");
                  }},
      MEMCLR_BOOL("use_memclr", adapt.use_memclr, "false runs plain student-teacher"),
      MEMCLR_BOOL("ema_key_to_query", adapt.ema_key_to_query,
                  "pull W_k toward W_q at the EMA rate each step"),
      ConfigField{"class_means", "matrix", "per-class mean vectors, rows split by ';'",
                  [](C &c, S v) { c.domain.class_means = parse_matrix(v); },
                  [](C const &c) { return fmt_matrix(c.domain.class_means); }},
      ConfigField{"class_scale", "list", "per-class isotropic std dev",
                  [](C &c, S v) { c.domain.class_scale = parse_list(v); },
                  [](C const &c) { return fmt_list(c.domain.class_scale); }},
      MEMCLR_COUNT("min_instances", domain.min_instances, "fewest instances per stream sample"),
      MEMCLR_COUNT("max_instances", domain.max_instances, "most instances per stream sample"),
      ConfigField{"shift", "shift", "target shift ops, e.g. rotation:45:13;noise:0.2:0",
                  [](C &c, S v) { c.shift = parse_shift(v); },
                  [](C const &c) { return format_shift(c.shift); }},
      ConfigField{"mode", "enum", "online | offline",
                  [](C &c, S v) {
                    if (v == "online")
                      c.mode = RunMode::online;
                    else if (v == "offline")
                      c.mode = RunMode::offline;
                    else
                      throw Error("config: unknown mode \"" + v + "\"");
                  },
                  [](C const &c) { return to_string(c.mode); }},
      MEMCLR_COUNT("epochs", epochs, "offline passes over the target train split"),
      MEMCLR_COUNT("feature_dim", feature_dim, "feature dimension C"),
      MEMCLR_COUNT("stream_length", stream_length, "target stream samples"),
      MEMCLR_REAL("strong_jitter", strong_jitter, "std dev of the strong-view jitter"),
      MEMCLR_COUNT("source_samples", source_samples, "labeled source training instances"),
      MEMCLR_COUNT("source_holdout", source_holdout, "source holdout instances"),
      MEMCLR_COUNT("source_epochs", source_epochs, "source training epochs"),
      MEMCLR_REAL("source_lr", source_lr, "source training learning rate"),
      MEMCLR_REAL("source_momentum", source_momentum, "source training momentum"),
      MEMCLR_SEED("data_seed", domain.seed, "seed for source and target draws"),
      MEMCLR_SEED("order_seed", order_seed, "seed for the stream order"),
      MEMCLR_SEED("model_seed", model_seed, "seed for model, projection and memory init"),
      MEMCLR_COUNT("curve_points", curve_points, "teacher evaluations along the run"),
      MEMCLR_REAL("offline_train_fraction", offline_train_fraction,
                  "target train share of the offline split"),
      ConfigField{"out_dir", "path", "output directory",
                  [](C &c, S v) { c.out_dir = v; }, [](C const &c) { return c.out_dir; }},
      ConfigField{"seed", "u64", "shorthand: sets data_seed, order_seed and model_seed",
                  [](C &c, S v) {
                    auto const s = parse_u64(v);
                    c.domain.seed = c.order_seed = c.model_seed = s;
                  },
                  nullptr},
  };

#undef MEMCLR_REAL
#undef MEMCLR_COUNT
#undef MEMCLR_SEED
#undef MEMCLR_BOOL
  return schema;
}

inline ConfigField const &config_field(std::string_view key)
{
  for (auto const &f : config_schema())
  {
    if (f.key == key)
    {
      return f;
    }
  }
  throw Error("config: unknown key \"" + std::string(key) + "\"");
}

inline void set_config_value(RunConfig &cfg, std::string_view key, std::string const &value)
{
  config_field(key).set(cfg, config_detail::trim(value));
}

/// Applies `key = value` lines on top of `cfg`.
inline void apply_config(std::istream &is, RunConfig &cfg)
{
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line))
  {
    ++lineno;
    auto const hash = line.find('#');
    auto const body = config_detail::trim(line.substr(0, hash));
    if (body.empty())
    {
      continue;
    }
    auto const eq = body.find('=');
    if (eq == std::string::npos)
    {
      throw Error("config line " + std::to_string(lineno) + ": expected key = value");
    }
    try
    {
      set_config_value(cfg, config_detail::trim(body.substr(0, eq)), body.substr(eq + 1));
    }
    catch (Error const &e)
    {
      throw Error("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline void apply_config_file(std::string const &path, RunConfig &cfg)
{
  std::ifstream is(path);
  if (!is)
  {
    throw Error("config: cannot open " + path);
  }
  apply_config(is, cfg);
}

/// Every settable key with its current value, in schema order.
inline void write_config(std::ostream &os, RunConfig const &cfg)
{
  for (auto const &f : config_schema())
  {
    if (f.get)
    {
      os << f.key << " = " << f.get(cfg) << "\n";
    }
  }
}

inline void print_schema(std::ostream &os, RunConfig const &defaults)
{
  os << "# memclr run configuration (key = value, '#' starts a comment)\n";
  for (auto const &f : config_schema())
  {
    os << std::left << std::setw(24) << f.key << std::setw(8) << f.type
       << (f.get ? f.get(defaults) : std::string("-")) << "\n"
       << std::string(24, ' ') << f.help << "\n";
  }
}

}  // namespace memclr
