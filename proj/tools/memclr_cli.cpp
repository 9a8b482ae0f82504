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

#include "memclr/config.hpp"
#include "memclr/harness.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace memclr;

namespace {

// Options shared by every run-style subcommand.
struct Common
{
  std::string                        config_path;
  std::string                        checkpoint;
  std::optional<std::string>         out;
  bool                               no_timing = false;
  std::map<std::string, std::string> overrides;
};

std::string flag_name(std::string key)
{
  std::replace(key.begin(), key.end(), '_', '-');
  return "--" + key;
}

void add_common(CLI::App &cmd, Common &c, bool wants_checkpoint)
{
  cmd.add_option("--config", c.config_path, "key = value config file (see config-schema)")
      ->check(CLI::ExistingFile);
  cmd.add_option("--out", c.out, "output directory (overrides out_dir)");
  if (wants_checkpoint)
  {
    cmd.add_option("--checkpoint", c.checkpoint,
                   "start from this checkpoint instead of training a source model")
        ->check(CLI::ExistingFile);
  }
  cmd.add_flag("--no-timing", c.no_timing, "write wall_ms as 0 so reruns compare byte for byte");
  for (auto const &f : config_schema())
  {
    std::string const key = f.key;
    if (key == "out_dir")
    {
      continue;
    }
    cmd.add_option_function<std::string>(
           flag_name(key), [&c, key](std::string const &v) { c.overrides[key] = v; },
           f.help + " [" + f.type + "]")
        ->type_name(f.type);
  }
}

// Benchmark defaults, then the config file, then command-line flags.
RunConfig resolve(Common const &c)
{
  RunConfig cfg = default_benchmark(0);
  if (!c.config_path.empty())
  {
    apply_config_file(c.config_path, cfg);
  }
  // `seed` first so that explicit per-seed flags win over it.
  if (auto it = c.overrides.find("seed"); it != c.overrides.end())
  {
    set_config_value(cfg, "seed", it->second);
  }
  for (auto const &[key, value] : c.overrides)
  {
    if (key != "seed")
    {
      set_config_value(cfg, key, value);
    }
  }
  if (c.out)
  {
    cfg.out_dir = *c.out;
  }
  validate(cfg);
  fs::create_directories(cfg.out_dir);
  std::ofstream os(fs::path(cfg.out_dir) / "config.txt");
  write_config(os, cfg);
  if (!os)
  {
    throw Error("cannot write to " + cfg.out_dir);
  }
  return cfg;
}

fs::path out_path(RunConfig const &cfg, std::string const &name)
{
  return fs::path(cfg.out_dir) / name;
}

std::ofstream open_out(RunConfig const &cfg, std::string const &name)
{
  auto          path = out_path(cfg, name);
  std::ofstream os(path, std::ios::binary);
  if (!os)
  {
    throw Error("cannot open " + path.string() + " for writing");
  }
  return os;
}

Checkpoint starting_point(Common const &c, RunConfig const &cfg)
{
  if (!c.checkpoint.empty())
  {
    return load_checkpoint(c.checkpoint);
  }
  SourceResult src = train_source(cfg);
  std::cout << "source model: holdout accuracy " << src.holdout_accuracy << "\n";
  return std::move(src.checkpoint);
}

void write_report(RunConfig const &cfg, RunReport const &rep, bool timing, std::string const &stem)
{
  auto csv = open_out(cfg, stem + "metrics.csv");
  write_metrics_csv(csv, rep, timing);
  auto js = open_out(cfg, stem + "report.json");
  js << report_string(rep);
}

void print_summary(RunReport const &rep)
{
  std::cout << rep.variant << " (" << to_string(rep.mode) << "): source-only "
            << rep.source_only_accuracy << " -> adapted " << rep.final_accuracy << " over "
            << rep.steps.size() << " steps";
  if (rep.failed_steps > 0)
  {
    std::cout << ", " << rep.failed_steps << " failed steps";
  }
  std::cout << "\n";
}

int cmd_train_source(Common const &c)
{
  RunConfig const    cfg = resolve(c);
  SourceResult const src = train_source(cfg);
  save_checkpoint(out_path(cfg, "source.mxad").string(), src.checkpoint);
  save_bank(out_path(cfg, "source_bank.memx").string(), src.checkpoint.bank);
  nlohmann::ordered_json j;
  j["train_accuracy"]   = src.train_accuracy;
  j["holdout_accuracy"] = src.holdout_accuracy;
  open_out(cfg, "source.json") << j.dump(2) << "\n";
  std::cout << "source model: train " << src.train_accuracy << ", holdout "
            << src.holdout_accuracy << "\n";
  return 0;
}

int cmd_adapt(Common const &c, RunMode mode)
{
  RunConfig cfg = resolve(c);
  cfg.mode      = mode;
  Checkpoint const ck  = starting_point(c, cfg);
  RunReport const  rep = run(cfg, ck);
  write_report(cfg, rep, !c.no_timing, "");
  save_checkpoint(out_path(cfg, "adapted.mxad").string(), rep.final_checkpoint);
  save_bank(out_path(cfg, "adapted_bank.memx").string(), rep.final_checkpoint.bank);
  print_summary(rep);
  return 0;
}

int cmd_eval(Common const &c, bool student, std::string const &features)
{
  if (c.checkpoint.empty())
  {
    throw Error("eval needs --checkpoint");
  }
  RunConfig const     cfg    = resolve(c);
  Checkpoint const    ck     = load_checkpoint(c.checkpoint);
  EncoderParams const &model = student ? ck.state.student : ck.state.teacher;
  LabeledSet const    target = make_stream(cfg).flatten();

  nlohmann::ordered_json j;
  j["network"]         = student ? "student" : "teacher";
  j["target_accuracy"] = evaluate(model, target);
  j["source_accuracy"] = evaluate(model, source_holdout(cfg));
  open_out(cfg, "eval.json") << j.dump(2) << "\n";
  std::cout << j.dump() << "\n";

  if (!features.empty())
  {
    LabeledSet emb{predict(model, target.instances).features, target.labels};
    std::ofstream os(features);
    if (!os)
    {
      throw Error("cannot open " + features + " for writing");
    }
    dump_labeled(os, emb);
  }
  return 0;
}

std::vector<std::size_t> parse_sizes(std::string const &text)
{
  std::vector<std::size_t> out;
  for (auto const &s : config_detail::split(text, ','))
  {
    out.push_back(static_cast<std::size_t>(config_detail::parse_u64(s)));
  }
  return out;
}

int cmd_ablate(Common const &c, std::string const &sizes_text)
{
  RunConfig const  cfg   = resolve(c);
  auto const       sizes = parse_sizes(sizes_text);
  Checkpoint const ck    = starting_point(c, cfg);
  auto const       rows  = ablate_memory(cfg, ck, sizes);

  auto csv = open_out(cfg, "ablation.csv");
  csv << "n_memory,source_only_accuracy,final_accuracy\n" << std::setprecision(17);
  for (auto const &r : rows)
  {
    csv << r.n_memory << ',' << r.report.source_only_accuracy << ',' << r.accuracy << '\n';
    write_report(cfg, r.report, !c.no_timing, "n" + std::to_string(r.n_memory) + "_");
    std::cout << "n_memory " << r.n_memory << ": " << r.accuracy << "\n";
  }
  return 0;
}

int cmd_ordering(Common const &c, std::size_t n_orders)
{
  RunConfig const  cfg = resolve(c);
  Checkpoint const ck  = starting_point(c, cfg);
  auto const       res = ordering_experiment(cfg, ck, n_orders);

  auto csv = open_out(cfg, "ordering.csv");
  csv << "order_seed,final_accuracy\n" << std::setprecision(17);
  for (std::size_t k = 0; k < res.accuracies.size(); ++k)
  {
    csv << res.order_seeds[k] << ',' << res.accuracies[k] << '\n';
    write_report(cfg, res.reports[k], !c.no_timing,
                 "order" + std::to_string(res.order_seeds[k]) + "_");
  }
  nlohmann::ordered_json j;
  j["n_orders"] = n_orders;
  j["mean"]     = res.summary.mean;
  j["std"]      = res.summary.std;
  open_out(cfg, "ordering.json") << j.dump(2) << "\n";
  std::cout << "final accuracy over " << n_orders << " orders: mean " << res.summary.mean
            << ", std " << res.summary.std << "\n";
  return 0;
}

int cmd_dump_data(Common const &c)
{
  RunConfig const cfg = resolve(c);
  auto            src = open_out(cfg, "source.txt");
  dump_labeled(src, gen_source(cfg.domain, cfg.source_samples));
  auto tgt = open_out(cfg, "target.txt");
  dump_stream(tgt, make_stream(cfg));
  return 0;
}

}  // namespace

int main(int argc, char **argv)
{
  CLI::App app{"memclr: online source-free adaptation with a cross-attention memory"};
  app.require_subcommand(1);

  Common train_c, online_c, offline_c, eval_c, ablate_c, order_c, dump_c;

  auto *train = app.add_subcommand("train-source", "train the source model and write a checkpoint");
  add_common(*train, train_c, false);

  auto *online = app.add_subcommand("adapt-online", "single pass over the target stream");
  add_common(*online, online_c, true);

  auto *offline =
      app.add_subcommand("adapt-offline", "several passes over a target train split");
  add_common(*offline, offline_c, true);

  bool        use_student = false;
  std::string features_path;
  auto       *eval = app.add_subcommand("eval", "accuracy of a checkpoint on source and target");
  add_common(*eval, eval_c, true);
  eval->add_flag("--student", use_student, "evaluate the student instead of the teacher");
  eval->add_option("--dump-features", features_path, "write target features in dump format");

  std::string sizes = "16,64,256";
  auto       *ablate = app.add_subcommand("ablate-memory", "final accuracy per memory size");
  add_common(*ablate, ablate_c, true);
  ablate->add_option("--sizes", sizes, "comma-separated memory sizes")->capture_default_str();

  std::size_t n_orders = 5;
  auto       *order    = app.add_subcommand("ordering-exp", "final accuracy over stream orders");
  add_common(*order, order_c, true);
  order->add_option("--n-orders", n_orders, "number of orders (>= 2)")->capture_default_str();

  auto *dump = app.add_subcommand("dump-data", "write source and target data in dump format");
  add_common(*dump, dump_c, false);

  auto *schema = app.add_subcommand("config-schema", "print config keys, types and defaults");

  CLI11_PARSE(app, argc, argv);

  try
  {
    if (*train)
      return cmd_train_source(train_c);
    if (*online)
      return cmd_adapt(online_c, RunMode::online);
    if (*offline)
      return cmd_adapt(offline_c, RunMode::offline);
    if (*eval)
      return cmd_eval(eval_c, use_student, features_path);
    if (*ablate)
      return cmd_ablate(ablate_c, sizes);
    if (*order)
      return cmd_ordering(order_c, n_orders);
    if (*dump)
      return cmd_dump_data(dump_c);
    if (*schema)
    {
      print_schema(std::cout, default_benchmark(0));
      return 0;
    }
  }
  catch (std::exception const &e)
  {
    std::cerr << "memclr: error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
