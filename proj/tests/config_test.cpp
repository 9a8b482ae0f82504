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

#include "memclr/memclr.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace memclr;

TEST(Config, AppliesKeyValueLines)
{
  RunConfig          cfg = default_benchmark(0);
  std::istringstream is(R"(# comment
alpha = 0.5
n_memory=64   # trailing comment
reduction = mean_of_log
use_memclr = false
shift = rotation:30:4;translation:1,0,0,0,0,0,0,0;scale:2
mode = offline
epochs = 3
class_means = 1,0;0,1
class_scale = 0.1,0.2
seed = 9
order_seed = 4
)");
  apply_config(is, cfg);
  EXPECT_EQ(cfg.adapt.alpha, 0.5);
  EXPECT_EQ(cfg.adapt.n_memory, 64u);
  EXPECT_EQ(cfg.adapt.reduction, MemclrReduction::mean_of_log);
  EXPECT_FALSE(cfg.adapt.use_memclr);
  ASSERT_EQ(cfg.shift.ops.size(), 3u);
  EXPECT_EQ(std::get<Rotation>(cfg.shift.ops[0]).plane_seed, 4u);
  EXPECT_EQ(std::get<Translation>(cfg.shift.ops[1]).offset.size(), 8u);
  EXPECT_EQ(std::get<Scale>(cfg.shift.ops[2]).factor, 2.0);
  EXPECT_EQ(cfg.mode, RunMode::offline);
  EXPECT_EQ(cfg.epochs, 3u);
  EXPECT_EQ(cfg.domain.class_means, (Matrix{{1.0, 0.0}, {0.0, 1.0}}));
  EXPECT_EQ(cfg.domain.class_scale, (std::vector<double>{0.1, 0.2}));
  EXPECT_EQ(cfg.domain.seed, 9u);
  EXPECT_EQ(cfg.model_seed, 9u);
  EXPECT_EQ(cfg.order_seed, 4u);
}

TEST(Config, WrittenConfigReadsBackIdentically)
{
  RunConfig cfg = default_benchmark(17);
  cfg.adapt.neg_ratio = 0.123456789012345;
  cfg.shift.ops.push_back(Translation{{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8}});
  std::stringstream io;
  write_config(io, cfg);
  RunConfig back;
  apply_config(io, back);
  std::ostringstream a, b;
  write_config(a, cfg);
  write_config(b, back);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(back.adapt.neg_ratio, cfg.adapt.neg_ratio);
}

TEST(Config, ErrorsNameTheLine)
{
  RunConfig          cfg;
  std::istringstream unknown("alpha = 0.5\nbogus = 1\n");
  try
  {
    apply_config(unknown, cfg);
    FAIL() << "expected an error";
  }
  catch (Error const &e)
  {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  for (char const *bad : {"alpha = x", "n_memory = -3", "use_memclr = maybe", "alpha",
                          "shift = spin:3", "class_means = 1,2;3", "mode = sideways"})
  {
    std::istringstream is(bad);
    EXPECT_THROW(apply_config(is, cfg), Error) << bad;
  }
}

TEST(Config, IdentityShift)
{
  EXPECT_TRUE(parse_shift("none").ops.empty());
  EXPECT_EQ(format_shift(ShiftSpec{}), "none");
  EXPECT_EQ(format_shift(parse_shift("noise:0.2:0")), "noise:0.2:0");
}

TEST(Config, SchemaListsEveryKey)
{
  std::ostringstream os;
  print_schema(os, default_benchmark(0));
  for (auto const &f : config_schema())
  {
    EXPECT_NE(os.str().find(f.key), std::string::npos) << f.key;
  }
}
