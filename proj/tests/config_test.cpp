// Copyright 2026 The FairClip Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fairclip/config.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "test_util.hpp"

namespace fairclip {
namespace {

ExperimentConfig ParseText(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

TEST(ConfigTest, DefaultsFromMinimalFile) {
  const ExperimentConfig c = ParseText("[experiment]\nname = tiny\n");
  EXPECT_EQ(c.name, "tiny");
  EXPECT_EQ(c.data.source, "synthetic");
  EXPECT_EQ(c.preset, "income-simple");
  EXPECT_FALSE(c.has_privacy_section);
  EXPECT_FALSE(c.train.privacy_target.has_value());
  EXPECT_EQ(c.train.strategy, ClipStrategy::kHard);
  EXPECT_EQ(c.train.patience, std::optional<std::uint64_t>(10));
  EXPECT_EQ(c.analysis.reduction, Reduction::kSum);
}

TEST(ConfigTest, ParsesEverySection) {
  const ExperimentConfig c = ParseText(R"(
[experiment]
name = x
dataset = toy
[data]
n = 500
dim = 4
shift = 0.5
normalize = false
[model]
preset = income-complex
hidden = 16, 16, 8
[privacy]
epsilon = 3
delta = 1e-6
orders = 2,4,8
[clip]
strategy = softadaclip
initial_bound = 0.01
fraction_noise = 2.5
[train]
epochs = 4
sampling_rate = 0.05
optimizer = sgd
patience = none
threads = 4
[analysis]
attributes = sex, age
reduction = mean
split = validation
)");
  EXPECT_EQ(c.data.synthetic.n, 500u);
  EXPECT_EQ(c.data.synthetic.shift, 0.5);
  EXPECT_FALSE(c.data.normalize);
  EXPECT_EQ(c.hidden, (std::vector<std::size_t>{16, 16, 8}));
  ASSERT_TRUE(c.train.privacy_target.has_value());
  EXPECT_EQ(c.train.privacy_target->epsilon, 3.0);
  EXPECT_EQ(c.train.privacy_target->delta, 1e-6);
  EXPECT_EQ(c.train.orders, (std::vector<int>{2, 4, 8}));
  EXPECT_EQ(c.train.strategy, ClipStrategy::kSoftAdaClip);
  EXPECT_EQ(c.train.fraction_noise, std::optional<double>(2.5));
  EXPECT_EQ(c.train.optimizer, OptimizerKind::kSgd);
  EXPECT_FALSE(c.train.patience.has_value());
  EXPECT_EQ(c.train.threads, 4u);
  EXPECT_EQ(c.analysis.attributes, (std::vector<std::string>{"sex", "age"}));
  EXPECT_EQ(c.analysis.reduction, Reduction::kMean);
  EXPECT_EQ(c.analysis.split, "validation");
}

TEST(ConfigTest, RoundTripIsLossless) {
  ExperimentConfig c = ParseText("[experiment]\nname = rt\n[privacy]\nepsilon = 8\n");
  c.train.learning_rate = 0.1 + 0.2;
  c.train.initial_bound = 1.0 / 3.0;
  c.data.synthetic.feature_scale = 1e-7;
  c.train.max_steps = 123;
  c.hidden = std::vector<std::size_t>{7, 5};
  const std::string text = write_config(c);
  const ExperimentConfig back = ParseText(text);
  EXPECT_EQ(back.train.learning_rate, c.train.learning_rate);
  EXPECT_EQ(back.train.initial_bound, c.train.initial_bound);
  EXPECT_EQ(back.data.synthetic.feature_scale, c.data.synthetic.feature_scale);
  EXPECT_EQ(back.train.max_steps, c.train.max_steps);
  EXPECT_EQ(back.hidden, c.hidden);
  EXPECT_EQ(write_config(back), text);
}

TEST(ConfigTest, ShippedConfigsLoadAndRoundTrip) {
  std::size_t seen = 0;
  for (const auto& entry : std::filesystem::directory_iterator(FAIRCLIP_CONFIG_DIR)) {
    if (entry.path().extension() != ".ini") continue;
    ++seen;
    const ExperimentConfig c = load_config(entry.path().string());
    EXPECT_FALSE(c.name.empty()) << entry.path();
    const std::string text = write_config(c);
    EXPECT_EQ(write_config(ParseText(text)), text) << entry.path();
  }
  EXPECT_GE(seen, 9u);
}

TEST(ConfigTest, RejectsUnknownNames) {
  EXPECT_FAIRCLIP_ERROR(ParseText("[bogus]\nx = 1\n"), ErrorCode::kConfigError);
  EXPECT_FAIRCLIP_ERROR(ParseText("[train]\nepoch = 3\n"), ErrorCode::kConfigError);
  EXPECT_FAIRCLIP_ERROR(ParseText("[clip]\nstrategy = gentle\n"), ErrorCode::kConfigError);
  EXPECT_FAIRCLIP_ERROR(ParseText("[train]\noptimizer = rmsprop\n"), ErrorCode::kConfigError);
  EXPECT_FAIRCLIP_ERROR(ParseText("[data]\nsource = sql\n"), ErrorCode::kConfigError);
  EXPECT_FAIRCLIP_ERROR(ParseText("[analysis]\nreduction = median\n"), ErrorCode::kConfigError);
}

TEST(ConfigTest, RejectsBadValues) {
  EXPECT_FAIRCLIP_ERROR(ParseText("[train]\nepochs = three\n"), ErrorCode::kConfigError);
  EXPECT_FAIRCLIP_ERROR(ParseText("[train]\nsampling_rate = 1.5\n"), ErrorCode::kConfigError);
  EXPECT_FAIRCLIP_ERROR(ParseText("[clip]\ninitial_bound = 0\n"), ErrorCode::kConfigError);
  EXPECT_FAIRCLIP_ERROR(ParseText("[train]\nexpected_batch_average = maybe\n"), ErrorCode::kConfigError);
  EXPECT_FAIRCLIP_ERROR(ParseText("[privacy]\norders = 2,x\n"), ErrorCode::kConfigError);
  EXPECT_FAIRCLIP_ERROR(ParseText("[model]\nhidden = 8,-1\n"), ErrorCode::kConfigError);
  EXPECT_FAIRCLIP_ERROR(load_config("/nonexistent/config.ini"), ErrorCode::kConfigError);
}

}  // namespace
}  // namespace fairclip
