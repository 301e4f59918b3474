// Copyright 2026 The CDML Authors
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

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "cdml/checkpoint.hpp"
#include "cdml/dataset.hpp"
#include "cdml/evaluation.hpp"
#include "cdml/training.hpp"

namespace
{

namespace fs = std::filesystem;

void expect_same(const cdml::Model & a, const cdml::Model & b)
{
  std::vector<std::pair<std::string, std::vector<double>>> ta, tb;
  cdml::for_each_parameter(
    a, [&](const std::string & n, const cdml::Tensor & t) {
      ta.emplace_back(n, std::vector<double>(t.data().begin(), t.data().end()));
    });
  cdml::for_each_parameter(
    b, [&](const std::string & n, const cdml::Tensor & t) {
      tb.emplace_back(n, std::vector<double>(t.data().begin(), t.data().end()));
    });
  EXPECT_EQ(ta, tb);
  EXPECT_EQ(a.metric.lambda, b.metric.lambda);
  EXPECT_EQ(a.config.hidden, b.config.hidden);
  EXPECT_EQ(a.config.tied_branches, b.config.tied_branches);
  EXPECT_EQ(a.config.conv_extents(), b.config.conv_extents());
}

TEST(Checkpoint, BytesRoundTripExactly)
{
  for (bool tied : {false, true}) {
    auto cfg = cdml::ExtractorConfig::tiny();
    cfg.tied_branches = tied;
    auto model = cdml::Model::create(cfg, 3, 0.25);
    model.metric.weights[5] = 0.1 + 1e-17;  // not exactly representable in text
    const auto bytes = cdml::serialize_checkpoint(model);
    const auto back = cdml::deserialize_checkpoint(bytes);
    expect_same(model, back);
    EXPECT_EQ(cdml::serialize_checkpoint(back), bytes);
  }
}

TEST(Checkpoint, BadMagicAndVersion)
{
  auto bytes = cdml::serialize_checkpoint(cdml::Model::create(cdml::ExtractorConfig::tiny(), 1));
  auto wrong_magic = bytes;
  wrong_magic[0] = 'X';
  EXPECT_THROW(cdml::deserialize_checkpoint(wrong_magic), cdml::CheckpointFormatError);
  auto wrong_version = bytes;
  wrong_version[4] = static_cast<char>(99);
  EXPECT_THROW(cdml::deserialize_checkpoint(wrong_version), cdml::CheckpointFormatError);
}

TEST(Checkpoint, TruncationIsCorruption)
{
  const auto bytes =
    cdml::serialize_checkpoint(cdml::Model::create(cdml::ExtractorConfig::tiny(), 1));
  for (std::size_t cut : {std::size_t{9}, bytes.size() / 2, bytes.size() - 1}) {
    std::vector<char> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    EXPECT_THROW(cdml::deserialize_checkpoint(part), cdml::CheckpointCorruptError) << cut;
  }
  auto extra = bytes;
  extra.push_back('\0');
  EXPECT_THROW(cdml::deserialize_checkpoint(extra), cdml::CheckpointCorruptError);
}

TEST(Checkpoint, FileRoundTripPreservesEvaluation)
{
  cdml::SynthSpec spec;
  spec.identities = 4;
  spec.images_per_camera = 2;
  const auto samples = cdml::generate_synthetic(spec).samples;
  auto model = cdml::Model::create(cdml::ExtractorConfig::tiny(), 2);
  cdml::TrainConfig cfg;
  cfg.epochs = 1;
  cfg.steps_per_epoch = 2;
  cfg.batch_size = 4;
  cfg.learning_rate = 0.003;
  cdml::fit(samples, model, cfg);

  const auto path = fs::temp_directory_path() / "cdml_checkpoint_test.ckpt";
  cdml::save_checkpoint(model, path);
  const auto back = cdml::load_checkpoint(path);
  fs::remove(path);
  expect_same(model, back);
  EXPECT_EQ(cdml::evaluate(samples, model, 1).rates, cdml::evaluate(samples, back, 1).rates);
  EXPECT_THROW(cdml::load_checkpoint(path), cdml::CheckpointError);
}

}  // namespace
