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

#include <cmath>
#include <random>
#include <vector>

#include "cdml/dataset.hpp"
#include "cdml/extractor.hpp"
#include "layer_checks.hpp"
#include "oracles.hpp"

namespace
{

using cdml::ExtractorConfig;
using cdml::Tensor;

std::vector<double> vals(const Tensor & t) {return {t.data().begin(), t.data().end()};}

cdml::ImageSample random_image(std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  cdml::ImageSample s;
  s.pixels = Tensor({3, 128, 64});
  for (auto & v : s.pixels.data()) {
    v = u(rng);
  }
  return s;
}

TEST(ExtractorConfig, DefaultExtentsMatchShapeArithmetic)
{
  const ExtractorConfig c;
  // 64 -5-> 60 -pool-> 30 -5-> 26 -pool-> 13 -3-> 11
  EXPECT_EQ(c.conv_extents(), (std::array<std::size_t, 3>{60, 26, 11}));
  EXPECT_EQ(c.branch_output_size(), 32u * 11u * 11u);
  EXPECT_EQ(c.concat_size(), 3u * 32u * 11u * 11u);
  EXPECT_EQ(ExtractorConfig::compact().conv_extents(), (std::array<std::size_t, 3>{30, 12, 4}));
}

TEST(ExtractorConfig, RejectsUnpoolableAndBadWindows)
{
  ExtractorConfig odd;
  odd.convs[0].kernel = 4;  // 61 rows before the first pool
  EXPECT_THROW(odd.validate(), cdml::DimensionError);

  ExtractorConfig gap;
  gap.patch_rows = {0, 32, 40};  // rows 104..127 uncovered
  EXPECT_THROW(gap.validate(), cdml::DimensionError);

  ExtractorConfig dim;
  dim.output_dim = 32;
  EXPECT_THROW(dim.validate(), cdml::DimensionError);
}

TEST(SplitPatches, RowWindowsTraceBackToImageRows)
{
  Tensor img({3, 128, 64});
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < 128; ++y) {
      for (std::size_t x = 0; x < 64; ++x) {
        img.at(c, y, x) = static_cast<double>(y);
      }
    }
  }
  const auto p = cdml::split_patches(img);
  const std::size_t starts[3] = {0, 32, 64};
  for (std::size_t b = 0; b < 3; ++b) {
    EXPECT_EQ(p[b].shape(), (cdml::Shape{3, 64, 64}));
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t y = 0; y < 64; ++y) {
        EXPECT_EQ(p[b].at(c, y, 17), static_cast<double>(starts[b] + y));
      }
    }
  }
  for (std::size_t y = 32; y < 64; ++y) {
    EXPECT_EQ(p[0].at(1, y, 5), p[1].at(1, y - 32, 5));
  }
}

TEST(SplitPatches, WrongShapeIsRejected)
{
  EXPECT_THROW(cdml::split_patches(Tensor({3, 64, 64})), cdml::DimensionError);
}

TEST(BranchForward, ZeroPatchZeroBiasGivesZero)
{
  const auto cfg = ExtractorConfig::compact();
  const auto params = cdml::init_params(cfg, 1);
  const Tensor out = cdml::branch_forward(Tensor({3, 64, 64}), params.branches[0], cfg);
  EXPECT_EQ(out.size(), cfg.branch_output_size());
  for (double v : out.data()) {
    EXPECT_EQ(v, 0.0);
  }
}

TEST(BranchForward, GradientMatchesFiniteDifferences)
{
  const auto cfg = ExtractorConfig::tiny();
  auto params = cdml::init_params(cfg, 9);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor patch({3, 64, 64});
  for (auto & v : patch.data()) {
    v = u(rng);
  }
  cdml::BranchTrace trace;
  const Tensor out = cdml::branch_forward(patch, params.branches[0], cfg, &trace);
  const auto r = oracle::gaussian_vector(out.size(), rng);
  cdml::branch_backward(trace, params.branches[0], cfg, r, cdml::ConvGrad::all);

  for (std::size_t l = 0; l < 3; ++l) {
    Tensor & filt = params.branches[0].filters[l];
    const auto analytic = layer_checks::grads(filt);
    const auto f = [&](const std::vector<double> & v) {
        cdml::BranchParams p = params.branches[0];
        p.filters[l] = Tensor(filt.shape(), v);
        return layer_checks::dot(cdml::branch_forward(patch, p, cfg), r);
      };
    std::vector<std::size_t> coords;
    for (std::size_t i = 0; i < filt.size(); i += 7) {
      coords.push_back(i);
    }
    EXPECT_LE(
      oracle::max_relative_error(analytic, oracle::numeric_gradient(f, vals(filt), 1e-6, coords), coords),
      1e-4) << "conv layer " << l + 1;
  }
}

TEST(Extract, FeaturesHaveUnitNorm)
{
  for (const auto & cfg : {ExtractorConfig::tiny(), ExtractorConfig::compact()}) {
    const auto params = cdml::init_params(cfg, 2);
    for (std::uint64_t s = 0; s < 5; ++s) {
      const Tensor f = cdml::extract(random_image(s), params, cfg);
      ASSERT_EQ(f.size(), 64u);
      double sq = 0.0;
      for (double v : f.data()) {
        sq += v * v;
      }
      EXPECT_NEAR(std::sqrt(sq), 1.0, 1e-9);
    }
  }
}

TEST(Extract, IdenticalImagesGiveIdenticalFeatures)
{
  const auto cfg = ExtractorConfig::tiny();
  const auto params = cdml::init_params(cfg, 3);
  const auto img = random_image(4);
  const auto [a, b] = cdml::extract_pair(img, img, params, cfg);
  EXPECT_EQ(vals(a), vals(b));
  EXPECT_EQ(vals(a), vals(cdml::extract(img, params, cfg)));
}

TEST(Extract, PairEqualsIndependentCallsInEitherOrder)
{
  const auto cfg = ExtractorConfig::tiny();
  const auto params = cdml::init_params(cfg, 3);
  const auto a = random_image(5);
  const auto b = random_image(6);
  const auto [fa, fb] = cdml::extract_pair(a, b, params, cfg);
  const auto [gb, ga] = cdml::extract_pair(b, a, params, cfg);
  EXPECT_EQ(vals(fa), vals(ga));
  EXPECT_EQ(vals(fb), vals(gb));
  EXPECT_EQ(vals(fa), vals(cdml::extract(a, params, cfg)));
}

TEST(Extract, DegenerateFeatureRaises)
{
  const auto cfg = ExtractorConfig::tiny();
  auto params = cdml::init_params(cfg, 3);
  std::fill(params.output_weights.data().begin(), params.output_weights.data().end(), 0.0);
  EXPECT_THROW(cdml::extract(random_image(1), params, cfg), cdml::DegenerateFeatureError);
}

TEST(UntiedBranches, StorageIsDisjointAndPerturbationStaysLocal)
{
  const auto cfg = ExtractorConfig::tiny();
  auto params = cdml::init_params(cfg, 4);
  ASSERT_EQ(params.branches.size(), 3u);
  EXPECT_NE(params.branches[0].filters[0].data().data(), params.branches[2].filters[0].data().data());
  EXPECT_NE(vals(params.branches[0].filters[0]), vals(params.branches[2].filters[0]));

  const auto img = random_image(7);
  cdml::ExtractorTrace before;
  const Tensor f0 = cdml::extract(img, params, cfg, &before);
  for (auto & v : params.branches[2].filters[1].data()) {
    v *= 1.5;
  }
  cdml::ExtractorTrace after;
  const Tensor f1 = cdml::extract(img, params, cfg, &after);
  EXPECT_NE(vals(f0), vals(f1));
  const std::size_t n = cfg.branch_output_size();
  const auto c0 = vals(before.concat);
  const auto c1 = vals(after.concat);
  EXPECT_TRUE(std::equal(c0.begin(), c0.begin() + 2 * n, c1.begin()));
  EXPECT_FALSE(std::equal(c0.begin() + 2 * n, c0.end(), c1.begin() + 2 * n));
}

TEST(UntiedBranches, ZeroingOneBranchLeavesOthersUntouched)
{
  const auto cfg = ExtractorConfig::tiny();
  auto params = cdml::init_params(cfg, 5);
  const auto img = random_image(8);
  cdml::ExtractorTrace before;
  cdml::extract(img, params, cfg, &before);
  for (auto & t : params.branches[0].filters) {
    std::fill(t.data().begin(), t.data().end(), 0.0);
  }
  cdml::ExtractorTrace after;
  cdml::extract(img, params, cfg, &after);
  for (std::size_t b = 1; b < 3; ++b) {
    EXPECT_EQ(vals(before.branches[b].act[2]), vals(after.branches[b].act[2]));
  }
}

TEST(TiedBranches, SingleParameterSetEqualsUntiedCopies)
{
  auto tied_cfg = ExtractorConfig::tiny();
  tied_cfg.tied_branches = true;
  const auto tied = cdml::init_params(tied_cfg, 6);
  ASSERT_EQ(tied.branches.size(), 1u);
  auto untied = tied;
  untied.branches = {tied.branches[0], tied.branches[0], tied.branches[0]};
  const auto untied_cfg = ExtractorConfig::tiny();
  const auto img = random_image(9);
  EXPECT_EQ(vals(cdml::extract(img, tied, tied_cfg)), vals(cdml::extract(img, untied, untied_cfg)));
}

TEST(InitParams, DeterministicBoundedAndZeroBias)
{
  const ExtractorConfig cfg;
  const auto a = cdml::init_params(cfg, 10);
  const auto b = cdml::init_params(cfg, 10);
  const auto c = cdml::init_params(cfg, 11);
  EXPECT_EQ(vals(a.hidden_weights), vals(b.hidden_weights));
  EXPECT_NE(vals(a.hidden_weights), vals(c.hidden_weights));

  const double conv1 = std::sqrt(6.0 / (3 * 25 + 32 * 25));
  const double hidden = std::sqrt(6.0 / static_cast<double>(cfg.concat_size() + 500));
  const double out = std::sqrt(6.0 / (500 + 64));
  auto within = [](const Tensor & t, double limit) {
      return std::all_of(t.data().begin(), t.data().end(), [limit](double v) {return std::abs(v) <= limit;});
    };
  for (const auto & br : a.branches) {
    EXPECT_TRUE(within(br.filters[0], conv1));
    EXPECT_TRUE(within(br.biases[0], 0.0));
  }
  EXPECT_TRUE(within(a.hidden_weights, hidden));
  EXPECT_TRUE(within(a.output_weights, out));
  EXPECT_TRUE(within(a.hidden_bias, 0.0));
  EXPECT_TRUE(within(a.output_bias, 0.0));
}

// Loss sum(r * feature) through the whole extractor; coordinates sampled
// from every parameter tensor.
class ExtractorGradient : public ::testing::TestWithParam<int> {};

TEST_P(ExtractorGradient, MatchesFiniteDifferences)
{
  const auto seed = static_cast<std::uint64_t>(GetParam());
  const auto cfg = ExtractorConfig::tiny();
  auto params = cdml::init_params(cfg, seed);
  const auto img = random_image(seed + 100);
  std::mt19937_64 rng(seed);
  const auto r = oracle::gaussian_vector(64, rng);

  cdml::ExtractorTrace trace;
  cdml::extract(img, params, cfg, &trace);
  cdml::extract_backward(trace, params, cfg, r);

  cdml::for_each_parameter(
    params, [&](const std::string & name, Tensor & t) {
      const auto analytic = layer_checks::grads(t);
      std::vector<std::size_t> coords;
      for (int i = 0; i < 6; ++i) {
        coords.push_back(layer_checks::pick(rng, 0, t.size() - 1));
      }
      const auto f = [&](const std::vector<double> & v) {
          cdml::ExtractorParams p = params;
          cdml::for_each_parameter(
            p, [&](const std::string & n, Tensor & u) {
              if (n == name) {
                u = Tensor(u.shape(), v);
              }
            });
          return layer_checks::dot(cdml::extract(img, p, cfg), r);
        };
      EXPECT_LE(
        oracle::max_relative_error(analytic, oracle::numeric_gradient(f, vals(t), 1e-6, coords), coords),
        1e-4) << name;
    });
}

INSTANTIATE_TEST_SUITE_P(Seeds, ExtractorGradient, ::testing::Range(0, 5));

TEST(ExtractorGradient, SiamesePairAccumulatesIntoSharedParameters)
{
  // f = r . (x_a - x_b) for two images through one parameter set
  const auto cfg = ExtractorConfig::tiny();
  auto params = cdml::init_params(cfg, 21);
  const auto a = random_image(22);
  const auto b = random_image(23);
  std::mt19937_64 rng(24);
  const auto r = oracle::gaussian_vector(64, rng);
  std::vector<double> neg_r(r);
  for (auto & v : neg_r) {
    v = -v;
  }
  cdml::ExtractorTrace ta, tb;
  cdml::extract(a, params, cfg, &ta);
  cdml::extract(b, params, cfg, &tb);
  cdml::extract_backward(ta, params, cfg, r);
  cdml::extract_backward(tb, params, cfg, neg_r);

  Tensor & w = params.hidden_weights;
  const auto analytic = layer_checks::grads(w);
  std::vector<std::size_t> coords;
  for (int i = 0; i < 20; ++i) {
    coords.push_back(layer_checks::pick(rng, 0, w.size() - 1));
  }
  const auto f = [&](const std::vector<double> & v) {
      cdml::ExtractorParams p = params;
      p.hidden_weights = Tensor(w.shape(), v);
      return layer_checks::dot(cdml::extract(a, p, cfg), r) -
             layer_checks::dot(cdml::extract(b, p, cfg), r);
    };
  EXPECT_LE(
    oracle::max_relative_error(analytic, oracle::numeric_gradient(f, vals(w), 1e-6, coords), coords),
    1e-4);
}

}  // namespace
