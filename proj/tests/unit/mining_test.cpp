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

#include "cdml/mining.hpp"
#include "oracles.hpp"

namespace
{

using cdml::kInfinity;
using cdml::PositivePool;

PositivePool pool_of(const std::vector<double> & d)
{
  PositivePool p;
  for (std::size_t i = 0; i < d.size(); ++i) {
    p.candidates.push_back({100 + i, d[i]});
  }
  return p;
}

std::vector<double> random_distances(std::mt19937_64 & rng)
{
  const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 9)(rng);
  // Coarse values make repeated minima and maxima common.
  const int levels = std::uniform_int_distribution<int>(1, 6)(rng);
  std::uniform_int_distribution<int> level(0, levels - 1);
  std::uniform_real_distribution<double> fine(0.0, 2.0);
  const bool coarse = std::bernoulli_distribution(0.5)(rng);
  std::vector<double> d(n);
  for (auto & v : d) {
    v = coarse ? 0.25 * level(rng) : fine(rng);
  }
  return d;
}

TEST(ModerationRatio, HandValues)
{
  EXPECT_DOUBLE_EQ(cdml::moderation_ratio(2, 1, 3), 1.0);
  EXPECT_EQ(cdml::moderation_ratio(1, 1, 3), 0.0);
  EXPECT_EQ(cdml::moderation_ratio(3, 1, 3), kInfinity);
  EXPECT_EQ(cdml::moderation_ratio(2, 2, 2), 0.0);
}

TEST(ModerationRatio, PreconditionViolations)
{
  EXPECT_THROW(cdml::moderation_ratio(0.5, 1, 3), cdml::PreconditionError);
  EXPECT_THROW(cdml::moderation_ratio(4, 1, 3), cdml::PreconditionError);
}

TEST(ModeratePositive, BandPicksMiddleCandidate)
{
  const auto s = cdml::moderate_positive_select(pool_of({1, 2, 3}), 0.5, 2.0);
  EXPECT_EQ(s.position, 1u);
  EXPECT_FALSE(s.fallback);
  EXPECT_DOUBLE_EQ(s.ratio, 1.0);
}

TEST(ModeratePositive, SingleCandidateIsReturned)
{
  cdml::MiningConfig cfg;
  EXPECT_EQ(cdml::moderate_positive_select(pool_of({0.7}), cfg).position, 0u);
  cfg.adaptive = false;
  cfg.alpha = 0.5;
  cfg.beta = 1.0;
  const auto s = cdml::moderate_positive_select(pool_of({0.7}), cfg);
  EXPECT_EQ(s.position, 0u);
  EXPECT_TRUE(s.fallback);
}

TEST(ModeratePositive, EmptyPoolAndBadBoundsRaise)
{
  EXPECT_THROW(cdml::moderate_positive_select(pool_of({}), cdml::MiningConfig{}), cdml::PreconditionError);
  EXPECT_THROW(cdml::moderate_positive_select(pool_of({1, 2}), 2.0, 1.0), cdml::PreconditionError);
  EXPECT_THROW(cdml::moderate_positive_select(pool_of({1, 2}), -1.0, 1.0), cdml::PreconditionError);
}

TEST(ModeratePositive, FallbackIsLowerMedianByDistance)
{
  // Ratios 0, 1/3, 1, 3, inf; band [5, 6] admits nothing.
  const auto s = cdml::moderate_positive_select(pool_of({5, 1, 3, 2, 4}), 5.0, 6.0);
  EXPECT_TRUE(s.fallback);
  EXPECT_EQ(s.position, 2u);
  const auto e = cdml::moderate_positive_select(pool_of({4, 1, 3, 2}), 50.0, 60.0);
  EXPECT_EQ(e.position, 3u);  // sorted 1,2,3,4 -> lower median 2 at position 3
}

TEST(ModeratePositive, HardestPositiveNeverChosenWithFiniteBeta)
{
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 4.0);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto d = random_distances(rng);
    const double a = u(rng);
    const double b = a + u(rng);
    const auto s = cdml::moderate_positive_select(pool_of(d), a, b);
    if (!s.fallback) {
      EXPECT_TRUE(std::isfinite(s.ratio));
      EXPECT_LE(a, s.ratio);
      EXPECT_LE(s.ratio, b);
    }
  }
}

TEST(ModeratePositive, RaisingAlphaNeverSelectsACloserCandidate)
{
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto d = random_distances(rng);
    const double a1 = u(rng);
    const double a2 = a1 + u(rng);
    const auto p = pool_of(d);
    const auto s1 = cdml::moderate_positive_select(p, a1, kInfinity);
    const auto s2 = cdml::moderate_positive_select(p, a2, kInfinity);
    if (!s1.fallback && !s2.fallback) {
      EXPECT_GE(d[s2.position], d[s1.position]);
    }
  }
}

TEST(ModeratePositive, DeterministicForIdenticalInput)
{
  const auto p = pool_of({0.3, 0.9, 0.5, 0.5, 1.4});
  const auto a = cdml::moderate_positive_select(p, cdml::MiningConfig{});
  const auto b = cdml::moderate_positive_select(p, cdml::MiningConfig{});
  EXPECT_EQ(a.position, b.position);
}

TEST(ModeratePositive, MatchesBruteForceOracle)
{
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 4.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto d = random_distances(rng);
    double alpha = u(rng);
    double beta = alpha + u(rng);
    switch (trial % 4) {
      case 0: beta = kInfinity; break;
      case 1: alpha = 0.0; break;
      default: break;
    }
    const auto s = cdml::moderate_positive_select(pool_of(d), alpha, beta);
    EXPECT_EQ(s.position, oracle::moderate_select(d, alpha, beta))
      << "trial " << trial << " alpha " << alpha << " beta " << beta;
  }
}

TEST(AdaptiveBounds, PercentileBand)
{
  // p25 = 1.5 -> 1/3; p75 = 2.5 -> 3
  const auto [a, b] = cdml::adaptive_bounds(pool_of({1, 2, 3}));
  EXPECT_NEAR(a, 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(b, 3.0, 1e-15);
  cdml::MiningConfig cfg;
  EXPECT_EQ(cdml::moderate_positive_select(pool_of({1, 2, 3}), cfg).position, 1u);
}

TEST(AdaptiveBounds, DegeneratePools)
{
  EXPECT_EQ(cdml::adaptive_bounds(pool_of({0.4})), (std::pair<double, double>{0.0, 0.0}));
  EXPECT_EQ(cdml::adaptive_bounds(pool_of({0.4, 0.4, 0.4})), (std::pair<double, double>{0.0, 0.0}));
  const auto s = cdml::moderate_positive_select(pool_of({0.4, 0.4, 0.4}), cdml::MiningConfig{});
  EXPECT_FALSE(s.fallback);
  EXPECT_EQ(s.position, 0u);
}

TEST(AdaptiveBounds, SymmetricPoolExcludesExtremes)
{
  const std::vector<double> d{1, 2, 3, 4, 5};
  const auto [a, b] = cdml::adaptive_bounds(pool_of(d));
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double r = oracle::literal_ratio(d, i);
    const bool admitted = a <= r && r <= b;
    EXPECT_EQ(admitted, i != 0 && i != 4) << "distance " << d[i];
  }
}

TEST(HardNegative, HandValues)
{
  const std::vector<cdml::NegativeCandidate> pool{{10, 1, 5.0}, {11, 2, 1.0}, {12, 3, 3.0}};
  EXPECT_EQ(cdml::hard_negative_select(0, pool, 1), (std::vector<std::size_t>{1}));
  EXPECT_EQ(cdml::hard_negative_select(0, pool, 3), (std::vector<std::size_t>{1, 2, 0}));
}

TEST(HardNegative, Errors)
{
  const std::vector<cdml::NegativeCandidate> pool{{10, 1, 5.0}, {11, 7, 1.0}};
  EXPECT_THROW(cdml::hard_negative_select(7, pool, 1), cdml::PreconditionError);
  EXPECT_THROW(cdml::hard_negative_select(0, pool, 3), cdml::PreconditionError);
  EXPECT_THROW(cdml::hard_negative_select(0, {}, 1), cdml::PreconditionError);
}

TEST(HardNegative, MatchesFullSortOracle)
{
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 500; ++trial) {
    const auto d = random_distances(rng);
    std::vector<cdml::NegativeCandidate> pool;
    for (std::size_t i = 0; i < d.size(); ++i) {
      pool.push_back({i, static_cast<int>(i) + 1, d[i]});
    }
    const std::size_t k = std::uniform_int_distribution<std::size_t>(1, d.size())(rng);
    EXPECT_EQ(cdml::hard_negative_select(0, pool, k), oracle::k_smallest(d, k));
  }
}

TEST(MiningConfig, Validation)
{
  cdml::MiningConfig c;
  EXPECT_NO_THROW(c.validate());
  c.alpha = 2.0;
  c.beta = 1.0;
  EXPECT_THROW(c.validate(), cdml::PreconditionError);
  c = {};
  c.negative_pool_size = 0;
  EXPECT_THROW(c.validate(), cdml::PreconditionError);
}

}  // namespace
