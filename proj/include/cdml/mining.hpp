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

#ifndef CDML_MINING_HPP_
#define CDML_MINING_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cdml
{

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

class PreconditionError : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

struct MiningConfig
{
  double alpha = 0.0;
  double beta = kInfinity;
  bool adaptive = true;           // derive alpha/beta from each pool
  bool positive_mining = true;    // false: uniform random positive
  bool negative_mining = true;    // false: uniform random negatives
  std::size_t negative_pool_size = 64;
  std::size_t hard_negative_count = 1;

  void validate() const
  {
    if (!(alpha >= 0.0) || !(beta >= alpha)) {
      throw PreconditionError("mining bounds must satisfy 0 <= alpha <= beta");
    }
    if (negative_pool_size == 0 || hard_negative_count == 0) {
      throw PreconditionError("negative pool size and hard negative count must be positive");
    }
  }
};

struct Candidate
{
  std::size_t sample;
  double distance;
};

/// Same-identity, other-camera candidates for one anchor, with distances
/// under the current model.
struct PositivePool
{
  std::size_t anchor = 0;
  std::vector<Candidate> candidates;
};

/// (d - d_min) / (d_max - d): 0 for an all-equal pool, +inf at the unique
/// maximum.
inline double moderation_ratio(double d, double d_min, double d_max)
{
  if (!(d_min <= d && d <= d_max)) {
    throw PreconditionError(
            "moderation ratio needs d_min <= d <= d_max, got " + std::to_string(d_min) + ", " +
            std::to_string(d) + ", " + std::to_string(d_max));
  }
  if (d_max == d_min) {
    return 0.0;
  }
  if (d == d_max) {
    return kInfinity;
  }
  return (d - d_min) / (d_max - d);
}

namespace detail
{
inline std::pair<double, double> pool_range(const PositivePool & pool)
{
  if (pool.candidates.empty()) {
    throw PreconditionError("positive pool is empty");
  }
  double lo = pool.candidates.front().distance;
  double hi = lo;
  for (const auto & c : pool.candidates) {
    if (!(c.distance >= 0.0)) {
      throw PreconditionError("positive pool holds a negative or NaN distance");
    }
    lo = std::min(lo, c.distance);
    hi = std::max(hi, c.distance);
  }
  return {lo, hi};
}

// Linear interpolation between order statistics.
inline double percentile(std::vector<double> values, double p)
{
  std::sort(values.begin(), values.end());
  const double pos = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

// Lower median by distance, ties to the lowest position.
inline std::size_t median_position(const PositivePool & pool)
{
  std::vector<std::size_t> order(pool.candidates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(
    order.begin(), order.end(), [&pool](std::size_t a, std::size_t b) {
      return pool.candidates[a].distance < pool.candidates[b].distance;
    });
  return order[(order.size() - 1) / 2];
}
}  // namespace detail

/// Admissible band covering the 25th..75th percentile of pool distances.
inline std::pair<double, double> adaptive_bounds(const PositivePool & pool)
{
  const auto [lo, hi] = detail::pool_range(pool);
  if (pool.candidates.size() < 2 || lo == hi) {
    return {0.0, 0.0};
  }
  std::vector<double> d;
  d.reserve(pool.candidates.size());
  for (const auto & c : pool.candidates) {
    d.push_back(c.distance);
  }
  const double alpha = moderation_ratio(detail::percentile(d, 0.25), lo, hi);
  const double beta = moderation_ratio(detail::percentile(d, 0.75), lo, hi);
  return {std::max(alpha, 0.0), std::max(beta, alpha)};
}

struct PositiveSelection
{
  std::size_t position = 0;  // index into pool.candidates
  double ratio = 0.0;
  bool fallback = false;     // no candidate satisfied the band
};

/// Moderate positive mining with explicit bounds.
///
/// Among candidates with alpha <= ratio <= beta, picks the ratio closest to
/// the band midpoint; with beta = +inf the smallest admissible ratio wins.
/// Ties go to the lowest position. When nothing is admissible the candidate
/// with the median distance is returned and `fallback` is set.
inline PositiveSelection moderate_positive_select(
  const PositivePool & pool, double alpha, double beta)
{
  if (!(alpha >= 0.0) || !(beta >= alpha)) {
    throw PreconditionError("mining bounds must satisfy 0 <= alpha <= beta");
  }
  const auto [lo, hi] = detail::pool_range(pool);
  const bool open_band = std::isinf(beta);
  const double mid = open_band ? 0.0 : 0.5 * (alpha + beta);

  bool found = false;
  PositiveSelection best;
  double best_key = kInfinity;
  for (std::size_t i = 0; i < pool.candidates.size(); ++i) {
    const double r = moderation_ratio(pool.candidates[i].distance, lo, hi);
    if (!(alpha <= r && r <= beta)) {
      continue;
    }
    const double key = open_band ? r : std::abs(r - mid);
    if (!found || key < best_key) {
      found = true;
      best_key = key;
      best = {i, r, false};
    }
  }
  if (found) {
    return best;
  }
  const std::size_t m = detail::median_position(pool);
  return {m, moderation_ratio(pool.candidates[m].distance, lo, hi), true};
}

inline PositiveSelection moderate_positive_select(
  const PositivePool & pool, const MiningConfig & config)
{
  if (pool.candidates.empty()) {
    throw PreconditionError("positive pool is empty");
  }
  if (config.adaptive) {
    const auto [alpha, beta] = adaptive_bounds(pool);
    return moderate_positive_select(pool, alpha, beta);
  }
  return moderate_positive_select(pool, config.alpha, config.beta);
}

struct NegativeCandidate
{
  std::size_t sample;
  int identity;
  double distance;
};

/// Positions of the k candidates closest to the anchor, ascending by
/// distance with ties to the lowest position.
inline std::vector<std::size_t> hard_negative_select(
  int anchor_identity, const std::vector<NegativeCandidate> & negatives, std::size_t k)
{
  if (negatives.empty()) {
    throw PreconditionError("negative pool is empty");
  }
  if (k == 0 || k > negatives.size()) {
    throw PreconditionError(
            "cannot select " + std::to_string(k) + " negatives from a pool of " +
            std::to_string(negatives.size()));
  }
  for (const auto & n : negatives) {
    if (n.identity == anchor_identity) {
      throw PreconditionError(
              "negative pool contains sample " + std::to_string(n.sample) +
              " with the anchor's identity " + std::to_string(anchor_identity));
    }
  }
  std::vector<std::size_t> order(negatives.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(
    order.begin(), order.end(), [&negatives](std::size_t a, std::size_t b) {
      return negatives[a].distance < negatives[b].distance;
    });
  order.resize(k);
  return order;
}

}  // namespace cdml

#endif  // CDML_MINING_HPP_
