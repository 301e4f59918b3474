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

#ifndef CDML_TESTS_ORACLES_HPP_
#define CDML_TESTS_ORACLES_HPP_

// Reference implementations used only by tests. They are written from the
// definitions, without calling the library code they check.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <tuple>
#include <utility>
#include <vector>

namespace oracle
{

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Central differences of f at x, one coordinate at a time.
inline std::vector<double> numeric_gradient(
  const std::function<double(const std::vector<double> &)> & f, std::vector<double> x,
  double eps, const std::vector<std::size_t> & coords = {})
{
  std::vector<std::size_t> idx = coords;
  if (idx.empty()) {
    idx.resize(x.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
  }
  std::vector<double> g(x.size(), 0.0);
  for (std::size_t i : idx) {
    const double saved = x[i];
    x[i] = saved + eps;
    const double up = f(x);
    x[i] = saved - eps;
    const double down = f(x);
    x[i] = saved;
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

/// max_i |a_i - n_i| / max(|a_i|, |n_i|, floor) over the probed coordinates.
inline double max_relative_error(
  const std::vector<double> & analytic, const std::vector<double> & numeric,
  const std::vector<std::size_t> & coords = {}, double floor = 1e-8)
{
  std::vector<std::size_t> idx = coords;
  if (idx.empty()) {
    idx.resize(analytic.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
  }
  double worst = 0.0;
  for (std::size_t i : idx) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

/// Literal moderation ratio with the pool's own min and max.
inline double literal_ratio(const std::vector<double> & pool, std::size_t i)
{
  double lo = pool[0];
  double hi = pool[0];
  for (double d : pool) {
    lo = d < lo ? d : lo;
    hi = d > hi ? d : hi;
  }
  if (hi == lo) {
    return 0.0;
  }
  if (pool[i] == hi) {
    return kInf;
  }
  return (pool[i] - lo) / (hi - pool[i]);
}

/// Enumerates every candidate, keeps those with alpha <= r <= beta and
/// orders them by (distance to band midpoint, position); an open band orders
/// by (ratio, position). Empty band: lower median of (distance, position).
inline std::size_t moderate_select(const std::vector<double> & pool, double alpha, double beta)
{
  std::vector<std::tuple<double, std::size_t>> admissible;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const double r = literal_ratio(pool, i);
    if (alpha <= r && r <= beta) {
      const double key = std::isinf(beta) ? r : std::abs(r - (alpha + beta) / 2.0);
      admissible.emplace_back(key, i);
    }
  }
  if (!admissible.empty()) {
    std::sort(admissible.begin(), admissible.end());
    return std::get<1>(admissible.front());
  }
  std::vector<std::pair<double, std::size_t>> by_distance;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    by_distance.emplace_back(pool[i], i);
  }
  std::sort(by_distance.begin(), by_distance.end());
  return by_distance[(pool.size() - 1) / 2].second;
}

/// k smallest distances via a full sort of (distance, position).
inline std::vector<std::size_t> k_smallest(const std::vector<double> & d, std::size_t k)
{
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t i = 0; i < d.size(); ++i) {
    all.emplace_back(d[i], i);
  }
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < k; ++i) {
    out.push_back(all[i].second);
  }
  return out;
}

/// Sorts each row with impostors ahead of the true match on ties and reads
/// off the 1-based position of the true match.
inline std::vector<double> cmc(
  const std::vector<std::vector<double>> & dist, const std::vector<int> & probe_ids,
  const std::vector<int> & gallery_ids)
{
  const std::size_t n = gallery_ids.size();
  std::vector<double> counts(n, 0.0);
  for (std::size_t r = 0; r < dist.size(); ++r) {
    std::vector<std::tuple<double, int, std::size_t>> row;
    for (std::size_t c = 0; c < n; ++c) {
      row.emplace_back(dist[r][c], gallery_ids[c] == probe_ids[r] ? 1 : 0, c);
    }
    std::sort(row.begin(), row.end());
    for (std::size_t pos = 0; pos < n; ++pos) {
      if (std::get<1>(row[pos]) == 1) {
        for (std::size_t k = pos; k < n; ++k) {
          counts[k] += 1.0;
        }
        break;
      }
    }
  }
  for (auto & c : counts) {
    c /= static_cast<double>(dist.size());
  }
  return counts;
}

/// Ascending eigenvalues of a symmetric row-major n x n matrix.
inline std::vector<double> symmetric_eigenvalues(const std::vector<double> & a, std::size_t n)
{
  Eigen::MatrixXd m(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = a[i * n + j];
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m, Eigen::EigenvaluesOnly);
  const auto & v = solver.eigenvalues();
  return {v.data(), v.data() + v.size()};
}

/// d = sqrt((x1-x2)^T M (x1-x2)) with M = W W^T formed explicitly.
inline double mahalanobis(
  const std::vector<double> & w, std::size_t n, const std::vector<double> & x1,
  const std::vector<double> & x2)
{
  std::vector<double> m(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t k = 0; k < n; ++k) {
        m[i * n + j] += w[i * n + k] * w[j * n + k];
      }
    }
  }
  double q = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      q += (x1[i] - x2[i]) * m[i * n + j] * (x1[j] - x2[j]);
    }
  }
  return std::sqrt(std::max(q, 0.0));
}

inline std::vector<double> gaussian_vector(std::size_t n, std::mt19937_64 & rng, double sigma = 1.0)
{
  std::normal_distribution<double> g(0.0, sigma);
  std::vector<double> v(n);
  for (auto & x : v) {
    x = g(rng);
  }
  return v;
}

}  // namespace oracle

#endif  // CDML_TESTS_ORACLES_HPP_
