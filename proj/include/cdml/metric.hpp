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

#ifndef CDML_METRIC_HPP_
#define CDML_METRIC_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdml/tensor.hpp"

namespace cdml
{

/// Mahalanobis metric head. The distance is |W^T (x1 - x2) + b|_2 with the
/// bias pinned at zero, so M = W W^T is positive semi-definite by
/// construction.
struct MetricLayer
{
  Tensor weights;  // W, n x n
  Tensor bias;     // b, n; never updated
  double lambda = 1e-2;

  std::size_t dim() const {return weights.extent(0);}

  static MetricLayer identity(std::size_t n, double lambda = 1e-2)
  {
    MetricLayer layer;
    layer.weights = Tensor({n, n});
    for (std::size_t i = 0; i < n; ++i) {
      layer.weights.at(i, i) = 1.0;
    }
    layer.bias = Tensor({n});
    layer.lambda = lambda;
    return layer;
  }

  static MetricLayer from_weights(Tensor w, double lambda = 1e-2)
  {
    if (w.rank() != 2 || w.extent(0) != w.extent(1)) {
      throw DimensionError("metric weights must be square, got " + shape_string(w.shape()));
    }
    MetricLayer layer;
    layer.bias = Tensor({w.extent(0)});
    layer.weights = std::move(w);
    layer.lambda = lambda;
    return layer;
  }

  bool bias_is_zero() const
  {
    return std::all_of(bias.data().begin(), bias.data().end(), [](double v) {return v == 0.0;});
  }
};

/// Forward values kept for distance_backward.
struct DistanceTrace
{
  std::vector<double> diff;       // x1 - x2
  std::vector<double> projected;  // W^T diff + b
  double value = 0.0;
};

/// Distances below this are treated as zero for differentiation.
inline constexpr double kDistanceFloor = 1e-12;

inline double distance(
  std::span<const double> x1, std::span<const double> x2, const MetricLayer & layer,
  DistanceTrace * trace = nullptr)
{
  const std::size_t n = layer.dim();
  if (x1.size() != n || x2.size() != n) {
    throw DimensionError(
            "distance expects vectors of length " + std::to_string(n) + ", got " +
            std::to_string(x1.size()) + " and " + std::to_string(x2.size()));
  }
  DistanceTrace local;
  DistanceTrace & t = trace ? *trace : local;
  t.diff.resize(n);
  t.projected.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    t.diff[i] = x1[i] - x2[i];
  }
  const auto w = layer.weights.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double d = t.diff[i];
    const double * row = w.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      t.projected[j] += row[j] * d;
    }
  }
  double sq = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    t.projected[j] += layer.bias[j];
    sq += t.projected[j] * t.projected[j];
  }
  t.value = std::sqrt(sq);
  return t.value;
}

inline double distance(const Tensor & x1, const Tensor & x2, const MetricLayer & layer)
{
  return distance(x1.data(), x2.data(), layer);
}

/// Accumulates dL/dW and dL/dx1, dL/dx2 given g = dL/dd. The gradient is
/// zero at d < kDistanceFloor (subgradient choice at the kink).
inline void distance_backward(
  const DistanceTrace & t, double grad_d, MetricLayer & layer,
  std::span<double> grad_x1, std::span<double> grad_x2)
{
  if (t.value < kDistanceFloor || grad_d == 0.0) {
    return;
  }
  const std::size_t n = layer.dim();
  std::vector<double> dy(n);
  for (std::size_t j = 0; j < n; ++j) {
    dy[j] = grad_d * t.projected[j] / t.value;
  }
  auto gw = layer.weights.grad();
  const auto w = layer.weights.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double d = t.diff[i];
    double dx = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      gw[i * n + j] += d * dy[j];
      dx += w[i * n + j] * dy[j];
    }
    if (!grad_x1.empty()) {
      grad_x1[i] += dx;
    }
    if (!grad_x2.empty()) {
      grad_x2[i] -= dx;
    }
  }
}

// ---------------------------------------------------------------------------
// pair loss

struct PairLossValue
{
  double value = 0.0;
  double grad_pos = 0.0;  // dL/d(d_pos)
  double grad_neg = 0.0;  // dL/d(d_neg)
};

/// L = d_pos - d_neg, or max(0, margin + d_pos - d_neg) when a margin is set.
inline PairLossValue evaluate_pair_loss(
  double d_pos, double d_neg, std::optional<double> margin = std::nullopt)
{
  if (!margin) {
    return {d_pos - d_neg, 1.0, -1.0};
  }
  const double v = *margin + d_pos - d_neg;
  if (v <= 0.0) {
    return {0.0, 0.0, 0.0};
  }
  return {v, 1.0, -1.0};
}

inline double pair_loss(double d_pos, double d_neg, std::optional<double> margin = std::nullopt)
{
  return evaluate_pair_loss(d_pos, d_neg, margin).value;
}

// ---------------------------------------------------------------------------
// weight constraint

namespace detail
{
inline void require_square(const Tensor & w)
{
  if (w.rank() != 2 || w.extent(0) != w.extent(1)) {
    throw DimensionError("expected a square matrix, got " + shape_string(w.shape()));
  }
}

// W W^T - I, computed so that entry (i, j) and (j, i) use identical
// floating-point operations.
inline Tensor gram_minus_identity(const Tensor & w)
{
  const std::size_t n = w.extent(0);
  Tensor out({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        s += w.at(i, k) * w.at(j, k);
      }
      if (i == j) {
        s -= 1.0;
      }
      out.at(i, j) = s;
      out.at(j, i) = s;
    }
  }
  return out;
}
}  // namespace detail

/// (lambda / 2) * |W W^T - I|_F^2
inline double constraint_penalty(const Tensor & w, double lambda)
{
  detail::require_square(w);
  if (lambda < 0.0) {
    throw std::invalid_argument("lambda must be non-negative");
  }
  const Tensor d = detail::gram_minus_identity(w);
  double sq = 0.0;
  for (double v : d.data()) {
    sq += v * v;
  }
  return 0.5 * lambda * sq;
}

/// 2 * lambda * (W W^T - I) W, the exact derivative of constraint_penalty.
inline Tensor constraint_gradient(const Tensor & w, double lambda)
{
  detail::require_square(w);
  if (lambda < 0.0) {
    throw std::invalid_argument("lambda must be non-negative");
  }
  const std::size_t n = w.extent(0);
  const Tensor d = detail::gram_minus_identity(w);
  Tensor out({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      const double dik = d.at(i, k);
      for (std::size_t j = 0; j < n; ++j) {
        out.at(i, j) += dik * w.at(k, j);
      }
    }
  }
  for (auto & v : out.data()) {
    v *= 2.0 * lambda;
  }
  return out;
}

inline double constraint_penalty(const MetricLayer & layer)
{
  return constraint_penalty(layer.weights, layer.lambda);
}

// ---------------------------------------------------------------------------
// M and its spectrum

/// M = W W^T, exactly symmetric.
inline Tensor metric_matrix(const MetricLayer & layer)
{
  detail::require_square(layer.weights);
  Tensor m = detail::gram_minus_identity(layer.weights);
  for (std::size_t i = 0; i < m.extent(0); ++i) {
    m.at(i, i) += 1.0;
  }
  return m;
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
/// Sweeps stop once the off-diagonal Frobenius norm falls below
/// tolerance * |A|_F.
inline std::vector<double> symmetric_eigenvalues(const Tensor & a, double tolerance = 1e-10)
{
  detail::require_square(a);
  const std::size_t n = a.extent(0);
  std::vector<double> m(a.data().begin(), a.data().end());
  auto at = [&m, n](std::size_t i, std::size_t j) -> double & {return m[i * n + j];};

  double total = 0.0;
  for (double v : m) {
    total += v * v;
  }
  const double threshold = tolerance * std::sqrt(total);

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        off += 2.0 * at(i, j) * at(i, j);
      }
    }
    if (std::sqrt(off) <= threshold) {
      break;
    }
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = at(p, q);
        if (apq == 0.0) {
          continue;
        }
        const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
          (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = at(k, p);
          const double akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = at(p, k);
          const double aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> eig(n);
  for (std::size_t i = 0; i < n; ++i) {
    eig[i] = at(i, i);
  }
  std::sort(eig.begin(), eig.end());
  return eig;
}

/// Singular values of M = W W^T in non-increasing order.
inline std::vector<double> spectrum(const MetricLayer & layer)
{
  auto eig = symmetric_eigenvalues(metric_matrix(layer));
  for (auto & v : eig) {
    v = std::abs(v);
  }
  std::sort(eig.begin(), eig.end(), std::greater<>{});
  return eig;
}

/// CSV with header `index,singular_value`, indices starting at 1.
inline void write_spectrum_csv(const std::filesystem::path & path, std::span<const double> values)
{
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out.precision(17);
  out << "index,singular_value\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    out << (i + 1) << ',' << values[i] << '\n';
  }
}

}  // namespace cdml

#endif  // CDML_METRIC_HPP_
