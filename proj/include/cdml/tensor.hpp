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

#ifndef CDML_TENSOR_HPP_
#define CDML_TENSOR_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace cdml
{

/// Raised when operand extents are incompatible with an operation.
class DimensionError : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape & shape)
{
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) {
      os << 'x';
    }
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const Shape & shape)
{
  return std::accumulate(
    shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/// Dense row-major array of doubles with a same-shape gradient accumulator.
///
/// Backward functions in this header never overwrite a gradient; they add to
/// it, so a tensor consumed by several operations collects the sum of all
/// contributions. Callers zero gradients explicitly between steps.
class Tensor
{
public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
  : shape_(std::move(shape)),
    data_(shape_size(shape_), fill),
    grad_(data_.size(), 0.0)
  {
    check_extents();
  }

  Tensor(Shape shape, std::vector<double> values)
  : shape_(std::move(shape)),
    data_(std::move(values)),
    grad_(data_.size(), 0.0)
  {
    check_extents();
    if (data_.size() != shape_size(shape_)) {
      throw DimensionError(
              "tensor of shape " + shape_string(shape_) + " cannot hold " +
              std::to_string(data_.size()) + " values");
    }
  }

  const Shape & shape() const noexcept {return shape_;}
  std::size_t rank() const noexcept {return shape_.size();}
  std::size_t size() const noexcept {return data_.size();}
  std::size_t extent(std::size_t axis) const {return shape_.at(axis);}
  bool empty() const noexcept {return data_.empty();}

  std::span<double> data() noexcept {return data_;}
  std::span<const double> data() const noexcept {return data_;}
  std::span<double> grad() noexcept {return grad_;}
  std::span<const double> grad() const noexcept {return grad_;}

  double & operator[](std::size_t i) {return data_[i];}
  double operator[](std::size_t i) const {return data_[i];}

  double & at(std::size_t r, std::size_t c) {return data_[r * shape_[1] + c];}
  double at(std::size_t r, std::size_t c) const {return data_[r * shape_[1] + c];}

  double & at(std::size_t c, std::size_t h, std::size_t w)
  {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }
  double at(std::size_t c, std::size_t h, std::size_t w) const
  {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }

  void zero_grad() {std::fill(grad_.begin(), grad_.end(), 0.0);}

  /// Same values under a new shape of equal element count; gradient reset.
  Tensor reshaped(Shape shape) const
  {
    if (shape_size(shape) != data_.size()) {
      throw DimensionError(
              "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  bool all_finite() const
  {
    auto finite = [](double v) {return std::isfinite(v);};
    return std::all_of(data_.begin(), data_.end(), finite) &&
           std::all_of(grad_.begin(), grad_.end(), finite);
  }

private:
  void check_extents() const
  {
    for (auto e : shape_) {
      if (e == 0) {
        throw DimensionError("tensor extents must be positive, got " + shape_string(shape_));
      }
    }
  }

  Shape shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
};

namespace detail
{
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

inline ConstMatrixMap as_matrix(std::span<const double> s, std::size_t rows, std::size_t cols)
{
  return ConstMatrixMap(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline MatrixMap as_matrix(std::span<double> s, std::size_t rows, std::size_t cols)
{
  return MatrixMap(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

// Rank-1 right operands are treated as column vectors.
inline std::pair<std::size_t, std::size_t> matrix_dims(const Tensor & t)
{
  if (t.rank() == 1) {
    return {t.extent(0), 1};
  }
  if (t.rank() == 2) {
    return {t.extent(0), t.extent(1)};
  }
  throw DimensionError("matmul expects rank 1 or 2 operands, got " + shape_string(t.shape()));
}

inline void require_rank(const Tensor & t, std::size_t rank, const char * op)
{
  if (t.rank() != rank) {
    throw DimensionError(
            std::string(op) + " expects rank " + std::to_string(rank) + " input, got " +
            shape_string(t.shape()));
  }
}
}  // namespace detail

// ---------------------------------------------------------------------------
// matmul

inline Tensor matmul(const Tensor & a, const Tensor & b)
{
  if (a.rank() != 2) {
    throw DimensionError("matmul left operand must be a matrix, got " + shape_string(a.shape()));
  }
  const auto [m, k] = detail::matrix_dims(a);
  const auto [k2, n] = detail::matrix_dims(b);
  if (k != k2) {
    throw DimensionError(
            "matmul inner dimensions disagree: " + shape_string(a.shape()) + " * " +
            shape_string(b.shape()));
  }
  Tensor out(b.rank() == 1 ? Shape{m} : Shape{m, n});
  detail::as_matrix(out.data(), m, n).noalias() =
    detail::as_matrix(a.data(), m, k) * detail::as_matrix(b.data(), k, n);
  return out;
}

/// Accumulates dL/da = g b^T and dL/db = a^T g from out.grad().
inline void matmul_backward(Tensor & a, Tensor & b, const Tensor & out)
{
  const auto [m, k] = detail::matrix_dims(a);
  const auto [k2, n] = detail::matrix_dims(b);
  (void)k2;
  auto g = detail::as_matrix(out.grad(), m, n);
  detail::as_matrix(a.grad(), m, k).noalias() += g * detail::as_matrix(b.data(), k, n).transpose();
  detail::as_matrix(b.grad(), k, n).noalias() += detail::as_matrix(a.data(), m, k).transpose() * g;
}

// ---------------------------------------------------------------------------
// conv2d (valid cross-correlation, no padding)

struct ConvGeometry
{
  std::size_t channels, height, width;
  std::size_t filters, kernel_h, kernel_w;
  std::size_t stride;
  std::size_t out_h, out_w;

  std::size_t patch_size() const {return channels * kernel_h * kernel_w;}
  std::size_t positions() const {return out_h * out_w;}
};

inline ConvGeometry conv_geometry(const Tensor & input, const Tensor & filters, std::size_t stride)
{
  detail::require_rank(input, 3, "conv2d");
  detail::require_rank(filters, 4, "conv2d filters");
  if (stride == 0) {
    throw DimensionError("conv2d stride must be positive");
  }
  ConvGeometry g{};
  g.channels = input.extent(0);
  g.height = input.extent(1);
  g.width = input.extent(2);
  g.filters = filters.extent(0);
  g.kernel_h = filters.extent(2);
  g.kernel_w = filters.extent(3);
  g.stride = stride;
  if (filters.extent(1) != g.channels) {
    throw DimensionError(
            "conv2d filter channels " + shape_string(filters.shape()) +
            " do not match input " + shape_string(input.shape()));
  }
  if (g.kernel_h > g.height || g.kernel_w > g.width) {
    throw DimensionError(
            "conv2d kernel " + shape_string(filters.shape()) + " larger than input " +
            shape_string(input.shape()));
  }
  g.out_h = (g.height - g.kernel_h) / stride + 1;
  g.out_w = (g.width - g.kernel_w) / stride + 1;
  return g;
}

namespace detail
{
// Column matrix of shape (C*kh*kw) x (out_h*out_w).
inline std::vector<double> im2col(std::span<const double> in, const ConvGeometry & g)
{
  std::vector<double> cols(g.patch_size() * g.positions());
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx, ++row) {
        double * dst = cols.data() + row * g.positions();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const double * src = in.data() + (c * g.height + oy * g.stride + ky) * g.width + kx;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            *dst++ = src[ox * g.stride];
          }
        }
      }
    }
  }
  return cols;
}

inline void col2im_add(std::span<const double> cols, std::span<double> in, const ConvGeometry & g)
{
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx, ++row) {
        const double * src = cols.data() + row * g.positions();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          double * dst = in.data() + (c * g.height + oy * g.stride + ky) * g.width + kx;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            dst[ox * g.stride] += *src++;
          }
        }
      }
    }
  }
}
}  // namespace detail

inline Tensor conv2d(const Tensor & input, const Tensor & filters, std::size_t stride)
{
  const auto g = conv_geometry(input, filters, stride);
  const auto cols = detail::im2col(input.data(), g);
  Tensor out({g.filters, g.out_h, g.out_w});
  detail::as_matrix(out.data(), g.filters, g.positions()).noalias() =
    detail::as_matrix(filters.data(), g.filters, g.patch_size()) *
    detail::as_matrix(std::span<const double>(cols), g.patch_size(), g.positions());
  return out;
}

/// Which operands of conv2d receive gradient.
enum class ConvGrad { all, filters_only };

inline void conv2d_backward(
  Tensor & input, Tensor & filters, std::size_t stride, const Tensor & out,
  ConvGrad which = ConvGrad::all)
{
  const auto g = conv_geometry(input, filters, stride);
  const auto grad_out = detail::as_matrix(out.grad(), g.filters, g.positions());
  const auto cols = detail::im2col(input.data(), g);
  detail::as_matrix(filters.grad(), g.filters, g.patch_size()).noalias() +=
    grad_out * detail::as_matrix(cols, g.patch_size(), g.positions()).transpose();
  if (which == ConvGrad::filters_only) {
    return;
  }
  std::vector<double> grad_cols(cols.size());
  detail::as_matrix(std::span<double>(grad_cols), g.patch_size(), g.positions()).noalias() =
    detail::as_matrix(filters.data(), g.filters, g.patch_size()).transpose() * grad_out;
  detail::col2im_add(grad_cols, input.grad(), g);
}

// ---------------------------------------------------------------------------
// per-channel bias

/// Adds bias[c] to every element of channel c (leading axis).
inline Tensor add_channel_bias(const Tensor & input, const Tensor & bias)
{
  if (bias.rank() != 1 || bias.extent(0) != input.extent(0)) {
    throw DimensionError(
            "bias " + shape_string(bias.shape()) + " does not match channels of " +
            shape_string(input.shape()));
  }
  Tensor out(input.shape(), std::vector<double>(input.data().begin(), input.data().end()));
  const std::size_t per_channel = input.size() / input.extent(0);
  auto values = out.data();
  for (std::size_t c = 0; c < input.extent(0); ++c) {
    for (std::size_t i = 0; i < per_channel; ++i) {
      values[c * per_channel + i] += bias[c];
    }
  }
  return out;
}

inline void add_channel_bias_backward(Tensor & input, Tensor & bias, const Tensor & out)
{
  const std::size_t per_channel = input.size() / input.extent(0);
  auto g = out.grad();
  auto gi = input.grad();
  auto gb = bias.grad();
  for (std::size_t c = 0; c < input.extent(0); ++c) {
    double sum = 0.0;
    for (std::size_t i = 0; i < per_channel; ++i) {
      gi[c * per_channel + i] += g[c * per_channel + i];
      sum += g[c * per_channel + i];
    }
    gb[c] += sum;
  }
}

// ---------------------------------------------------------------------------
// maxpool2: 2x2 windows, stride 2. Ties resolve to the first element in
// row-major scan order of the window.

inline void check_poolable(const Tensor & input)
{
  detail::require_rank(input, 3, "maxpool2");
  if (input.extent(1) % 2 != 0 || input.extent(2) % 2 != 0) {
    throw DimensionError("maxpool2 needs even spatial extents, got " + shape_string(input.shape()));
  }
}

namespace detail
{
inline std::size_t pool_argmax(const Tensor & input, std::size_t c, std::size_t y, std::size_t x)
{
  const std::size_t w = input.extent(2);
  const std::size_t base = (c * input.extent(1) + 2 * y) * w + 2 * x;
  const std::size_t candidates[4] = {base, base + 1, base + w, base + w + 1};
  std::size_t best = candidates[0];
  for (std::size_t i = 1; i < 4; ++i) {
    if (input[candidates[i]] > input[best]) {
      best = candidates[i];
    }
  }
  return best;
}
}  // namespace detail

inline Tensor maxpool2(const Tensor & input)
{
  check_poolable(input);
  const std::size_t channels = input.extent(0);
  const std::size_t oh = input.extent(1) / 2;
  const std::size_t ow = input.extent(2) / 2;
  Tensor out({channels, oh, ow});
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        out.at(c, y, x) = input[detail::pool_argmax(input, c, y, x)];
      }
    }
  }
  return out;
}

inline void maxpool2_backward(Tensor & input, const Tensor & out)
{
  check_poolable(input);
  auto gi = input.grad();
  auto go = out.grad();
  std::size_t o = 0;
  for (std::size_t c = 0; c < out.extent(0); ++c) {
    for (std::size_t y = 0; y < out.extent(1); ++y) {
      for (std::size_t x = 0; x < out.extent(2); ++x, ++o) {
        gi[detail::pool_argmax(input, c, y, x)] += go[o];
      }
    }
  }
}

// ---------------------------------------------------------------------------
// relu

inline Tensor relu(const Tensor & input)
{
  Tensor out(input.shape());
  auto in = input.data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) {
    o[i] = in[i] > 0.0 ? in[i] : 0.0;
  }
  return out;
}

/// Subgradient 0 at x = 0.
inline void relu_backward(Tensor & input, const Tensor & out)
{
  auto in = input.data();
  auto gi = input.grad();
  auto go = out.grad();
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (in[i] > 0.0) {
      gi[i] += go[i];
    }
  }
}

// ---------------------------------------------------------------------------
// gradient checking

struct GradCheckReport
{
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares the analytic gradient of a scalar objective against central
/// differences (f(x+eps) - f(x-eps)) / (2 eps), coordinate by coordinate.
///
/// `objective(x)` must return f(x) and add df/dx into x.grad(). The relative
/// error of a coordinate is |a - n| / max(|a|, |n|, 1e-8). Only the listed
/// coordinates are probed when `coords` is non-empty. On return x holds its
/// original values and x.grad() the analytic gradient.
template<typename Objective>
GradCheckReport grad_check_report(
  Objective && objective, Tensor & x, double eps, std::span<const std::size_t> coords = {})
{
  if (!(eps > 0.0)) {
    throw std::invalid_argument("grad_check needs eps > 0");
  }
  x.zero_grad();
  objective(x);
  const std::vector<double> analytic(x.grad().begin(), x.grad().end());

  std::vector<std::size_t> all;
  if (coords.empty()) {
    all.resize(x.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    coords = all;
  }

  GradCheckReport report;
  report.worst_index = coords.front();
  for (std::size_t i : coords) {
    const double saved = x[i];
    x[i] = saved + eps;
    const double up = objective(x);
    x[i] = saved - eps;
    const double down = objective(x);
    x[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    const double err = std::abs(a - numeric) / denom;
    if (err > report.max_relative_error) {
      report = {err, i, a, numeric};
    }
  }
  std::copy(analytic.begin(), analytic.end(), x.grad().begin());
  return report;
}

template<typename Objective>
double grad_check(
  Objective && objective, Tensor & x, double eps, std::span<const std::size_t> coords = {})
{
  return grad_check_report(std::forward<Objective>(objective), x, eps, coords).max_relative_error;
}

}  // namespace cdml

#endif  // CDML_TENSOR_HPP_
