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

#ifndef CDML_EXTRACTOR_HPP_
#define CDML_EXTRACTOR_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "cdml/sample.hpp"
#include "cdml/tensor.hpp"

namespace cdml
{

inline constexpr std::size_t kBranchCount = 3;
inline constexpr std::size_t kFeatureDim = 64;

/// Raised when the pre-normalization feature is (numerically) the zero vector.
class DegenerateFeatureError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

struct ConvSpec
{
  std::size_t filters;
  std::size_t kernel;
  std::size_t stride;

  bool operator==(const ConvSpec &) const = default;
};

/// Architecture of the feature extractor.
///
/// Each branch runs conv -> pool -> conv -> pool -> conv over one 64x64
/// patch. The three branch outputs are concatenated and passed through a
/// hidden FC layer with ReLU and a linear FC layer to 64 dimensions.
struct ExtractorConfig
{
  std::size_t patch_size = 64;
  std::array<std::size_t, kBranchCount> patch_rows{0, 32, 64};
  std::array<ConvSpec, 3> convs{{{32, 5, 1}, {32, 5, 1}, {32, 3, 1}}};
  std::size_t hidden = 500;
  std::size_t output_dim = kFeatureDim;
  bool relu_after_conv = true;
  bool tied_branches = false;

  bool operator==(const ExtractorConfig &) const = default;

  /// Small network for CPU training at desk scale:
  /// 64 -6/2-> 30 -pool-> 15 -4-> 12 -pool-> 6 -3-> 4.
  static ExtractorConfig compact()
  {
    ExtractorConfig c;
    c.convs = {{{8, 6, 2}, {16, 4, 1}, {16, 3, 1}}};
    c.hidden = 128;
    return c;
  }

  /// Smallest sensible network; used where many forward passes are needed.
  static ExtractorConfig tiny()
  {
    ExtractorConfig c;
    c.convs = {{{4, 6, 2}, {4, 4, 1}, {4, 3, 1}}};
    c.hidden = 16;
    return c;
  }

  /// Spatial extents after each conv layer (square patches).
  std::array<std::size_t, 3> conv_extents() const
  {
    std::array<std::size_t, 3> out{};
    std::size_t size = patch_size;
    for (std::size_t l = 0; l < 3; ++l) {
      const auto & c = convs[l];
      if (c.filters == 0 || c.kernel == 0 || c.stride == 0) {
        throw DimensionError("conv layer " + std::to_string(l + 1) + " has a zero parameter");
      }
      if (c.kernel > size) {
        throw DimensionError(
                "conv layer " + std::to_string(l + 1) + " kernel " + std::to_string(c.kernel) +
                " exceeds input extent " + std::to_string(size));
      }
      size = (size - c.kernel) / c.stride + 1;
      out[l] = size;
      if (l < 2) {
        if (size % 2 != 0) {
          throw DimensionError(
                  "conv layer " + std::to_string(l + 1) + " output extent " +
                  std::to_string(size) + " is odd and cannot be pooled");
        }
        size /= 2;
      }
    }
    return out;
  }

  std::size_t branch_output_size() const
  {
    const auto ext = conv_extents();
    return convs[2].filters * ext[2] * ext[2];
  }

  std::size_t concat_size() const {return kBranchCount * branch_output_size();}

  std::size_t branch_param_sets() const {return tied_branches ? 1 : kBranchCount;}

  void validate() const
  {
    if (patch_size != kImageWidth) {
      throw DimensionError("patches must be " + std::to_string(kImageWidth) + " pixels wide");
    }
    std::size_t covered = 0;
    for (std::size_t b = 0; b < kBranchCount; ++b) {
      const auto start = patch_rows[b];
      if (start + patch_size > kImageHeight) {
        throw DimensionError("patch window " + std::to_string(b) + " runs past the image");
      }
      if (start > covered) {
        throw DimensionError("patch windows leave rows uncovered");
      }
      covered = std::max(covered, start + patch_size);
    }
    if (covered != kImageHeight) {
      throw DimensionError("patch windows do not cover all image rows");
    }
    if (output_dim != kFeatureDim) {
      throw DimensionError("feature dimension must be " + std::to_string(kFeatureDim));
    }
    if (hidden == 0) {
      throw DimensionError("hidden width must be positive");
    }
    (void)conv_extents();
  }
};

struct BranchParams
{
  std::array<Tensor, 3> filters;
  std::array<Tensor, 3> biases;
};

struct ExtractorParams
{
  std::vector<BranchParams> branches;  // three untied sets, or one when tied
  Tensor hidden_weights;
  Tensor hidden_bias;
  Tensor output_weights;
  Tensor output_bias;

  const BranchParams & branch_for(std::size_t patch) const
  {
    return branches.size() == 1 ? branches[0] : branches.at(patch);
  }
  BranchParams & branch_for(std::size_t patch)
  {
    return branches.size() == 1 ? branches[0] : branches.at(patch);
  }
};

/// Visits every learnable tensor as f(name, tensor) in a fixed order.
template<typename Params, typename F>
requires std::is_same_v<std::remove_const_t<Params>, ExtractorParams>
void for_each_parameter(Params & params, F && f)
{
  for (std::size_t b = 0; b < params.branches.size(); ++b) {
    for (std::size_t l = 0; l < 3; ++l) {
      const std::string prefix = "branch" + std::to_string(b) + ".conv" + std::to_string(l + 1);
      f(prefix + ".filters", params.branches[b].filters[l]);
      f(prefix + ".bias", params.branches[b].biases[l]);
    }
  }
  f(std::string("fc_hidden.weights"), params.hidden_weights);
  f(std::string("fc_hidden.bias"), params.hidden_bias);
  f(std::string("fc_output.weights"), params.output_weights);
  f(std::string("fc_output.bias"), params.output_bias);
}

inline void zero_grad(ExtractorParams & params)
{
  for_each_parameter(params, [](const std::string &, Tensor & t) {t.zero_grad();});
}

/// Deterministic Glorot-uniform initialization; biases start at zero.
inline ExtractorParams init_params(const ExtractorConfig & config, std::uint64_t seed)
{
  config.validate();
  std::mt19937_64 rng(seed);
  auto glorot = [&rng](Shape shape, std::size_t fan_in, std::size_t fan_out) {
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-limit, limit);
      Tensor t(std::move(shape));
      for (auto & v : t.data()) {
        v = dist(rng);
      }
      return t;
    };

  ExtractorParams p;
  p.branches.resize(config.branch_param_sets());
  for (auto & branch : p.branches) {
    std::size_t in_channels = kImageChannels;
    for (std::size_t l = 0; l < 3; ++l) {
      const auto & c = config.convs[l];
      const std::size_t area = c.kernel * c.kernel;
      branch.filters[l] = glorot(
        {c.filters, in_channels, c.kernel, c.kernel}, in_channels * area, c.filters * area);
      branch.biases[l] = Tensor({c.filters});
      in_channels = c.filters;
    }
  }
  const std::size_t concat = config.concat_size();
  p.hidden_weights = glorot({config.hidden, concat}, concat, config.hidden);
  p.hidden_bias = Tensor({config.hidden});
  p.output_weights = glorot({config.output_dim, config.hidden}, config.hidden, config.output_dim);
  p.output_bias = Tensor({config.output_dim});
  return p;
}

// ---------------------------------------------------------------------------
// patches

/// Top, middle and bottom 64x64 row windows of a 3x128x64 image.
inline std::array<Tensor, kBranchCount> split_patches(
  const Tensor & image, const ExtractorConfig & config = {})
{
  if (image.shape() != Shape{kImageChannels, kImageHeight, kImageWidth}) {
    throw DimensionError(
            "expected a 3x128x64 image, got " + shape_string(image.shape()));
  }
  std::array<Tensor, kBranchCount> patches;
  const std::size_t rows = config.patch_size;
  for (std::size_t b = 0; b < kBranchCount; ++b) {
    Tensor patch({kImageChannels, rows, kImageWidth});
    for (std::size_t c = 0; c < kImageChannels; ++c) {
      const auto first = image.data().begin() +
        static_cast<std::ptrdiff_t>((c * kImageHeight + config.patch_rows[b]) * kImageWidth);
      std::copy(
        first, first + static_cast<std::ptrdiff_t>(rows * kImageWidth),
        patch.data().begin() + static_cast<std::ptrdiff_t>(c * rows * kImageWidth));
    }
    patches[b] = std::move(patch);
  }
  return patches;
}

inline std::array<Tensor, kBranchCount> split_patches(
  const ImageSample & image, const ExtractorConfig & config = {})
{
  return split_patches(image.pixels, config);
}

// ---------------------------------------------------------------------------
// branch

/// Intermediate activations of one branch, kept for the backward pass.
struct BranchTrace
{
  Tensor patch;
  std::array<Tensor, 3> conv;    // raw convolution output
  std::array<Tensor, 3> biased;  // conv + bias
  std::array<Tensor, 3> act;     // after ReLU (copy of biased when disabled)
  std::array<Tensor, 2> pooled;
};

inline Tensor branch_forward(
  const Tensor & patch, const BranchParams & params, const ExtractorConfig & config,
  BranchTrace * trace = nullptr)
{
  BranchTrace local;
  BranchTrace & t = trace ? *trace : local;
  t.patch = patch;
  for (std::size_t l = 0; l < 3; ++l) {
    const Tensor & input = l == 0 ? t.patch : t.pooled[l - 1];
    t.conv[l] = conv2d(input, params.filters[l], config.convs[l].stride);
    t.biased[l] = add_channel_bias(t.conv[l], params.biases[l]);
    t.act[l] = config.relu_after_conv ? relu(t.biased[l]) : t.biased[l];
    if (l < 2) {
      t.pooled[l] = maxpool2(t.act[l]);
    }
  }
  return t.act[2].reshaped({t.act[2].size()});
}

/// Accumulates parameter gradients (and the patch gradient into trace.patch)
/// given dL/d(branch output).
inline void branch_backward(
  BranchTrace & t, BranchParams & params, const ExtractorConfig & config,
  std::span<const double> grad_out, ConvGrad first_layer = ConvGrad::filters_only)
{
  if (grad_out.size() != t.act[2].size()) {
    throw DimensionError("branch gradient has the wrong length");
  }
  std::copy(grad_out.begin(), grad_out.end(), t.act[2].grad().begin());
  for (std::size_t l = 3; l-- > 0;) {
    if (l < 2) {
      maxpool2_backward(t.act[l], t.pooled[l]);
    }
    if (config.relu_after_conv) {
      relu_backward(t.biased[l], t.act[l]);
    } else {
      auto g = t.act[l].grad();
      auto gb = t.biased[l].grad();
      std::transform(gb.begin(), gb.end(), g.begin(), gb.begin(), std::plus<>{});
    }
    add_channel_bias_backward(t.conv[l], params.biases[l], t.biased[l]);
    Tensor & input = l == 0 ? t.patch : t.pooled[l - 1];
    conv2d_backward(
      input, params.filters[l], config.convs[l].stride, t.conv[l],
      l == 0 ? first_layer : ConvGrad::all);
  }
}

// ---------------------------------------------------------------------------
// full extractor

struct ExtractorTrace
{
  std::array<BranchTrace, kBranchCount> branches;
  Tensor concat;
  Tensor hidden_linear;
  Tensor hidden_pre;
  Tensor hidden;
  Tensor output_linear;
  Tensor output;
  double norm = 0.0;
  Tensor feature;
};

/// Maps an image to a unit-norm 64-d feature vector.
inline Tensor extract(
  const Tensor & image, const ExtractorParams & params, const ExtractorConfig & config,
  ExtractorTrace * trace = nullptr)
{
  ExtractorTrace local;
  ExtractorTrace & t = trace ? *trace : local;
  const auto patches = split_patches(image, config);
  const std::size_t branch_size = config.branch_output_size();
  t.concat = Tensor({kBranchCount * branch_size});
  for (std::size_t b = 0; b < kBranchCount; ++b) {
    const Tensor out = branch_forward(patches[b], params.branch_for(b), config, &t.branches[b]);
    std::copy(
      out.data().begin(), out.data().end(),
      t.concat.data().begin() + static_cast<std::ptrdiff_t>(b * branch_size));
  }
  t.hidden_linear = matmul(params.hidden_weights, t.concat);
  t.hidden_pre = add_channel_bias(t.hidden_linear, params.hidden_bias);
  t.hidden = relu(t.hidden_pre);
  t.output_linear = matmul(params.output_weights, t.hidden);
  t.output = add_channel_bias(t.output_linear, params.output_bias);

  double sq = 0.0;
  for (double v : t.output.data()) {
    sq += v * v;
  }
  t.norm = std::sqrt(sq);
  if (!(t.norm > 1e-12) || !std::isfinite(t.norm)) {
    throw DegenerateFeatureError(
            "feature vector has norm " + std::to_string(t.norm) + " before normalization");
  }
  t.feature = Tensor({config.output_dim});
  for (std::size_t i = 0; i < config.output_dim; ++i) {
    t.feature[i] = t.output[i] / t.norm;
  }
  return t.feature;
}

inline Tensor extract(
  const ImageSample & image, const ExtractorParams & params, const ExtractorConfig & config,
  ExtractorTrace * trace = nullptr)
{
  return extract(image.pixels, params, config, trace);
}

/// Siamese extraction: both images go through the same parameter set.
inline std::pair<Tensor, Tensor> extract_pair(
  const ImageSample & first, const ImageSample & second, const ExtractorParams & params,
  const ExtractorConfig & config)
{
  return {extract(first, params, config), extract(second, params, config)};
}

/// Back-propagates dL/d(feature) through a traced extraction, accumulating
/// into the parameter gradients. A trace supports a single backward pass;
/// sum all feature gradients first when a feature has several consumers.
inline void extract_backward(
  ExtractorTrace & t, ExtractorParams & params, const ExtractorConfig & config,
  std::span<const double> grad_feature, ConvGrad first_layer = ConvGrad::filters_only)
{
  if (grad_feature.size() != t.feature.size()) {
    throw DimensionError("feature gradient has the wrong length");
  }
  // y = z / |z|  =>  dz = (g - y (y . g)) / |z|
  double dot = 0.0;
  for (std::size_t i = 0; i < grad_feature.size(); ++i) {
    dot += t.feature[i] * grad_feature[i];
  }
  auto g_out = t.output.grad();
  for (std::size_t i = 0; i < grad_feature.size(); ++i) {
    g_out[i] += (grad_feature[i] - t.feature[i] * dot) / t.norm;
  }
  add_channel_bias_backward(t.output_linear, params.output_bias, t.output);
  matmul_backward(params.output_weights, t.hidden, t.output_linear);
  relu_backward(t.hidden_pre, t.hidden);
  add_channel_bias_backward(t.hidden_linear, params.hidden_bias, t.hidden_pre);
  matmul_backward(params.hidden_weights, t.concat, t.hidden_linear);

  const std::size_t branch_size = config.branch_output_size();
  for (std::size_t b = 0; b < kBranchCount; ++b) {
    branch_backward(
      t.branches[b], params.branch_for(b), config,
      t.concat.grad().subspan(b * branch_size, branch_size), first_layer);
  }
}

}  // namespace cdml

#endif  // CDML_EXTRACTOR_HPP_
