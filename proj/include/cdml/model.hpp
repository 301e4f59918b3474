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

#ifndef CDML_MODEL_HPP_
#define CDML_MODEL_HPP_

#include <cstdint>
#include <string>
#include <type_traits>

#include "cdml/extractor.hpp"
#include "cdml/metric.hpp"

namespace cdml
{

/// Siamese feature extractor joined to the Mahalanobis metric head.
struct Model
{
  ExtractorConfig config;
  ExtractorParams params;
  MetricLayer metric;

  /// Fresh extractor from `seed`; W starts at the identity.
  static Model create(const ExtractorConfig & config, std::uint64_t seed, double lambda = 1e-2)
  {
    return {config, init_params(config, seed), MetricLayer::identity(config.output_dim, lambda)};
  }

  Tensor extract(const ImageSample & image) const {return cdml::extract(image, params, config);}

  double distance(const ImageSample & a, const ImageSample & b) const
  {
    const auto [fa, fb] = extract_pair(a, b, params, config);
    return cdml::distance(fa, fb, metric);
  }
};

/// Every learnable tensor: extractor parameters, then W. The metric bias is
/// excluded since it is fixed at zero.
template<typename M, typename F>
requires std::is_same_v<std::remove_const_t<M>, Model>
void for_each_parameter(M & model, F && f)
{
  for_each_parameter(
    model.params, [&f](const std::string & name, auto & t) {f("extractor." + name, t);});
  f(std::string("metric.weights"), model.metric.weights);
}

inline void zero_grad(Model & model)
{
  for_each_parameter(model, [](const std::string &, Tensor & t) {t.zero_grad();});
}

}  // namespace cdml

#endif  // CDML_MODEL_HPP_
