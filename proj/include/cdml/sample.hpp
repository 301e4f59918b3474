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

#ifndef CDML_SAMPLE_HPP_
#define CDML_SAMPLE_HPP_

#include <cstddef>
#include <string>

#include "cdml/tensor.hpp"

namespace cdml
{

inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kImageHeight = 128;
inline constexpr std::size_t kImageWidth = 64;

/// A pedestrian image normalized to 3x128x64 with values in [0, 1].
struct ImageSample
{
  Tensor pixels{Shape{kImageChannels, kImageHeight, kImageWidth}};
  int identity = 0;
  int camera = 0;
  bool occluded = false;  // rendered with a heavy occlusion (synthetic data only)
  std::string source;
};

}  // namespace cdml

#endif  // CDML_SAMPLE_HPP_
