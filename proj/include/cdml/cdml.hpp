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

#ifndef CDML_CDML_HPP_
#define CDML_CDML_HPP_

#include "cdml/checkpoint.hpp"
#include "cdml/dataset.hpp"
#include "cdml/evaluation.hpp"
#include "cdml/extractor.hpp"
#include "cdml/image_io.hpp"
#include "cdml/metric.hpp"
#include "cdml/mining.hpp"
#include "cdml/model.hpp"
#include "cdml/parallel.hpp"
#include "cdml/sample.hpp"
#include "cdml/tensor.hpp"
#include "cdml/training.hpp"

#endif  // CDML_CDML_HPP_
