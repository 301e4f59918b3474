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

#ifndef CDML_PARALLEL_HPP_
#define CDML_PARALLEL_HPP_

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace cdml
{

inline std::size_t default_workers()
{
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// Runs body(i, worker) for i in [0, n) on up to `workers` threads. Work is
/// handed out dynamically, so bodies must write only to per-index or
/// per-worker state. The first exception (lowest index) is rethrown.
template<typename Body>
void parallel_for(std::size_t n, std::size_t workers, Body && body)
{
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      body(i, std::size_t{0});
    }
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back(
      [&, w]() {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            body(i, w);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
  }
  for (auto & t : threads) {
    t.join();
  }
  for (auto & e : errors) {
    if (e) {
      std::rethrow_exception(e);
    }
  }
}

}  // namespace cdml

#endif  // CDML_PARALLEL_HPP_
