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

#ifndef CDML_EVALUATION_HPP_
#define CDML_EVALUATION_HPP_

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdml/model.hpp"
#include "cdml/parallel.hpp"
#include "cdml/sample.hpp"

namespace cdml
{

class EvaluationError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Indices into the evaluated sample list. Camera A is the smallest camera
/// id present, camera B the next one.
struct EvalSplit
{
  std::vector<std::size_t> gallery;  // one per identity, camera B
  std::vector<std::size_t> probes;   // every camera-A image
  std::vector<int> gallery_ids;
  std::vector<int> probe_ids;
};

/// rates[k-1] = fraction of probes whose true match ranks <= k.
struct CmcCurve
{
  std::vector<double> rates;
};

inline EvalSplit make_single_shot_split(std::span<const ImageSample> samples, std::mt19937_64 & rng)
{
  std::set<int> cameras;
  for (const auto & s : samples) {
    cameras.insert(s.camera);
  }
  if (cameras.size() < 2) {
    throw EvaluationError("single-shot evaluation needs two cameras");
  }
  const int cam_a = *cameras.begin();
  const int cam_b = *std::next(cameras.begin());

  std::map<int, std::vector<std::size_t>> in_a, in_b;
  std::set<int> ids;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    ids.insert(samples[i].identity);
    if (samples[i].camera == cam_a) {
      in_a[samples[i].identity].push_back(i);
    } else if (samples[i].camera == cam_b) {
      in_b[samples[i].identity].push_back(i);
    }
  }
  std::string offenders;
  for (int id : ids) {
    if (!in_a.count(id) || !in_b.count(id)) {
      offenders += (offenders.empty() ? "" : ", ") + std::to_string(id);
    }
  }
  if (!offenders.empty()) {
    throw EvaluationError(
            "identities missing an image from camera " + std::to_string(cam_a) + " or " +
            std::to_string(cam_b) + ": " + offenders);
  }

  EvalSplit split;
  for (int id : ids) {
    const auto & pool = in_b.at(id);
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    split.gallery.push_back(pool[pick(rng)]);
    split.gallery_ids.push_back(id);
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].camera == cam_a) {
      split.probes.push_back(i);
      split.probe_ids.push_back(samples[i].identity);
    }
  }
  return split;
}

/// Row-major probes x gallery matrix of model distances.
struct DistanceMatrix
{
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double operator()(std::size_t r, std::size_t c) const {return values[r * cols + c];}
};

inline DistanceMatrix distance_matrix(
  std::span<const ImageSample> samples, const EvalSplit & split, const Model & model,
  std::size_t workers = 1)
{
  auto features = [&](const std::vector<std::size_t> & idx) {
      std::vector<Tensor> out(idx.size());
      parallel_for(
        idx.size(), workers, [&](std::size_t i, std::size_t) {
          out[i] = extract(samples[idx[i]], model.params, model.config);
        });
      return out;
    };
  const auto probe_f = features(split.probes);
  const auto gallery_f = features(split.gallery);

  DistanceMatrix m{probe_f.size(), gallery_f.size(), {}};
  m.values.resize(m.rows * m.cols);
  parallel_for(
    m.rows, workers, [&](std::size_t r, std::size_t) {
      for (std::size_t c = 0; c < m.cols; ++c) {
        m.values[r * m.cols + c] = distance(probe_f[r].data(), gallery_f[c].data(), model.metric);
      }
    });
  return m;
}

/// Rank of each probe's true match; equal distances rank the true match
/// after every impostor it ties with.
inline CmcCurve cmc(
  const DistanceMatrix & m, std::span<const int> probe_ids, std::span<const int> gallery_ids)
{
  if (probe_ids.size() != m.rows || gallery_ids.size() != m.cols) {
    throw EvaluationError("id lists do not match the distance matrix shape");
  }
  if (m.cols == 0) {
    throw EvaluationError("empty gallery");
  }
  std::vector<std::size_t> hits(m.cols, 0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const auto it = std::find(gallery_ids.begin(), gallery_ids.end(), probe_ids[r]);
    if (it == gallery_ids.end()) {
      throw EvaluationError(
              "probe " + std::to_string(r) + " (identity " + std::to_string(probe_ids[r]) +
              ") has no gallery match");
    }
    const std::size_t truth = static_cast<std::size_t>(it - gallery_ids.begin());
    const double d = m(r, truth);
    std::size_t rank = 1;
    for (std::size_t c = 0; c < m.cols; ++c) {
      if (c != truth && m(r, c) <= d) {
        ++rank;
      }
    }
    ++hits[rank - 1];
  }
  CmcCurve curve;
  curve.rates.resize(m.cols);
  std::size_t cumulative = 0;
  for (std::size_t k = 0; k < m.cols; ++k) {
    cumulative += hits[k];
    curve.rates[k] = m.rows == 0 ? 0.0 :
      static_cast<double>(cumulative) / static_cast<double>(m.rows);
  }
  return curve;
}

inline double rank1(const CmcCurve & curve)
{
  if (curve.rates.empty()) {
    throw EvaluationError("empty CMC curve");
  }
  return curve.rates.front();
}

/// Split, distances and CMC in one call.
inline CmcCurve evaluate(
  std::span<const ImageSample> samples, const Model & model, std::uint64_t seed,
  std::size_t workers = 1)
{
  std::mt19937_64 rng(seed);
  const EvalSplit split = make_single_shot_split(samples, rng);
  const DistanceMatrix m = distance_matrix(samples, split, model, workers);
  return cmc(m, split.probe_ids, split.gallery_ids);
}

/// CSV `rank,identification_rate`.
inline void write_cmc_csv(const std::filesystem::path & path, const CmcCurve & curve)
{
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out.precision(17);
  out << "rank,identification_rate\n";
  for (std::size_t k = 0; k < curve.rates.size(); ++k) {
    out << (k + 1) << ',' << curve.rates[k] << '\n';
  }
}

}  // namespace cdml

#endif  // CDML_EVALUATION_HPP_
