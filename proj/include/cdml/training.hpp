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

#ifndef CDML_TRAINING_HPP_
#define CDML_TRAINING_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdml/extractor.hpp"
#include "cdml/metric.hpp"
#include "cdml/mining.hpp"
#include "cdml/model.hpp"
#include "cdml/parallel.hpp"
#include "cdml/sample.hpp"

namespace cdml
{

using Rng = std::mt19937_64;
using Logger = std::function<void(const std::string &)>;

/// Raised when the training loss stops being finite.
class DivergenceError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

class TrainingError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

struct PretrainConfig
{
  std::size_t epochs = 0;  // 0 skips pre-training
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 16;
  int translation = 3;
  double clip_norm = 10.0;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

struct TrainConfig
{
  double learning_rate = 0.01;
  double lr_decay = 0.5;
  std::size_t decay_every = 20;  // epochs
  double momentum = 0.9;
  std::size_t batch_size = 16;   // anchors per step
  std::size_t epochs = 100;
  std::size_t steps_per_epoch = 0;  // 0: one pass over the anchors
  double lambda = 1e-2;
  std::uint64_t seed = 0;
  int translation = 3;           // augmentation bound in pixels
  bool tied_branches = false;
  std::optional<double> margin;  // hinge clamp; off reproduces L = d_pos - d_neg
  double clip_norm = 10.0;
  std::size_t workers = 1;
  MiningConfig mining;
  PretrainConfig pretrain;

  void validate() const
  {
    if (!(learning_rate > 0.0)) {
      throw std::invalid_argument("learning rate must be positive");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) {
      throw std::invalid_argument("momentum must lie in [0, 1)");
    }
    if (translation < 0 || pretrain.translation < 0) {
      throw std::invalid_argument("translation bound must be non-negative");
    }
    if (lambda < 0.0) {
      throw std::invalid_argument("lambda must be non-negative");
    }
    if (batch_size == 0 || decay_every == 0) {
      throw std::invalid_argument("batch size and decay interval must be positive");
    }
    mining.validate();
  }
};

/// Anchor, moderate positive and hard negative, as sample indices.
struct TripletContext
{
  std::size_t anchor;
  std::size_t positive;
  std::size_t negative;

  bool operator==(const TripletContext &) const = default;
};

// ---------------------------------------------------------------------------
// augmentation

/// Shifts content by (dy, dx) pixels, replicating edge pixels into the gap.
inline ImageSample translate(const ImageSample & image, int dy, int dx)
{
  ImageSample out = image;
  const int h = static_cast<int>(kImageHeight);
  const int w = static_cast<int>(kImageWidth);
  for (std::size_t c = 0; c < kImageChannels; ++c) {
    for (int y = 0; y < h; ++y) {
      const int sy = std::clamp(y - dy, 0, h - 1);
      for (int x = 0; x < w; ++x) {
        const int sx = std::clamp(x - dx, 0, w - 1);
        out.pixels.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
          image.pixels.at(c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
      }
    }
  }
  return out;
}

/// Random translation with offsets uniform in [-bound, bound]^2 (dy drawn
/// first). Labels are preserved.
inline ImageSample augment(const ImageSample & image, int bound, Rng & rng)
{
  if (bound < 0) {
    throw std::invalid_argument("translation bound must be non-negative");
  }
  if (bound == 0) {
    return image;
  }
  std::uniform_int_distribution<int> offset(-bound, bound);
  const int dy = offset(rng);
  const int dx = offset(rng);
  return translate(image, dy, dx);
}

// ---------------------------------------------------------------------------
// optimizer

inline std::vector<Tensor *> parameter_list(Model & model)
{
  std::vector<Tensor *> out;
  for_each_parameter(model, [&out](const std::string &, Tensor & t) {out.push_back(&t);});
  return out;
}

inline double global_grad_norm(std::span<Tensor * const> params)
{
  double sq = 0.0;
  for (const Tensor * t : params) {
    for (double g : t->grad()) {
      sq += g * g;
    }
  }
  return std::sqrt(sq);
}

/// Rescales gradients to `max_norm` when their global norm exceeds it.
/// Returns true when clipping happened.
inline bool clip_gradients(std::span<Tensor * const> params, double max_norm)
{
  const double norm = global_grad_norm(params);
  if (!(max_norm > 0.0) || norm <= max_norm) {
    return false;
  }
  const double scale = max_norm / norm;
  for (Tensor * t : params) {
    for (double & g : t->grad()) {
      g *= scale;
    }
  }
  return true;
}

/// v <- momentum * v - lr * g;  p <- p + v
class MomentumSgd
{
public:
  void step(std::span<Tensor * const> params, double lr, double momentum)
  {
    if (velocity_.size() != params.size()) {
      velocity_.clear();
      for (const Tensor * t : params) {
        velocity_.emplace_back(t->size(), 0.0);
      }
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto data = params[i]->data();
      auto grad = params[i]->grad();
      auto & v = velocity_[i];
      for (std::size_t j = 0; j < data.size(); ++j) {
        v[j] = momentum * v[j] - lr * grad[j];
        data[j] += v[j];
      }
    }
  }

private:
  std::vector<std::vector<double>> velocity_;
};

namespace detail
{
inline std::size_t parameter_count(std::span<Tensor * const> params)
{
  std::size_t n = 0;
  for (const Tensor * t : params) {
    n += t->size();
  }
  return n;
}

inline void copy_grads(std::span<Tensor * const> params, std::vector<double> & out)
{
  out.resize(parameter_count(params));
  std::size_t k = 0;
  for (const Tensor * t : params) {
    std::copy(t->grad().begin(), t->grad().end(), out.begin() + static_cast<std::ptrdiff_t>(k));
    k += t->size();
  }
}

inline void add_grads(std::span<Tensor * const> params, const std::vector<double> & in)
{
  std::size_t k = 0;
  for (Tensor * t : params) {
    for (double & g : t->grad()) {
      g += in[k++];
    }
  }
}

inline bool all_zero(std::span<const double> v)
{
  return std::all_of(v.begin(), v.end(), [](double x) {return x == 0.0;});
}
}  // namespace detail

// ---------------------------------------------------------------------------
// features

/// Features of every sample under the current model (no augmentation).
inline std::vector<Tensor> compute_features(
  std::span<const ImageSample> samples, const Model & model, std::size_t workers = 1)
{
  std::vector<Tensor> out(samples.size());
  parallel_for(
    samples.size(), workers, [&](std::size_t i, std::size_t) {
      out[i] = extract(samples[i], model.params, model.config);
    });
  return out;
}

// ---------------------------------------------------------------------------
// softmax pre-training

struct PretrainResult
{
  ExtractorParams params;          // extractor only; the softmax head is dropped
  double initial_loss = 0.0;       // mean cross-entropy before the first update
  std::vector<double> epoch_loss;  // mean training cross-entropy per epoch
  double final_accuracy = 0.0;     // on the un-augmented training samples
};

namespace detail
{
struct SoftmaxHead
{
  Tensor weights;  // classes x feature_dim
  Tensor bias;     // classes
};

// Cross-entropy of one sample; accumulates head gradients and returns
// dL/d(feature) through `grad_feature` when non-empty.
inline double softmax_loss(
  SoftmaxHead & head, std::span<const double> feature, std::size_t label, double scale,
  std::span<double> grad_feature, bool * correct = nullptr)
{
  const std::size_t classes = head.bias.size();
  const std::size_t dim = feature.size();
  std::vector<double> logits(classes);
  for (std::size_t k = 0; k < classes; ++k) {
    double z = head.bias[k];
    for (std::size_t j = 0; j < dim; ++j) {
      z += head.weights.at(k, j) * feature[j];
    }
    logits[k] = z;
  }
  const double top = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) {
    sum += std::exp(z - top);
  }
  const double log_norm = top + std::log(sum);
  if (correct) {
    *correct = std::max_element(logits.begin(), logits.end()) - logits.begin() ==
      static_cast<std::ptrdiff_t>(label);
  }
  if (!grad_feature.empty()) {
    for (std::size_t k = 0; k < classes; ++k) {
      const double p = std::exp(logits[k] - log_norm);
      const double g = scale * (p - (k == label ? 1.0 : 0.0));
      head.bias.grad()[k] += g;
      for (std::size_t j = 0; j < dim; ++j) {
        head.weights.grad()[k * dim + j] += g * feature[j];
        grad_feature[j] += g * head.weights.at(k, j);
      }
    }
  }
  return log_norm - logits[label];
}
}  // namespace detail

/// Trains the extractor with a temporary softmax identity classifier, then
/// discards the classifier. `model.params` is updated in place.
inline PretrainResult pretrain_softmax(
  std::span<const ImageSample> samples, Model & model, const PretrainConfig & config,
  const Logger & log = {})
{
  std::map<int, std::size_t> label_of;
  for (const auto & s : samples) {
    label_of.emplace(s.identity, 0);
  }
  if (label_of.size() < 2) {
    throw TrainingError("softmax pre-training needs at least two identities");
  }
  std::size_t next = 0;
  for (auto & [id, label] : label_of) {
    label = next++;
  }
  const std::size_t classes = label_of.size();
  const std::size_t dim = model.config.output_dim;

  Rng rng(config.seed ^ 0x5F3759DFULL);
  detail::SoftmaxHead head;
  {
    const double limit = std::sqrt(6.0 / static_cast<double>(classes + dim));
    std::uniform_real_distribution<double> u(-limit, limit);
    head.weights = Tensor({classes, dim});
    for (auto & v : head.weights.data()) {
      v = u(rng);
    }
    head.bias = Tensor({classes});
  }

  auto mean_loss = [&](double * accuracy) {
      const auto feats = compute_features(samples, model, config.workers);
      double total = 0.0;
      std::size_t hits = 0;
      for (std::size_t i = 0; i < samples.size(); ++i) {
        bool ok = false;
        total += detail::softmax_loss(
          head, feats[i].data(), label_of.at(samples[i].identity), 1.0, {}, &ok);
        hits += ok ? 1 : 0;
      }
      if (accuracy) {
        *accuracy = static_cast<double>(hits) / static_cast<double>(samples.size());
      }
      return total / static_cast<double>(samples.size());
    };

  PretrainResult result;
  result.initial_loss = mean_loss(nullptr);

  std::vector<Tensor *> params = parameter_list(model);
  params.pop_back();  // W is not trained here
  params.push_back(&head.weights);
  params.push_back(&head.bias);
  MomentumSgd optimizer;

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batch = std::max<std::size_t>(1, config.batch_size);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      const std::size_t n = end - start;
      std::vector<ImageSample> inputs;
      inputs.reserve(n);
      for (std::size_t i = start; i < end; ++i) {
        inputs.push_back(augment(samples[order[i]], config.translation, rng));
      }

      std::vector<std::vector<double>> grads(n);
      std::vector<double> losses(n);
      std::vector<Model> local(std::min(std::max<std::size_t>(config.workers, 1), n), model);
      std::vector<detail::SoftmaxHead> local_head(local.size(), head);
      parallel_for(
        n, local.size(), [&](std::size_t i, std::size_t w) {
          Model & m = local[w];
          detail::SoftmaxHead & h = local_head[w];
          zero_grad(m);
          h.weights.zero_grad();
          h.bias.zero_grad();
          ExtractorTrace trace;
          const Tensor f = extract(inputs[i], m.params, m.config, &trace);
          std::vector<double> gf(dim, 0.0);
          losses[i] = detail::softmax_loss(
            h, f.data(), label_of.at(inputs[i].identity), 1.0 / static_cast<double>(n), gf);
          extract_backward(trace, m.params, m.config, gf);
          std::vector<Tensor *> lp = parameter_list(m);
          lp.pop_back();
          lp.push_back(&h.weights);
          lp.push_back(&h.bias);
          detail::copy_grads(lp, grads[i]);
        });

      for (Tensor * t : params) {
        t->zero_grad();
      }
      double batch_loss = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        detail::add_grads(params, grads[i]);
        batch_loss += losses[i];
      }
      if (!std::isfinite(batch_loss)) {
        throw DivergenceError("softmax pre-training loss became non-finite");
      }
      epoch_total += batch_loss;
      clip_gradients(params, config.clip_norm);
      optimizer.step(params, config.learning_rate, config.momentum);
    }
    result.epoch_loss.push_back(epoch_total / static_cast<double>(samples.size()));
    if (log) {
      std::ostringstream os;
      os << "pretrain epoch " << (epoch + 1) << " loss " << result.epoch_loss.back();
      log(os.str());
    }
  }
  zero_grad(model);
  mean_loss(&result.final_accuracy);
  result.params = model.params;
  return result;
}

// ---------------------------------------------------------------------------
// batch construction

/// Index of the training samples by identity and camera.
class TripletSampler
{
public:
  explicit TripletSampler(std::span<const ImageSample> samples)
  : samples_(samples)
  {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      by_identity_[samples[i].identity].push_back(i);
    }
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto & group = by_identity_[samples[i].identity];
      const bool cross = std::any_of(
        group.begin(), group.end(),
        [&](std::size_t j) {return samples[j].camera != samples[i].camera;});
      if (cross) {
        anchors_.push_back(i);
      }
    }
    if (anchors_.empty()) {
      throw TrainingError("no identity has images from more than one camera");
    }
  }

  const std::vector<std::size_t> & anchors() const {return anchors_;}

  std::vector<std::size_t> positives(std::size_t anchor) const
  {
    std::vector<std::size_t> out;
    for (std::size_t j : by_identity_.at(samples_[anchor].identity)) {
      if (samples_[j].camera != samples_[anchor].camera) {
        out.push_back(j);
      }
    }
    return out;
  }

  std::vector<std::size_t> negatives(std::size_t anchor) const
  {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < samples_.size(); ++j) {
      if (samples_[j].identity != samples_[anchor].identity &&
        samples_[j].camera != samples_[anchor].camera)
      {
        out.push_back(j);
      }
    }
    return out;
  }

private:
  std::span<const ImageSample> samples_;
  std::map<int, std::vector<std::size_t>> by_identity_;
  std::vector<std::size_t> anchors_;
};

/// Samples `anchors` anchors and emits up to hard_negative_count contexts for
/// each. `features` holds the epoch-start features of every sample; it may
/// be empty when both mining strategies are disabled.
inline std::vector<TripletContext> build_batch(
  const TripletSampler & sampler, std::span<const ImageSample> samples,
  std::span<const Tensor> features, const MetricLayer & metric, const MiningConfig & mining,
  std::size_t anchors, Rng & rng)
{
  const bool need_distances = mining.positive_mining || mining.negative_mining;
  if (need_distances && features.size() != samples.size()) {
    throw TrainingError("mining needs a feature for every sample");
  }
  auto dist = [&](std::size_t a, std::size_t b) {
      return distance(features[a].data(), features[b].data(), metric);
    };
  const auto & pool_anchors = sampler.anchors();
  std::uniform_int_distribution<std::size_t> pick_anchor(0, pool_anchors.size() - 1);

  std::vector<TripletContext> out;
  for (std::size_t a = 0; a < anchors; ++a) {
    const std::size_t anchor = pool_anchors[pick_anchor(rng)];

    const auto positives = sampler.positives(anchor);
    std::size_t positive;
    if (mining.positive_mining) {
      PositivePool pool{anchor, {}};
      for (std::size_t j : positives) {
        pool.candidates.push_back({j, dist(anchor, j)});
      }
      positive = positives[moderate_positive_select(pool, mining).position];
    } else {
      positive = positives[std::uniform_int_distribution<std::size_t>(0, positives.size() - 1)(rng)];
    }

    auto negatives = sampler.negatives(anchor);
    if (negatives.empty()) {
      throw TrainingError(
              "sample " + std::to_string(anchor) + " has no cross-camera negatives");
    }
    const std::size_t pool_size = std::min(mining.negative_pool_size, negatives.size());
    for (std::size_t i = 0; i < pool_size; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, negatives.size() - 1);
      std::swap(negatives[i], negatives[pick(rng)]);
    }
    negatives.resize(pool_size);
    const std::size_t k = std::min(mining.hard_negative_count, pool_size);
    if (mining.negative_mining) {
      std::vector<NegativeCandidate> pool;
      pool.reserve(pool_size);
      for (std::size_t j : negatives) {
        pool.push_back({j, samples[j].identity, dist(anchor, j)});
      }
      for (std::size_t pos : hard_negative_select(samples[anchor].identity, pool, k)) {
        out.push_back({anchor, positive, negatives[pos]});
      }
    } else {
      for (std::size_t i = 0; i < k; ++i) {
        out.push_back({anchor, positive, negatives[i]});
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// one optimization step

struct TripletImages
{
  const ImageSample * anchor;
  const ImageSample * positive;
  const ImageSample * negative;
};

struct BatchStats
{
  double loss = 0.0;       // mean pair loss + constraint penalty
  double pair_loss = 0.0;  // mean pair loss
  double mean_d_pos = 0.0;
  double mean_d_neg = 0.0;
  double penalty = 0.0;
  bool clipped = false;
};

/// Zeroes and then fills the gradients of every model parameter with the
/// gradient of mean pair loss + (lambda/2)|W W^T - I|_F^2 over `batch`.
/// Per-context gradients are summed in batch order, so the result does not
/// depend on the number of workers.
inline BatchStats triplet_gradients(
  std::span<const TripletImages> batch, Model & model, std::optional<double> margin,
  std::size_t workers = 1)
{
  if (batch.empty()) {
    throw TrainingError("empty training batch");
  }
  const std::size_t n = batch.size();
  const double scale = 1.0 / static_cast<double>(n);
  const std::size_t dim = model.config.output_dim;

  std::vector<std::vector<double>> grads(n);
  std::vector<double> d_pos(n), d_neg(n), losses(n);
  std::vector<Model> local(std::min(std::max<std::size_t>(workers, 1), n), model);
  parallel_for(
    n, local.size(), [&](std::size_t i, std::size_t w) {
      Model & m = local[w];
      zero_grad(m);
      ExtractorTrace ta, tp, tn;
      const Tensor fa = extract(*batch[i].anchor, m.params, m.config, &ta);
      const Tensor fp = extract(*batch[i].positive, m.params, m.config, &tp);
      const Tensor fn = extract(*batch[i].negative, m.params, m.config, &tn);
      DistanceTrace dp, dn;
      d_pos[i] = distance(fa.data(), fp.data(), m.metric, &dp);
      d_neg[i] = distance(fa.data(), fn.data(), m.metric, &dn);
      const PairLossValue pl = evaluate_pair_loss(d_pos[i], d_neg[i], margin);
      losses[i] = pl.value;

      std::vector<double> ga(dim, 0.0), gp(dim, 0.0), gn(dim, 0.0);
      distance_backward(dp, scale * pl.grad_pos, m.metric, ga, gp);
      distance_backward(dn, scale * pl.grad_neg, m.metric, ga, gn);
      if (!detail::all_zero(ga)) {
        extract_backward(ta, m.params, m.config, ga);
      }
      if (!detail::all_zero(gp)) {
        extract_backward(tp, m.params, m.config, gp);
      }
      if (!detail::all_zero(gn)) {
        extract_backward(tn, m.params, m.config, gn);
      }
      detail::copy_grads(parameter_list(m), grads[i]);
    });

  const auto params = parameter_list(model);
  for (Tensor * t : params) {
    t->zero_grad();
  }
  BatchStats stats;
  for (std::size_t i = 0; i < n; ++i) {
    detail::add_grads(params, grads[i]);
    stats.pair_loss += losses[i];
    stats.mean_d_pos += d_pos[i];
    stats.mean_d_neg += d_neg[i];
  }
  stats.pair_loss *= scale;
  stats.mean_d_pos *= scale;
  stats.mean_d_neg *= scale;

  stats.penalty = constraint_penalty(model.metric);
  const Tensor reg = constraint_gradient(model.metric.weights, model.metric.lambda);
  auto gw = model.metric.weights.grad();
  for (std::size_t i = 0; i < gw.size(); ++i) {
    gw[i] += reg[i];
  }
  stats.loss = stats.pair_loss + stats.penalty;
  return stats;
}

inline std::vector<TripletImages> triplet_images(
  std::span<const TripletContext> batch, std::span<const ImageSample> samples)
{
  std::vector<TripletImages> out;
  out.reserve(batch.size());
  for (const auto & c : batch) {
    out.push_back({&samples[c.anchor], &samples[c.positive], &samples[c.negative]});
  }
  return out;
}

/// Augments the batch, computes the regularized loss gradient, clips and
/// applies one momentum-SGD update to the extractor and W jointly.
inline BatchStats train_step(
  std::span<const TripletContext> batch, std::span<const ImageSample> samples, Model & model,
  const TrainConfig & config, MomentumSgd & optimizer, double learning_rate, Rng & rng)
{
  if (batch.empty()) {
    throw TrainingError("empty training batch");
  }
  std::vector<ImageSample> storage;
  std::vector<TripletImages> images;
  if (config.translation > 0) {
    storage.reserve(3 * batch.size());
    for (const auto & c : batch) {
      storage.push_back(augment(samples[c.anchor], config.translation, rng));
      storage.push_back(augment(samples[c.positive], config.translation, rng));
      storage.push_back(augment(samples[c.negative], config.translation, rng));
    }
    for (std::size_t i = 0; i < batch.size(); ++i) {
      images.push_back({&storage[3 * i], &storage[3 * i + 1], &storage[3 * i + 2]});
    }
  } else {
    images = triplet_images(batch, samples);
  }

  BatchStats stats = triplet_gradients(images, model, config.margin, config.workers);
  if (!std::isfinite(stats.loss)) {
    std::ostringstream os;
    os << "training diverged: loss=" << stats.loss << " pair_loss=" << stats.pair_loss
       << " mean_d_pos=" << stats.mean_d_pos << " mean_d_neg=" << stats.mean_d_neg
       << " penalty=" << stats.penalty << " |W|_F="
       << std::sqrt(std::inner_product(
        model.metric.weights.data().begin(), model.metric.weights.data().end(),
        model.metric.weights.data().begin(), 0.0));
    throw DivergenceError(os.str());
  }
  const auto params = parameter_list(model);
  stats.clipped = clip_gradients(params, config.clip_norm);
  optimizer.step(params, learning_rate, config.momentum);
  return stats;
}

// ---------------------------------------------------------------------------
// full loop

struct EpochStats
{
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double mean_d_pos = 0.0;
  double mean_d_neg = 0.0;
  double penalty = 0.0;
};

struct FitResult
{
  std::vector<EpochStats> trace;
  std::optional<PretrainResult> pretrain;
  std::size_t clipped_steps = 0;
};

inline double learning_rate_at(const TrainConfig & config, std::size_t epoch)
{
  return config.learning_rate *
         std::pow(config.lr_decay, static_cast<double>(epoch / config.decay_every));
}

/// Optional softmax pre-training, then epochs of mined triplet batches.
/// Mining distances are refreshed at the start of every epoch.
inline FitResult fit(
  std::span<const ImageSample> samples, Model & model, const TrainConfig & config,
  const Logger & log = {})
{
  config.validate();
  if (model.config.tied_branches != config.tied_branches) {
    throw TrainingError("model branch tying does not match the training config");
  }
  FitResult result;
  if (config.pretrain.epochs > 0) {
    result.pretrain = pretrain_softmax(samples, model, config.pretrain, log);
  }
  model.metric.lambda = config.lambda;

  const TripletSampler sampler(samples);
  const std::size_t steps = config.steps_per_epoch > 0 ?
    config.steps_per_epoch :
    (sampler.anchors().size() + config.batch_size - 1) / config.batch_size;
  const bool mining = config.mining.positive_mining || config.mining.negative_mining;

  Rng rng(config.seed);
  MomentumSgd optimizer;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = learning_rate_at(config, epoch);
    const std::vector<Tensor> features =
      mining ? compute_features(samples, model, config.workers) : std::vector<Tensor>{};
    EpochStats stats;
    stats.epoch = epoch + 1;
    std::size_t clipped = 0;
    for (std::size_t s = 0; s < steps; ++s) {
      const auto batch = build_batch(
        sampler, samples, features, model.metric, config.mining, config.batch_size, rng);
      const BatchStats b = train_step(batch, samples, model, config, optimizer, lr, rng);
      stats.mean_loss += b.loss;
      stats.mean_d_pos += b.mean_d_pos;
      stats.mean_d_neg += b.mean_d_neg;
      clipped += b.clipped ? 1 : 0;
    }
    if (!model.metric.bias_is_zero()) {
      throw std::logic_error("metric bias left zero");
    }
    const double inv = 1.0 / static_cast<double>(steps);
    stats.mean_loss *= inv;
    stats.mean_d_pos *= inv;
    stats.mean_d_neg *= inv;
    stats.penalty = constraint_penalty(model.metric);
    result.trace.push_back(stats);
    result.clipped_steps += clipped;
    if (log) {
      std::ostringstream os;
      os << "epoch " << stats.epoch << " lr " << lr << " loss " << stats.mean_loss
         << " d_pos " << stats.mean_d_pos << " d_neg " << stats.mean_d_neg << " penalty "
         << stats.penalty;
      if (clipped) {
        os << " (gradient clipped in " << clipped << " steps)";
      }
      log(os.str());
    }
  }
  zero_grad(model);
  return result;
}

/// CSV `epoch,mean_loss,mean_d_pos,mean_d_neg,penalty`.
inline void write_loss_csv(const std::filesystem::path & path, std::span<const EpochStats> trace)
{
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out.precision(17);
  out << "epoch,mean_loss,mean_d_pos,mean_d_neg,penalty\n";
  for (const auto & e : trace) {
    out << e.epoch << ',' << e.mean_loss << ',' << e.mean_d_pos << ',' << e.mean_d_neg << ','
        << e.penalty << '\n';
  }
}

}  // namespace cdml

#endif  // CDML_TRAINING_HPP_
