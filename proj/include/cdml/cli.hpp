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

#ifndef CDML_CLI_HPP_
#define CDML_CLI_HPP_

// Command-line front end. Needs CLI11 on the include path.

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cdml/checkpoint.hpp"
#include "cdml/dataset.hpp"
#include "cdml/evaluation.hpp"
#include "cdml/image_io.hpp"
#include "cdml/metric.hpp"
#include "cdml/training.hpp"

namespace cdml::cli
{

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

inline constexpr const char * kCheckpointFile = "model.ckpt";

namespace detail
{
/// Remembers every bound option so the effective values can be echoed.
class Recorder
{
public:
  explicit Recorder(CLI::App * app)
  : app_(app) {}

  template<typename T>
  CLI::Option * add(const std::string & key, T & value, const std::string & help)
  {
    entries_.emplace_back(key, [&value]() {return format(value);});
    return app_->add_option("--" + key, value, help)->capture_default_str();
  }

  CLI::Option * flag(const std::string & key, bool & value, const std::string & help)
  {
    entries_.emplace_back(key, [&value]() {return std::string(value ? "true" : "false");});
    return app_->add_flag("--" + key, value, help);
  }

  void write(const std::filesystem::path & path) const
  {
    std::ofstream out(path);
    if (!out) {
      throw std::runtime_error("cannot write " + path.string());
    }
    out << "# effective configuration of `" << app_->get_name() << "`\n";
    for (const auto & [key, value] : entries_) {
      out << key << " = " << value() << '\n';
    }
  }

  CLI::App * app() const {return app_;}

private:
  template<typename T>
  static std::string format(const T & v)
  {
    if constexpr (std::is_floating_point_v<T>) {
      char buf[64];
      const auto end = std::to_chars(buf, buf + sizeof(buf), v).ptr;
      return std::string(buf, end);
    } else {
      std::ostringstream os;
      os << v;
      return os.str();
    }
  }

  CLI::App * app_;
  std::vector<std::pair<std::string, std::function<std::string()>>> entries_;
};

inline ExtractorConfig architecture(const std::string & name, bool tied)
{
  ExtractorConfig c;
  if (name == "compact") {
    c = ExtractorConfig::compact();
  } else if (name == "tiny") {
    c = ExtractorConfig::tiny();
  } else if (name != "standard") {
    throw CLI::ValidationError("--arch", "expected standard, compact or tiny");
  }
  c.tied_branches = tied;
  return c;
}

inline std::filesystem::path checkpoint_path(const std::filesystem::path & p)
{
  return std::filesystem::is_directory(p) ? p / kCheckpointFile : p;
}

struct DataSelection
{
  std::string dir;
  double train_fraction = 0.7;
  std::uint64_t split_seed = 0;

  void bind(Recorder & r)
  {
    r.add("data", dir, "dataset directory (<identity>_<camera>_<index>.png|ppm)")->required();
    r.add("train-fraction", train_fraction, "share of identities used for training")
    ->check(CLI::Range(0.0, 1.0));
    r.add("split-seed", split_seed, "seed of the identity-level train/test split");
  }

  std::vector<ImageSample> load(Split split, std::ostream & out) const
  {
    LoadReport report = load_dataset(dir);
    for (const auto & s : report.skipped) {
      out << "warning: skipped " << s << " (name does not match <identity>_<camera>_<index>)\n";
    }
    for (const auto & f : report.failed) {
      out << "warning: could not decode " << f << '\n';
    }
    assign_splits(report.dataset, {train_fraction, 0.0}, split_seed);
    auto samples = report.dataset.subset(split);
    if (samples.empty()) {
      throw DatasetError(std::string("the ") + split_name(split) + " split is empty");
    }
    return samples;
  }
};

inline RgbImage filter_grid(const Tensor & filters, std::size_t scale)
{
  const std::size_t count = filters.extent(0);
  const std::size_t channels = filters.extent(1);
  const std::size_t k = filters.extent(2);
  const std::size_t cols = std::min<std::size_t>(count, 8);
  const std::size_t rows = (count + cols - 1) / cols;
  const std::size_t cell = k * scale + 1;
  RgbImage img;
  img.width = cols * cell + 1;
  img.height = rows * cell + 1;
  img.pixels.assign(img.width * img.height * 3, 255);
  const std::size_t per_filter = channels * k * k;
  for (std::size_t f = 0; f < count; ++f) {
    const auto begin = filters.data().begin() + static_cast<std::ptrdiff_t>(f * per_filter);
    const auto [lo, hi] = std::minmax_element(begin, begin + static_cast<std::ptrdiff_t>(per_filter));
    const double range = *hi - *lo;
    const std::size_t ox = (f % cols) * cell + 1;
    const std::size_t oy = (f / cols) * cell + 1;
    for (std::size_t y = 0; y < k * scale; ++y) {
      for (std::size_t x = 0; x < k * scale; ++x) {
        for (std::size_t c = 0; c < 3; ++c) {
          const double v = filters.data()[f * per_filter + (std::min(c, channels - 1) * k + y / scale) * k + x / scale];
          const double t = range > 0.0 ? (v - *lo) / range : 0.5;
          img.pixels[((oy + y) * img.width + ox + x) * 3 + c] =
            static_cast<std::uint8_t>(std::lround(255.0 * t));
        }
      }
    }
  }
  return img;
}

// `key = value` lines become `--key=value` tokens placed before the
// command-line flags, so the command line wins under take-last.
inline std::vector<std::string> expand_config(const std::vector<std::string> & args)
{
  std::vector<std::string> out;
  std::vector<std::string> injected;
  for (std::size_t i = 0; i < args.size(); ++i) {
    std::string path;
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) {
        throw CLI::ArgumentMismatch("--config needs a file path");
      }
      path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      out.push_back(args[i]);
      continue;
    }
    for (const auto & [key, value] : load_key_value_config(path)) {
      if (key == "config") {
        throw CLI::ValidationError("--config", "config files cannot include other config files");
      }
      injected.push_back("--" + key + "=" + value);
    }
  }
  if (injected.empty() || out.empty()) {
    return out;
  }
  // out[0] is the subcommand.
  out.insert(out.begin() + 1, injected.begin(), injected.end());
  return out;
}
}  // namespace detail

/// Runs one invocation. `args` excludes the program name.
inline int run(const std::vector<std::string> & raw_args, std::ostream & out, std::ostream & err)
{
  CLI::App app{"Deep metric learning for person re-identification", "cdml"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "expand help for every subcommand");
  std::string config_path;
  auto add_config = [&config_path](CLI::App * sub) {
      sub->add_option("--config", config_path, "key = value file; flags override its entries");
    };
  std::function<void()> action;
  std::size_t workers = default_workers();
  auto add_workers = [&workers](detail::Recorder & r) {
      r.add("workers", workers, "parallel workers")->check(CLI::PositiveNumber);
    };

  // synth ------------------------------------------------------------------
  auto * synth = app.add_subcommand("synth", "generate a synthetic pedestrian dataset");
  detail::Recorder synth_r(synth);
  SynthSpec spec;
  std::string synth_out;
  bool no_palettes = false;
  synth_r.add("out", synth_out, "output directory")->required();
  synth_r.add("ids", spec.identities, "number of identities");
  synth_r.add("per-camera", spec.images_per_camera, "images per identity per camera");
  synth_r.add("cameras", spec.cameras, "number of cameras");
  synth_r.add("tint", spec.tint, "per-camera color shift magnitude");
  synth_r.add("jitter", spec.jitter, "translation jitter in pixels");
  synth_r.add("noise", spec.noise, "pixel noise standard deviation");
  synth_r.add("outlier-fraction", spec.outlier_fraction, "share of occluded images per identity");
  synth_r.flag("no-part-palettes", no_palettes, "draw all body parts from one color distribution");
  synth_r.add("seed", spec.seed, "generator seed");
  add_config(synth);
  synth->callback(
    [&]() {
      action = [&]() {
          spec.part_palettes = !no_palettes;
          const Dataset data = generate_synthetic(spec);
          write_dataset(data.samples, synth_out);
          synth_r.write(std::filesystem::path(synth_out) / "run.cfg");
          out << "wrote " << data.samples.size() << " images to " << synth_out << '\n';
        };
    });

  // shared model flags -------------------------------------------------------
  std::string arch = "compact";
  bool tied = false;

  // pretrain ---------------------------------------------------------------
  auto * pre = app.add_subcommand("pretrain", "softmax identity pre-training of the extractor");
  detail::Recorder pre_r(pre);
  detail::DataSelection pre_data;
  PretrainConfig pre_cfg;
  pre_cfg.epochs = 10;
  std::string pre_out;
  std::uint64_t pre_seed = 0;
  pre_r.add("out", pre_out, "output directory (model.ckpt, pretrain_loss.csv, run.cfg)")->required();
  pre_data.bind(pre_r);
  pre_r.add("arch", arch, "standard, compact or tiny");
  pre_r.flag("tied-branches", tied, "share one parameter set across the three branches");
  pre_r.add("epochs", pre_cfg.epochs, "training epochs");
  pre_r.add("lr", pre_cfg.learning_rate, "learning rate")->check(CLI::PositiveNumber);
  pre_r.add("momentum", pre_cfg.momentum, "momentum")->check(CLI::Range(0.0, 0.999999));
  pre_r.add("batch-size", pre_cfg.batch_size, "images per step")->check(CLI::PositiveNumber);
  pre_r.add("translation", pre_cfg.translation, "augmentation bound in pixels");
  pre_r.add("seed", pre_seed, "seed for initialization and sampling");
  add_workers(pre_r);
  add_config(pre);
  pre->callback(
    [&]() {
      action = [&]() {
          const auto samples = pre_data.load(Split::train, out);
          Model model = Model::create(detail::architecture(arch, tied), pre_seed);
          pre_cfg.seed = pre_seed;
          pre_cfg.workers = workers;
          const auto result = pretrain_softmax(
            samples, model, pre_cfg, [&out](const std::string & line) {out << line << '\n';});
          std::filesystem::create_directories(pre_out);
          save_checkpoint(model, std::filesystem::path(pre_out) / kCheckpointFile);
          std::ofstream csv(std::filesystem::path(pre_out) / "pretrain_loss.csv");
          csv.precision(17);
          csv << "epoch,cross_entropy\n0," << result.initial_loss << '\n';
          for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
            csv << (e + 1) << ',' << result.epoch_loss[e] << '\n';
          }
          pre_r.write(std::filesystem::path(pre_out) / "run.cfg");
          out << "training accuracy " << result.final_accuracy << '\n';
        };
    });

  // train ------------------------------------------------------------------
  auto * train = app.add_subcommand("train", "fine-tune extractor and metric jointly");
  detail::Recorder train_r(train);
  detail::DataSelection train_data;
  TrainConfig tc;
  std::string train_out;
  std::string init;
  double alpha = 0.0;
  double beta = kInfinity;
  bool adaptive = true;
  bool no_pos = false;
  bool no_neg = false;
  double margin = std::numeric_limits<double>::quiet_NaN();
  train_r.add("out", train_out, "output directory (model.ckpt, loss.csv, run.cfg)")->required();
  train_data.bind(train_r);
  train_r.add("init", init, "start from this checkpoint (e.g. a pretrain result)");
  train_r.add("arch", arch, "standard, compact or tiny (ignored with --init)");
  train_r.flag("tied-branches", tied, "share one parameter set across the three branches");
  train_r.add("epochs", tc.epochs, "training epochs");
  train_r.add("steps-per-epoch", tc.steps_per_epoch, "steps per epoch; 0 covers every anchor once");
  train_r.add("lr", tc.learning_rate, "initial learning rate")->check(CLI::PositiveNumber);
  train_r.add("lr-decay", tc.lr_decay, "learning rate factor per decay interval");
  train_r.add("decay-every", tc.decay_every, "decay interval in epochs")->check(CLI::PositiveNumber);
  train_r.add("momentum", tc.momentum, "momentum")->check(CLI::Range(0.0, 0.999999));
  train_r.add("batch-size", tc.batch_size, "anchors per step")->check(CLI::PositiveNumber);
  train_r.add("translation", tc.translation, "augmentation bound in pixels");
  train_r.add("lambda", tc.lambda, "weight of the W W^T = I penalty")->check(CLI::NonNegativeNumber);
  auto * alpha_opt = train_r.add("alpha", alpha, "lower moderation bound");
  auto * beta_opt = train_r.add("beta", beta, "upper moderation bound");
  auto * adaptive_opt = train_r.flag(
    "adaptive-mining", adaptive,
    "derive alpha/beta from each positive pool (default unless --alpha/--beta are given)");
  train_r.flag("no-positive-mining", no_pos, "draw positives uniformly");
  train_r.flag("no-negative-mining", no_neg, "draw negatives uniformly");
  train_r.add("negative-pool", tc.mining.negative_pool_size, "negatives sampled per anchor")
  ->check(CLI::PositiveNumber);
  train_r.add("margin", margin, "hinge clamp on d_pos - d_neg (off by default)");
  train_r.add("clip-norm", tc.clip_norm, "global gradient norm limit");
  train_r.add("pretrain-epochs", tc.pretrain.epochs, "softmax pre-training epochs before fine-tuning");
  train_r.add("seed", tc.seed, "seed for initialization and sampling");
  add_workers(train_r);
  add_config(train);
  train->callback(
    [&]() {
      action = [&]() {
          const auto samples = train_data.load(Split::train, out);
          Model model;
          if (!init.empty()) {
            model = load_checkpoint(detail::checkpoint_path(init));
            if (tied && !model.config.tied_branches) {
              throw TrainingError("--tied-branches conflicts with the untied --init checkpoint");
            }
            model.metric = MetricLayer::identity(model.config.output_dim, tc.lambda);
          } else {
            model = Model::create(detail::architecture(arch, tied), tc.seed, tc.lambda);
          }
          tc.tied_branches = model.config.tied_branches;
          tc.workers = workers;
          tc.pretrain.workers = workers;
          tc.pretrain.seed = tc.seed;
          tc.mining.positive_mining = !no_pos;
          tc.mining.negative_mining = !no_neg;
          const bool explicit_bounds = alpha_opt->count() > 0 || beta_opt->count() > 0;
          tc.mining.adaptive = adaptive_opt->count() > 0 ? adaptive : !explicit_bounds;
          tc.mining.alpha = alpha;
          tc.mining.beta = beta;
          if (!std::isnan(margin)) {
            tc.margin = margin;
          }
          const auto result = fit(
            samples, model, tc, [&out](const std::string & line) {out << line << '\n';});
          std::filesystem::create_directories(train_out);
          save_checkpoint(model, std::filesystem::path(train_out) / kCheckpointFile);
          write_loss_csv(std::filesystem::path(train_out) / "loss.csv", result.trace);
          train_r.write(std::filesystem::path(train_out) / "run.cfg");
          out << "wrote " << (std::filesystem::path(train_out) / kCheckpointFile).string() << '\n';
        };
    });

  // eval -------------------------------------------------------------------
  auto * eval = app.add_subcommand("eval", "single-shot CMC evaluation");
  detail::Recorder eval_r(eval);
  detail::DataSelection eval_data;
  std::string eval_ckpt;
  std::string eval_out;
  std::string eval_split = "test";
  std::uint64_t eval_seed = 0;
  eval_r.add("checkpoint", eval_ckpt, "checkpoint file or training output directory")->required();
  eval_r.add("out", eval_out, "output directory (cmc.csv, run.cfg)")->required();
  eval_data.bind(eval_r);
  eval_r.add("split", eval_split, "test, train or all")
  ->check(CLI::IsMember({"test", "train", "all"}));
  eval_r.add("seed", eval_seed, "seed of the gallery draw");
  add_workers(eval_r);
  add_config(eval);
  eval->callback(
    [&]() {
      action = [&]() {
          const Model model = load_checkpoint(detail::checkpoint_path(eval_ckpt));
          std::vector<ImageSample> samples;
          if (eval_split == "all") {
            eval_data.train_fraction = 0.0;
            samples = eval_data.load(Split::test, out);
          } else {
            samples = eval_data.load(eval_split == "test" ? Split::test : Split::train, out);
          }
          const CmcCurve curve = evaluate(samples, model, eval_seed, workers);
          std::filesystem::create_directories(eval_out);
          write_cmc_csv(std::filesystem::path(eval_out) / "cmc.csv", curve);
          eval_r.write(std::filesystem::path(eval_out) / "run.cfg");
          std::ostringstream os;
          os.precision(6);
          os << "rank-1 " << rank1(curve) << " (gallery " << curve.rates.size() << ")";
          out << os.str() << '\n';
        };
    });

  // spectrum ---------------------------------------------------------------
  auto * spec_cmd = app.add_subcommand("spectrum", "singular values of M = W W^T");
  detail::Recorder spec_r(spec_cmd);
  std::string spec_ckpt;
  std::string spec_out;
  spec_r.add("checkpoint", spec_ckpt, "checkpoint file or training output directory")->required();
  spec_r.add("out", spec_out, "CSV path")->required();
  add_config(spec_cmd);
  spec_cmd->callback(
    [&]() {
      action = [&]() {
          const Model model = load_checkpoint(detail::checkpoint_path(spec_ckpt));
          const auto values = spectrum(model.metric);
          const auto parent = std::filesystem::path(spec_out).parent_path();
          if (!parent.empty()) {
            std::filesystem::create_directories(parent);
          }
          write_spectrum_csv(spec_out, values);
          out << "max " << values.front() << " min " << values.back() << '\n';
        };
    });

  // export-filters ---------------------------------------------------------
  auto * filt = app.add_subcommand("export-filters", "first-layer filters as PNG grids");
  detail::Recorder filt_r(filt);
  std::string filt_ckpt;
  std::string filt_out;
  std::size_t filt_scale = 8;
  filt_r.add("checkpoint", filt_ckpt, "checkpoint file or training output directory")->required();
  filt_r.add("out", filt_out, "output directory")->required();
  filt_r.add("scale", filt_scale, "pixels per filter tap")->check(CLI::Range(1, 64));
  add_config(filt);
  filt->callback(
    [&]() {
      action = [&]() {
          const Model model = load_checkpoint(detail::checkpoint_path(filt_ckpt));
          std::filesystem::create_directories(filt_out);
          for (std::size_t b = 0; b < model.params.branches.size(); ++b) {
            const auto path = std::filesystem::path(filt_out) /
              ("branch" + std::to_string(b) + "_conv1.png");
            write_png(path, detail::filter_grid(model.params.branches[b].filters[0], filt_scale));
            out << "wrote " << path.string() << '\n';
          }
        };
    });

  try {
    auto args = detail::expand_config(raw_args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp &) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp &) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError & e) {
    err << "usage error: " << e.what() << '\n';
    err << "run with --help for usage\n";
    return kExitUsage;
  } catch (const std::exception & e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    action();
  } catch (const std::exception & e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace cdml::cli

#endif  // CDML_CLI_HPP_
