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

#ifndef CDML_DATASET_HPP_
#define CDML_DATASET_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <random>
#include <regex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cdml/image_io.hpp"
#include "cdml/sample.hpp"

namespace cdml
{

class DatasetError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

enum class Split { train, validation, test };

inline const char * split_name(Split s)
{
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "?";
}

/// Samples plus a split tag per identity. An identity belongs to exactly one
/// split, so no person appears on both sides of a train/test boundary.
struct Dataset
{
  std::vector<ImageSample> samples;
  std::map<int, Split> split_of;

  std::vector<int> identities() const
  {
    std::set<int> ids;
    for (const auto & s : samples) {
      ids.insert(s.identity);
    }
    return {ids.begin(), ids.end()};
  }

  std::vector<ImageSample> subset(Split split) const
  {
    std::vector<ImageSample> out;
    for (const auto & s : samples) {
      auto it = split_of.find(s.identity);
      if (it != split_of.end() && it->second == split) {
        out.push_back(s);
      }
    }
    return out;
  }
};

struct SplitFractions
{
  double train = 0.7;
  double validation = 0.0;
};

/// Shuffles identities with `seed` and tags the first round(train * n) as
/// train, the next round(validation * n) as validation, the rest as test.
inline void assign_splits(Dataset & data, SplitFractions fractions, std::uint64_t seed)
{
  if (fractions.train < 0.0 || fractions.validation < 0.0 ||
    fractions.train + fractions.validation > 1.0)
  {
    throw DatasetError("split fractions must be non-negative and sum to at most 1");
  }
  auto ids = data.identities();
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  const auto n = static_cast<double>(ids.size());
  const auto n_train = static_cast<std::size_t>(std::lround(fractions.train * n));
  const auto n_val = std::min(
    ids.size() - n_train, static_cast<std::size_t>(std::lround(fractions.validation * n)));
  data.split_of.clear();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    data.split_of[ids[i]] =
      i < n_train ? Split::train : (i < n_train + n_val ? Split::validation : Split::test);
  }
}

// ---------------------------------------------------------------------------
// key = value configuration files

using KeyValueList = std::vector<std::pair<std::string, std::string>>;

/// `key = value` lines; `#` starts a comment; blank lines are ignored.
inline KeyValueList parse_key_value_config(std::istream & in, const std::string & origin = "config")
{
  auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) {
        return std::string{};
      }
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
  KeyValueList out;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) {
      line.erase(hash);
    }
    line = trim(line);
    if (line.empty()) {
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw DatasetError(origin + ":" + std::to_string(number) + ": expected `key = value`");
    }
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) {
      throw DatasetError(origin + ":" + std::to_string(number) + ": empty key");
    }
    out.emplace_back(std::move(key), trim(line.substr(eq + 1)));
  }
  return out;
}

inline KeyValueList load_key_value_config(const std::filesystem::path & path)
{
  std::ifstream in(path);
  if (!in) {
    throw DatasetError("cannot read config file " + path.string());
  }
  return parse_key_value_config(in, path.string());
}

// ---------------------------------------------------------------------------
// synthetic pedestrians

/// Parameters of the procedural pedestrian generator.
struct SynthSpec
{
  std::size_t identities = 100;
  std::size_t images_per_camera = 3;
  std::size_t cameras = 2;
  double tint = 0.15;         // per-camera multiplicative color shift magnitude
  int jitter = 4;             // translation jitter in pixels (also varies body width)
  double noise = 0.02;        // per-pixel Gaussian noise sigma
  double outlier_fraction = 0.0;
  bool part_palettes = true;  // top/middle/bottom colors from different distributions
  std::uint64_t seed = 0;

  void validate() const
  {
    if (identities == 0 || images_per_camera == 0) {
      throw DatasetError("synthetic spec needs at least one identity and image");
    }
    if (cameras < 2) {
      throw DatasetError("synthetic spec needs at least two cameras");
    }
    if (!(outlier_fraction >= 0.0 && outlier_fraction <= 1.0)) {
      throw DatasetError("outlier_fraction must lie in [0, 1]");
    }
    if (tint < 0.0 || noise < 0.0 || jitter < 0) {
      throw DatasetError("tint, noise and jitter must be non-negative");
    }
  }
};

namespace detail
{
inline std::uint64_t splitmix64(std::uint64_t x)
{
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0)
{
  return std::mt19937_64(splitmix64(splitmix64(splitmix64(seed ^ 0xC0FFEEULL) + a) + b) + c);
}

using Rgb = std::array<double, 3>;

inline Rgb hsv(double h, double s, double v)
{
  h = std::fmod(h < 0.0 ? h + 360.0 : h, 360.0) / 60.0;
  const double c = v * s;
  const double x = c * (1.0 - std::abs(std::fmod(h, 2.0) - 1.0));
  const double m = v - c;
  Rgb rgb{};
  switch (static_cast<int>(h)) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  return {rgb[0] + m, rgb[1] + m, rgb[2] + m};
}

struct Appearance
{
  Rgb skin;
  std::array<Rgb, 3> parts;  // top, middle, bottom
};

inline Appearance identity_appearance(const SynthSpec & spec, int identity)
{
  auto rng = stream(spec.seed, 1, static_cast<std::uint64_t>(identity));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto span = [&](double lo, double hi) {return lo + (hi - lo) * u(rng);};
  Appearance a;
  a.skin = hsv(span(15, 35), span(0.3, 0.6), span(0.55, 0.95));
  if (spec.part_palettes) {
    a.parts[0] = hsv(span(-40, 80), span(0.55, 1.0), span(0.5, 1.0));   // warm tops
    a.parts[1] = hsv(span(170, 290), span(0.45, 1.0), span(0.3, 0.9));  // blue/violet
    a.parts[2] = hsv(span(0, 360), span(0.0, 0.5), span(0.55, 1.0));    // light legs
  } else {
    for (auto & p : a.parts) {
      p = hsv(span(0, 360), span(0.3, 1.0), span(0.3, 1.0));
    }
  }
  return a;
}

struct CameraLook
{
  Rgb gain;
  Rgb background;
};

inline CameraLook camera_look(const SynthSpec & spec, std::size_t camera)
{
  auto rng = stream(spec.seed, 2, camera);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  CameraLook look;
  const double brightness = 1.0 + 0.5 * spec.tint * u(rng);
  for (auto & g : look.gain) {
    g = brightness * (1.0 + spec.tint * u(rng));
  }
  const double level = 0.45 + 0.15 * u(rng);
  for (auto & b : look.background) {
    b = level + 0.05 * u(rng);
  }
  return look;
}

inline double quantize(double v)
{
  return static_cast<double>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0;
}
}  // namespace detail

/// Renders one identity/camera/index image. Occlusion paints a large
/// rectangle of unrelated color over part of the body.
inline ImageSample render_synthetic(
  const SynthSpec & spec, int identity, std::size_t camera, std::size_t index, bool occluded)
{
  using detail::Rgb;
  const auto look = detail::camera_look(spec, camera);
  const auto app = detail::identity_appearance(spec, identity);
  auto rng = detail::stream(
    spec.seed, 3, static_cast<std::uint64_t>(identity) * 64 + camera, index);
  std::uniform_int_distribution<int> shift(-spec.jitter, spec.jitter);
  const int dx = spec.jitter > 0 ? shift(rng) : 0;
  const int dy = spec.jitter > 0 ? shift(rng) : 0;
  const int widen = spec.jitter > 0 ? std::uniform_int_distribution<int>(-2, 2)(rng) : 0;

  ImageSample s;
  s.identity = identity;
  s.camera = static_cast<int>(camera);
  s.occluded = occluded;

  const int cx = 32 + dx;
  const int half = 14 + widen;
  auto body_color = [&](int y, int x) -> std::optional<Rgb> {
      const int yy = y - dy;
      const int off = x - cx;
      if (yy >= 6 && yy < 22) {
        const double ey = (yy - 14.0) / 8.0;
        const double ex = off / 6.5;
        if (ex * ex + ey * ey <= 1.0) {
          return app.skin;
        }
        return std::nullopt;
      }
      if (yy >= 22 && yy < 60 && std::abs(off) <= half) {
        return app.parts[0];
      }
      if (yy >= 60 && yy < 86 && std::abs(off) <= half - 1) {
        return app.parts[1];
      }
      if (yy >= 86 && yy < 124 && std::abs(off) <= half - 3 && std::abs(off) >= 2) {
        return app.parts[2];
      }
      return std::nullopt;
    };

  int occ_top = 0, occ_bottom = 0, occ_left = 0, occ_right = 0;
  Rgb occ_color{};
  if (occluded) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int height = 45 + static_cast<int>(30 * u(rng));
    occ_top = 20 + static_cast<int>((100 - height) * u(rng));
    occ_bottom = occ_top + height;
    occ_left = cx - half - 6;
    occ_right = cx + half + 6;
    occ_color = detail::hsv(360.0 * u(rng), 0.2 + 0.6 * u(rng), 0.15 + 0.7 * u(rng));
  }

  std::normal_distribution<double> noise(0.0, spec.noise > 0.0 ? spec.noise : 1.0);
  for (std::size_t y = 0; y < kImageHeight; ++y) {
    for (std::size_t x = 0; x < kImageWidth; ++x) {
      const int iy = static_cast<int>(y);
      const int ix = static_cast<int>(x);
      Rgb color;
      if (occluded && iy >= occ_top && iy < occ_bottom && ix >= occ_left && ix < occ_right) {
        color = occ_color;
      } else if (auto body = body_color(iy, ix)) {
        color = *body;
      } else {
        const double shade = 1.0 - 0.15 * static_cast<double>(y) / kImageHeight;
        color = {look.background[0] * shade, look.background[1] * shade,
          look.background[2] * shade};
      }
      for (std::size_t c = 0; c < 3; ++c) {
        double v = color[c] * look.gain[c];
        if (spec.noise > 0.0) {
          v += noise(rng);
        }
        s.pixels.at(c, y, x) = detail::quantize(v);
      }
    }
  }
  return s;
}

/// Deterministic synthetic dataset; samples ordered by identity, camera, index.
inline Dataset generate_synthetic(const SynthSpec & spec)
{
  spec.validate();
  Dataset data;
  const std::size_t per_identity = spec.images_per_camera * spec.cameras;
  const auto n_outliers = static_cast<std::size_t>(
    std::lround(spec.outlier_fraction * static_cast<double>(per_identity)));
  for (std::size_t id = 0; id < spec.identities; ++id) {
    std::vector<bool> flags(per_identity, false);
    std::fill(flags.begin(), flags.begin() + static_cast<std::ptrdiff_t>(n_outliers), true);
    auto rng = detail::stream(spec.seed, 4, id);
    std::shuffle(flags.begin(), flags.end(), rng);
    for (std::size_t cam = 0; cam < spec.cameras; ++cam) {
      for (std::size_t k = 0; k < spec.images_per_camera; ++k) {
        data.samples.push_back(
          render_synthetic(
            spec, static_cast<int>(id), cam, k, flags[cam * spec.images_per_camera + k]));
      }
    }
  }
  return data;
}

// ---------------------------------------------------------------------------
// on-disk datasets: <identity>_<camera>_<index>.<png|ppm>

struct SampleName
{
  int identity;
  int camera;
  int index;
  std::string extension;
};

inline std::optional<SampleName> parse_sample_name(const std::string & filename)
{
  static const std::regex pattern(R"(^(\d+)_(\d+)_(\d+)\.(png|ppm|PNG|PPM)$)");
  std::smatch m;
  if (!std::regex_match(filename, m, pattern)) {
    return std::nullopt;
  }
  try {
    std::string ext = m[4].str();
    std::transform(ext.begin(), ext.end(), ext.begin(),
      [](unsigned char c) {return static_cast<char>(std::tolower(c));});
    return SampleName{std::stoi(m[1].str()), std::stoi(m[2].str()), std::stoi(m[3].str()), ext};
  } catch (const std::out_of_range &) {
    return std::nullopt;
  }
}

inline std::string sample_file_name(int identity, int camera, int index)
{
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%04d_%d_%02d.png", identity, camera, index);
  return buf;
}

struct LoadReport
{
  Dataset dataset;
  std::vector<std::string> skipped;  // names not matching the convention
  std::vector<std::string> failed;   // "file: reason" for undecodable files
};

/// Loads every conforming image under `root` (sorted by file name),
/// resampled to 3x128x64. Bad files are reported, not fatal.
inline LoadReport load_dataset(const std::filesystem::path & root)
{
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) {
    throw DatasetError(root.string() + " is not a directory");
  }
  std::vector<fs::path> files;
  for (const auto & entry : fs::directory_iterator(root)) {
    if (entry.is_regular_file()) {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());

  LoadReport report;
  for (const auto & path : files) {
    const std::string name = path.filename().string();
    const auto parsed = parse_sample_name(name);
    if (!parsed) {
      // Sidecar artifacts written next to the images are expected.
      if (path.extension() != ".cfg") {
        report.skipped.push_back(name);
      }
      continue;
    }
    try {
      const RgbImage img = parsed->extension == "png" ? read_png(path) : read_ppm(path);
      ImageSample s;
      s.pixels = to_tensor(img, kImageHeight, kImageWidth);
      s.identity = parsed->identity;
      s.camera = parsed->camera;
      s.source = name;
      report.dataset.samples.push_back(std::move(s));
    } catch (const std::exception & e) {
      report.failed.push_back(name + ": " + e.what());
    }
  }
  if (report.dataset.samples.empty()) {
    throw DatasetError("no loadable images in " + root.string());
  }
  return report;
}

/// Writes samples as PNG files following the naming convention; indices
/// count images per (identity, camera) in sample order.
inline void write_dataset(const std::vector<ImageSample> & samples, const std::filesystem::path & dir)
{
  std::filesystem::create_directories(dir);
  std::map<std::pair<int, int>, int> counters;
  for (const auto & s : samples) {
    const int index = counters[{s.identity, s.camera}]++;
    write_png(dir / sample_file_name(s.identity, s.camera, index), to_rgb(s.pixels));
  }
}

}  // namespace cdml

#endif  // CDML_DATASET_HPP_
