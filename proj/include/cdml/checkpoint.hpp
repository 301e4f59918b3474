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

#ifndef CDML_CHECKPOINT_HPP_
#define CDML_CHECKPOINT_HPP_

// Binary layout (all integers and floats little-endian):
//
//   "CDML"            4 bytes magic
//   u32               format version (1)
//   u64               entry count
//   entry*            u32 name length, name bytes, u32 rank,
//                     u64 extents[rank], f64 payload[product(extents)]
//
// Entries: "config.extractor", "metric.lambda", "metric.weights",
// "metric.bias" and one "extractor.<name>" per extractor parameter.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <stdexcept>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "cdml/model.hpp"

namespace cdml
{

class CheckpointError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Wrong magic or unsupported version.
class CheckpointFormatError : public CheckpointError
{
public:
  using CheckpointError::CheckpointError;
};

/// Truncated or internally inconsistent file.
class CheckpointCorruptError : public CheckpointError
{
public:
  using CheckpointError::CheckpointError;
};

inline constexpr char kCheckpointMagic[4] = {'C', 'D', 'M', 'L'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail
{
template<typename T>
void put_le(std::vector<char> & out, T value)
{
  static_assert(std::is_trivially_copyable_v<T>);
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes, bytes + sizeof(T));
  }
  out.insert(out.end(), bytes, bytes + sizeof(T));
}

class Reader
{
public:
  explicit Reader(std::vector<char> bytes)
  : bytes_(std::move(bytes)) {}

  template<typename T>
  T get()
  {
    require(sizeof(T));
    char raw[sizeof(T)];
    std::memcpy(raw, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
      std::reverse(raw, raw + sizeof(T));
    }
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, raw, sizeof(T));
    return value;
  }

  std::string get_string(std::size_t n)
  {
    require(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const {return pos_ == bytes_.size();}

  void require(std::size_t n) const
  {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointCorruptError("checkpoint is truncated");
    }
  }

private:
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

inline std::vector<double> encode_config(const ExtractorConfig & c)
{
  std::vector<double> v{static_cast<double>(c.patch_size)};
  for (auto r : c.patch_rows) {
    v.push_back(static_cast<double>(r));
  }
  for (const auto & conv : c.convs) {
    v.push_back(static_cast<double>(conv.filters));
    v.push_back(static_cast<double>(conv.kernel));
    v.push_back(static_cast<double>(conv.stride));
  }
  v.push_back(static_cast<double>(c.hidden));
  v.push_back(static_cast<double>(c.output_dim));
  v.push_back(c.relu_after_conv ? 1.0 : 0.0);
  v.push_back(c.tied_branches ? 1.0 : 0.0);
  return v;
}

inline ExtractorConfig decode_config(std::span<const double> v)
{
  if (v.size() != 17) {
    throw CheckpointCorruptError("extractor config entry has the wrong length");
  }
  auto n = [&v](std::size_t i) {
      if (!(v[i] >= 0.0) || v[i] != std::floor(v[i])) {
        throw CheckpointCorruptError("extractor config entry holds a non-integer");
      }
      return static_cast<std::size_t>(v[i]);
    };
  ExtractorConfig c;
  c.patch_size = n(0);
  for (std::size_t b = 0; b < 3; ++b) {
    c.patch_rows[b] = n(1 + b);
  }
  for (std::size_t l = 0; l < 3; ++l) {
    c.convs[l] = {n(4 + 3 * l), n(5 + 3 * l), n(6 + 3 * l)};
  }
  c.hidden = n(13);
  c.output_dim = n(14);
  c.relu_after_conv = n(15) != 0;
  c.tied_branches = n(16) != 0;
  try {
    c.validate();
  } catch (const std::exception & e) {
    throw CheckpointCorruptError(std::string("stored extractor config is invalid: ") + e.what());
  }
  return c;
}

inline void put_entry(std::vector<char> & out, const std::string & name, const Tensor & t)
{
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out.insert(out.end(), name.begin(), name.end());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) {
    put_le<std::uint64_t>(out, e);
  }
  for (double v : t.data()) {
    put_le<double>(out, v);
  }
}
}  // namespace detail

inline std::vector<char> serialize_checkpoint(const Model & model)
{
  std::vector<char> out(kCheckpointMagic, kCheckpointMagic + 4);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);

  std::vector<std::pair<std::string, const Tensor *>> entries;
  const auto config = detail::encode_config(model.config);
  const Tensor config_tensor({config.size()}, config);
  const Tensor lambda({1}, std::vector<double>{model.metric.lambda});
  entries.emplace_back("config.extractor", &config_tensor);
  entries.emplace_back("metric.lambda", &lambda);
  entries.emplace_back("metric.weights", &model.metric.weights);
  entries.emplace_back("metric.bias", &model.metric.bias);
  for_each_parameter(
    model.params, [&entries](const std::string & name, const Tensor & t) {
      entries.emplace_back("extractor." + name, &t);
    });

  detail::put_le<std::uint64_t>(out, entries.size());
  for (const auto & [name, t] : entries) {
    detail::put_entry(out, name, *t);
  }
  return out;
}

inline Model deserialize_checkpoint(std::vector<char> bytes)
{
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw CheckpointFormatError("not a CDML checkpoint (bad magic)");
  }
  detail::Reader in(std::vector<char>(bytes.begin() + 4, bytes.end()));
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointFormatError(
            "unsupported checkpoint version " + std::to_string(version) + " (expected " +
            std::to_string(kCheckpointVersion) + ")");
  }
  const auto count = in.get<std::uint64_t>();
  std::map<std::string, Tensor> table;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = in.get<std::uint32_t>();
    std::string name = in.get_string(name_len);
    const auto rank = in.get<std::uint32_t>();
    if (rank == 0 || rank > 8) {
      throw CheckpointCorruptError("entry " + name + " has invalid rank");
    }
    Shape shape;
    std::size_t total = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      const auto e = in.get<std::uint64_t>();
      if (e == 0 || e > (std::uint64_t{1} << 32)) {
        throw CheckpointCorruptError("entry " + name + " has invalid extent");
      }
      shape.push_back(static_cast<std::size_t>(e));
      total *= static_cast<std::size_t>(e);
    }
    in.require(total * sizeof(double));
    std::vector<double> values(total);
    for (auto & v : values) {
      v = in.get<double>();
    }
    table.emplace(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (!in.at_end()) {
    throw CheckpointCorruptError("trailing bytes after the last entry");
  }

  auto take = [&table](const std::string & name) {
      auto it = table.find(name);
      if (it == table.end()) {
        throw CheckpointCorruptError("missing entry " + name);
      }
      Tensor t = std::move(it->second);
      table.erase(it);
      return t;
    };

  Model model;
  model.config = detail::decode_config(take("config.extractor").data());
  model.params = init_params(model.config, 0);
  for_each_parameter(
    model.params, [&take](const std::string & name, Tensor & t) {
      Tensor stored = take("extractor." + name);
      if (stored.shape() != t.shape()) {
        throw CheckpointCorruptError(
                "entry extractor." + name + " has shape " + shape_string(stored.shape()) +
                ", config expects " + shape_string(t.shape()));
      }
      t = std::move(stored);
    });
  const Tensor lambda = take("metric.lambda");
  Tensor weights = take("metric.weights");
  if (weights.shape() != Shape{model.config.output_dim, model.config.output_dim}) {
    throw CheckpointCorruptError("metric weights have shape " + shape_string(weights.shape()));
  }
  model.metric = MetricLayer::from_weights(std::move(weights), lambda[0]);
  model.metric.bias = take("metric.bias");
  if (model.metric.bias.shape() != Shape{model.config.output_dim}) {
    throw CheckpointCorruptError("metric bias has the wrong shape");
  }
  if (!table.empty()) {
    throw CheckpointCorruptError("unexpected entry " + table.begin()->first);
  }
  return model;
}

inline void save_checkpoint(const Model & model, const std::filesystem::path & path)
{
  const auto bytes = serialize_checkpoint(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw CheckpointError("cannot write checkpoint " + path.string());
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw CheckpointError("failed writing checkpoint " + path.string());
  }
}

inline Model load_checkpoint(const std::filesystem::path & path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw CheckpointError("cannot read checkpoint " + path.string());
  }
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(std::move(bytes));
}

}  // namespace cdml

#endif  // CDML_CHECKPOINT_HPP_
