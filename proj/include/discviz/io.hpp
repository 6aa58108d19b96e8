// Copyright 2026 The discviz Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// FTC1 tensor container, feature-map resampling and dataset manifests.
//
// Container layout (all integers little-endian):
//   bytes 0..3   magic "FTC1"
//   byte  4      dtype: 0 = float32, 1 = float64
//   byte  5      ndim
//   bytes 6..7   reserved, zero
//   8 * ndim     dims as uint64
//   payload      row-major values

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "discviz/numutil.hpp"
#include "discviz/region_embed.hpp"
#include "json.hpp"

namespace discviz {

enum class Dtype : std::uint8_t { F32 = 0, F64 = 1 };

inline std::size_t dtype_size(Dtype t) { return t == Dtype::F32 ? 4 : 8; }

/// N-d array held in double precision. Values of an F32 tensor are exactly
/// representable as float.
struct Tensor {
  Dtype dtype = Dtype::F64;
  std::vector<std::uint64_t> dims;
  std::vector<double> values;

  std::uint64_t element_count() const {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

namespace detail {

inline constexpr char kTensorMagic[4] = {'F', 'T', 'C', '1'};
inline constexpr std::size_t kTensorHeaderSize = 8;

inline void put_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint64_t get_le(const std::string& in, std::size_t pos, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  return v;
}

}  // namespace detail

/// Serialize to container bytes. Identical tensors give identical bytes.
inline std::string encode_tensor(const Tensor& t) {
  if (t.dims.size() > 255) throw DomainError("io", "tensor has more than 255 dimensions");
  if (t.element_count() != t.values.size()) {
    throw DimensionError("io", "tensor value count differs from the product of its dims");
  }
  std::string out(detail::kTensorMagic, 4);
  out.push_back(static_cast<char>(t.dtype));
  out.push_back(static_cast<char>(t.dims.size()));
  out.push_back('\0');
  out.push_back('\0');
  for (auto d : t.dims) detail::put_le(out, d, 8);
  out.reserve(out.size() + t.values.size() * dtype_size(t.dtype));
  for (double v : t.values) {
    if (!std::isfinite(v)) throw DomainError("io", "tensor values must be finite");
    if (t.dtype == Dtype::F32) {
      const auto f = static_cast<float>(v);
      if (static_cast<double>(f) != v) throw DomainError("io", "value is not representable as float32");
      detail::put_le(out, std::bit_cast<std::uint32_t>(f), 4);
    } else {
      detail::put_le(out, std::bit_cast<std::uint64_t>(v), 8);
    }
  }
  return out;
}

/// Parse container bytes.
inline Tensor decode_tensor(const std::string& bytes) {
  if (bytes.size() < 4) throw FormatError("truncated header: missing magic", bytes.size());
  for (std::size_t i = 0; i < 4; ++i) {
    if (bytes[i] != detail::kTensorMagic[i]) throw FormatError("bad magic, expected \"FTC1\"", i);
  }
  if (bytes.size() < detail::kTensorHeaderSize) throw FormatError("truncated header", bytes.size());
  Tensor t;
  const auto code = static_cast<unsigned char>(bytes[4]);
  if (code > 1) throw FormatError("unknown dtype code " + std::to_string(code), 4);
  t.dtype = static_cast<Dtype>(code);
  const auto ndim = static_cast<unsigned char>(bytes[5]);
  for (std::size_t i = 6; i < 8; ++i) {
    if (bytes[i] != '\0') throw FormatError("reserved header byte is not zero", i);
  }
  std::size_t pos = detail::kTensorHeaderSize;
  if (bytes.size() < pos + 8u * ndim) throw FormatError("truncated dims", bytes.size());
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() / dtype_size(t.dtype);
  std::uint64_t count = 1;
  for (unsigned i = 0; i < ndim; ++i) {
    const std::uint64_t d = detail::get_le(bytes, pos, 8);
    if (d != 0 && count > limit / d) throw FormatError("dims overflow the addressable payload size", pos);
    count *= d;
    t.dims.push_back(d);
    pos += 8;
  }
  const std::uint64_t payload = count * dtype_size(t.dtype);
  const std::uint64_t available = bytes.size() - pos;
  if (payload > available) throw FormatError("truncated payload", bytes.size());
  if (payload < available) throw FormatError("trailing bytes after payload", pos + payload);
  t.values.resize(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < t.values.size(); ++i) {
    if (t.dtype == Dtype::F32) {
      t.values[i] = std::bit_cast<float>(static_cast<std::uint32_t>(detail::get_le(bytes, pos, 4)));
      pos += 4;
    } else {
      t.values[i] = std::bit_cast<double>(detail::get_le(bytes, pos, 8));
      pos += 8;
    }
  }
  return t;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

inline Tensor read_tensor(const std::filesystem::path& path) { return decode_tensor(read_file(path)); }

inline void write_tensor(const std::filesystem::path& path, const Tensor& t) { write_file(path, encode_tensor(t)); }

inline Tensor tensor_from_vector(const Vector& v, Dtype dtype = Dtype::F64) {
  Tensor t{dtype, {static_cast<std::uint64_t>(v.size())}, std::vector<double>(v.data(), v.data() + v.size())};
  if (dtype == Dtype::F32) {
    for (double& x : t.values) x = static_cast<float>(x);
  }
  return t;
}

inline Vector tensor_to_vector(const Tensor& t, const std::string& what) {
  if (t.dims.size() != 1) throw DimensionError("io", what + " must be a 1-d tensor");
  return Eigen::Map<const Vector>(t.values.data(), static_cast<Eigen::Index>(t.values.size()));
}

/// Row-major 2-d tensor.
inline Tensor tensor_from_matrix(const Matrix& m, Dtype dtype = Dtype::F64) {
  Tensor t{dtype, {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())}, {}};
  t.values.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      t.values.push_back(dtype == Dtype::F32 ? static_cast<float>(m(i, j)) : m(i, j));
    }
  }
  return t;
}

inline Matrix tensor_to_matrix(const Tensor& t, const std::string& what) {
  if (t.dims.size() != 2) throw DimensionError("io", what + " must be a 2-d tensor");
  Matrix m(static_cast<Eigen::Index>(t.dims[0]), static_cast<Eigen::Index>(t.dims[1]));
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = t.values[k++];
  }
  return m;
}

/// K x H x W tensor of a feature map.
inline Tensor tensor_from_fmap(const RegionalFeatureMap& fmap, Dtype dtype = Dtype::F64) {
  Tensor t{dtype,
           {static_cast<std::uint64_t>(fmap.channels), static_cast<std::uint64_t>(fmap.height),
            static_cast<std::uint64_t>(fmap.width)},
           fmap.to_chw()};
  if (dtype == Dtype::F32) {
    for (double& x : t.values) x = static_cast<float>(x);
  }
  return t;
}

inline RegionalFeatureMap tensor_to_fmap(const Tensor& t, const std::string& what) {
  if (t.dims.size() != 3) throw DimensionError("io", what + " must be a K x H x W tensor");
  for (auto d : t.dims) {
    if (d == 0 || d > static_cast<std::uint64_t>(std::numeric_limits<int>::max())) {
      throw DimensionError("io", what + " has an empty or oversized dimension");
    }
  }
  return RegionalFeatureMap::from_chw(t.values, static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]),
                                      static_cast<int>(t.dims[2]));
}

/// Average-pool a feature map to h x w. Without `adaptive`, H and W must be
/// multiples of h and w; with it, output cell i covers input rows
/// [floor(i H / h), ceil((i + 1) H / h)), and likewise for columns.
inline RegionalFeatureMap downsample_fmap(const RegionalFeatureMap& fmap, int h, int w, bool adaptive = false) {
  fmap.validate();
  if (h < 1 || w < 1 || h > fmap.height || w > fmap.width) {
    throw SizeError("io", "downsample target " + std::to_string(h) + "x" + std::to_string(w) +
                              " must be nonempty and no larger than " + std::to_string(fmap.height) + "x" +
                              std::to_string(fmap.width));
  }
  if (!adaptive && (fmap.height % h != 0 || fmap.width % w != 0)) {
    throw SizeError("io", "cannot pool " + std::to_string(fmap.height) + "x" + std::to_string(fmap.width) +
                              " to " + std::to_string(h) + "x" + std::to_string(w) +
                              " with equal windows; enable adaptive pooling");
  }
  RegionalFeatureMap out{fmap.channels, h, w, Matrix::Zero(static_cast<Eigen::Index>(h) * w, fmap.channels)};
  for (int i = 0; i < h; ++i) {
    const int r0 = i * fmap.height / h;
    const int r1 = ((i + 1) * fmap.height + h - 1) / h;
    for (int j = 0; j < w; ++j) {
      const int c0 = j * fmap.width / w;
      const int c1 = ((j + 1) * fmap.width + w - 1) / w;
      Vector acc = Vector::Zero(fmap.channels);
      for (int r = r0; r < r1; ++r) {
        for (int c = c0; c < c1; ++c) acc += fmap.regions.row(r * fmap.width + c).transpose();
      }
      out.regions.row(i * w + j) = acc.transpose() / static_cast<double>((r1 - r0) * (c1 - c0));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Datasets and manifests.

struct DatasetSample {
  std::string id;
  int label = 0;
  Vector feature;
  Vector logits;
  /// One feature map per dataset layer, in layer order; empty when not loaded.
  std::vector<RegionalFeatureMap> layers;
};

struct Dataset {
  std::string name;
  std::vector<std::string> categories;
  std::vector<std::string> layers;  // forward order
  std::vector<DatasetSample> samples;

  std::size_t layer_index(const std::string& layer) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i] == layer) return i;
    }
    throw ManifestError("dataset '" + name + "' has no layer '" + layer + "'");
  }
};

struct ManifestSample {
  std::string id;
  int label = 0;
  std::filesystem::path feature;
  std::filesystem::path logits;
  std::map<std::string, std::filesystem::path> layers;
};

/// Parsed manifest with paths resolved against the manifest's directory.
struct Manifest {
  std::filesystem::path path;
  std::string name;
  std::vector<std::string> categories;
  std::vector<std::string> layers;
  std::vector<ManifestSample> samples;
};

inline Manifest parse_manifest(const nlohmann::json& doc, const std::filesystem::path& base) {
  using nlohmann::json;
  auto require = [](const json& obj, const char* key, const std::string& where) -> const json& {
    if (!obj.is_object() || !obj.contains(key)) throw ManifestError(where + ": missing field '" + key + "'");
    return obj.at(key);
  };
  Manifest m;
  try {
    m.name = require(doc, "name", "manifest").get<std::string>();
    m.categories = require(doc, "categories", "manifest").get<std::vector<std::string>>();
    m.layers = doc.value("layers", std::vector<std::string>{});
    if (m.categories.empty()) throw ManifestError("manifest: category list is empty");
    std::map<std::string, bool> seen;
    for (const auto& s : require(doc, "samples", "manifest")) {
      ManifestSample ms;
      ms.id = require(s, "id", "sample").get<std::string>();
      const std::string where = "sample '" + ms.id + "'";
      if (seen[ms.id]) throw ManifestError(where + ": duplicate id");
      seen[ms.id] = true;
      const json& label = require(s, "label", where);
      if (label.is_string()) {
        const auto it = std::find(m.categories.begin(), m.categories.end(), label.get<std::string>());
        if (it == m.categories.end()) throw ManifestError(where + ": unknown category '" + label.get<std::string>() + "'");
        ms.label = static_cast<int>(it - m.categories.begin());
      } else {
        ms.label = label.get<int>();
      }
      if (ms.label < 0 || ms.label >= static_cast<int>(m.categories.size())) {
        throw ManifestError(where + ": label " + std::to_string(ms.label) + " is outside the category list");
      }
      ms.feature = base / require(s, "feature", where).get<std::string>();
      ms.logits = base / require(s, "logits", where).get<std::string>();
      if (s.contains("layers")) {
        for (const auto& [layer, p] : s.at("layers").items()) {
          if (std::find(m.layers.begin(), m.layers.end(), layer) == m.layers.end()) {
            throw ManifestError(where + ": layer '" + layer + "' is not in the manifest layer list");
          }
          ms.layers[layer] = base / p.get<std::string>();
        }
      }
      m.samples.push_back(std::move(ms));
    }
  } catch (const json::exception& e) {
    throw ManifestError(std::string("manifest: ") + e.what());
  }
  return m;
}

inline Manifest read_manifest(const std::filesystem::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
  auto m = parse_manifest(doc, path.parent_path());
  m.path = path;
  return m;
}

/// Load the tensors a manifest references. `layers` selects which layers to
/// read (all manifest layers when empty); pass `with_layers = false` to read
/// features and logits only.
inline Dataset load_dataset(const Manifest& m, bool with_layers = true, std::vector<std::string> layers = {}) {
  if (layers.empty()) layers = m.layers;
  for (const auto& l : layers) {
    if (std::find(m.layers.begin(), m.layers.end(), l) == m.layers.end()) {
      throw ManifestError("manifest '" + m.name + "' has no layer '" + l + "'");
    }
  }
  Dataset d{m.name, m.categories, with_layers ? layers : std::vector<std::string>{}, {}};
  auto load = [](const std::filesystem::path& p, const std::string& id, const std::string& what) {
    if (!std::filesystem::exists(p)) {
      throw ManifestError("sample '" + id + "': " + what + " file '" + p.string() + "' does not exist");
    }
    try {
      return read_tensor(p);
    } catch (const FormatError& e) {
      throw ManifestError("sample '" + id + "': " + what + " file '" + p.string() + "': " + e.what());
    }
  };
  for (const auto& s : m.samples) {
    DatasetSample ds;
    ds.id = s.id;
    ds.label = s.label;
    ds.feature = tensor_to_vector(load(s.feature, s.id, "feature"), "feature of sample '" + s.id + "'");
    ds.logits = tensor_to_vector(load(s.logits, s.id, "logits"), "logits of sample '" + s.id + "'");
    if (ds.logits.size() != static_cast<Eigen::Index>(m.categories.size())) {
      throw ManifestError("sample '" + s.id + "': logit count differs from the category count");
    }
    if (with_layers) {
      for (const auto& l : layers) {
        const auto it = s.layers.find(l);
        if (it == s.layers.end()) throw ManifestError("sample '" + s.id + "': no file for layer '" + l + "'");
        ds.layers.push_back(tensor_to_fmap(load(it->second, s.id, "layer '" + l + "'"),
                                           "layer '" + l + "' of sample '" + s.id + "'"));
      }
    }
    if (!d.samples.empty() && d.samples.front().feature.size() != ds.feature.size()) {
      throw ManifestError("sample '" + s.id + "': feature dimension differs from other samples");
    }
    d.samples.push_back(std::move(ds));
  }
  return d;
}

/// Write tensors under `dir/tensors/` and `dir/manifest.json`; returns the
/// manifest path.
inline std::filesystem::path write_dataset(const std::filesystem::path& dir, const Dataset& d,
                                           Dtype dtype = Dtype::F64) {
  namespace fs = std::filesystem;
  nlohmann::ordered_json doc;
  doc["name"] = d.name;
  doc["categories"] = d.categories;
  doc["layers"] = d.layers;
  doc["samples"] = nlohmann::ordered_json::array();
  for (const auto& s : d.samples) {
    if (s.layers.size() != d.layers.size()) throw DimensionError("io", "sample '" + s.id + "' lacks layer maps");
    nlohmann::ordered_json js;
    js["id"] = s.id;
    js["label"] = s.label;
    const fs::path feature = fs::path("tensors") / (s.id + ".feature.ftc");
    const fs::path logits = fs::path("tensors") / (s.id + ".logits.ftc");
    write_tensor(dir / feature, tensor_from_vector(s.feature, dtype));
    write_tensor(dir / logits, tensor_from_vector(s.logits, dtype));
    js["feature"] = feature.generic_string();
    js["logits"] = logits.generic_string();
    js["layers"] = nlohmann::ordered_json::object();
    for (std::size_t l = 0; l < d.layers.size(); ++l) {
      const fs::path p = fs::path("tensors") / (s.id + "." + d.layers[l] + ".ftc");
      write_tensor(dir / p, tensor_from_fmap(s.layers[l], dtype));
      js["layers"][d.layers[l]] = p.generic_string();
    }
    doc["samples"].push_back(std::move(js));
  }
  const fs::path manifest = dir / "manifest.json";
  write_file(manifest, doc.dump(2) + "\n");
  return manifest;
}

}  // namespace discviz
