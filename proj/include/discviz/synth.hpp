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

// Synthetic datasets with known ground truth: category directions, a signal
// mask over the spatial grid and a linear head that produces the logits.

#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "discviz/importance.hpp"
#include "discviz/io.hpp"
#include "discviz/numutil.hpp"
#include "discviz/sample_embed.hpp"

namespace discviz {

struct SynthLayer {
  std::string name;
  /// Multiplier on the signal strength of mask cells.
  double signal_scale = 1.0;
  /// Standard deviation of the isotropic noise in every cell.
  double noise = 0.3;
};

struct SynthSpec {
  std::string name = "synthetic";
  int categories = 10;
  int dim = 64;  // raw sample feature dimension
  int channels = 16;
  int height = 3;
  int width = 3;
  /// Concentration of the orientation around the category direction;
  /// infinity puts features exactly on it.
  double kappa_true = 50.0;
  double strength_min = 0.5;
  double strength_max = 6.0;
  /// Isotropic noise added to sample features.
  double sigma = 0.1;
  Matrix directions;         // C x dim, unit rows
  Matrix region_directions;  // C x channels, unit rows
  std::vector<int> mask;     // height * width flags, 1 = signal cell
  Matrix head;               // C x dim, sample logits = head * f
  LinearHead region_head;    // over the spatial mean of a feature map
  std::vector<SynthLayer> layers{{"conv1", 0.25, 0.3}, {"conv2", 0.5, 0.3}, {"conv3", 1.0, 0.3}};

  void validate() const {
    if (categories < 2 || dim < 1 || channels < 1 || height < 1 || width < 1) {
      throw ConfigError("synth", "categories must be >= 2 and all dimensions positive");
    }
    if (!(kappa_true > 0.0)) throw ConfigError("synth", "kappa_true must be positive");
    if (!(strength_min >= 0.0) || !(strength_max >= strength_min) || !std::isfinite(strength_max)) {
      throw ConfigError("synth", "strength range must satisfy 0 <= min <= max < inf");
    }
    if (!(sigma >= 0.0)) throw ConfigError("synth", "sigma must be nonnegative");
    auto check_unit = [&](const Matrix& m, Eigen::Index cols, const char* what) {
      if (m.rows() != categories || m.cols() != cols) {
        throw ConfigError("synth", std::string(what) + " has the wrong shape");
      }
      for (Eigen::Index y = 0; y < m.rows(); ++y) {
        if (std::abs(m.row(y).norm() - 1.0) > 1e-9) throw ConfigError("synth", std::string(what) + " rows must be unit");
      }
    };
    check_unit(directions, dim, "directions");
    check_unit(region_directions, channels, "region_directions");
    if (mask.size() != static_cast<std::size_t>(height) * width) {
      throw ConfigError("synth", "mask must have height * width entries");
    }
    bool any = false;
    for (int m : mask) {
      if (m != 0 && m != 1) throw ConfigError("synth", "mask entries must be 0 or 1");
      any = any || m == 1;
    }
    if (!any) throw ConfigError("synth", "mask must contain at least one signal cell");
    if (head.rows() != categories || head.cols() != dim) throw ConfigError("synth", "head must be C x dim");
    if (region_head.weights.rows() != categories || region_head.weights.cols() != channels ||
        region_head.bias.size() != categories) {
      throw ConfigError("synth", "region head must be C x channels with C biases");
    }
    if (layers.empty()) throw ConfigError("synth", "at least one layer is required");
    for (const auto& l : layers) {
      if (l.name.empty() || !(l.signal_scale >= 0.0) || !(l.noise >= 0.0)) {
        throw ConfigError("synth", "layers need a name and nonnegative scales");
      }
    }
  }
};

namespace detail {

inline Matrix random_unit_rows(int rows, int cols, Rng& rng) {
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) m.row(i) = rng.unit_vector(cols).transpose();
  return m;
}

}  // namespace detail

/// A spec with random category directions, heads proportional to the
/// directions (`head_scale`), and the given signal mask.
inline SynthSpec make_synth_spec(int categories, int dim, int channels, int height, int width,
                                 std::vector<int> mask, double head_scale, Rng& rng) {
  SynthSpec s;
  s.categories = categories;
  s.dim = dim;
  s.channels = channels;
  s.height = height;
  s.width = width;
  s.directions = detail::random_unit_rows(categories, dim, rng);
  s.region_directions = detail::random_unit_rows(categories, channels, rng);
  s.mask = std::move(mask);
  s.head = head_scale * s.directions;
  s.region_head.weights = head_scale * s.region_directions;
  s.region_head.bias = Vector::Zero(categories);
  s.region_head.output = HeadOutput::Probability;
  s.validate();
  return s;
}

namespace detail {

inline Vector synth_orientation(const Vector& mu, double kappa, Rng& rng) {
  if (std::isinf(kappa)) return mu;
  return sample_vmf(mu, kappa, rng);
}

inline double synth_strength(const SynthSpec& spec, Rng& rng) {
  return spec.strength_min + (spec.strength_max - spec.strength_min) * rng.uniform();
}

inline Vector noise(Eigen::Index dim, double sigma, Rng& rng) {
  if (sigma == 0.0) return Vector::Zero(dim);
  return sigma * rng.normal_vector(static_cast<int>(dim));
}

// Signal cells: strength * scale * vMF(nu_label) plus noise; other cells:
// noise only.
inline RegionalFeatureMap synth_fmap(const SynthSpec& spec, int label, double scale, double noise_sigma, Rng& rng) {
  RegionalFeatureMap m{spec.channels, spec.height, spec.width,
                       Matrix::Zero(static_cast<Eigen::Index>(spec.height) * spec.width, spec.channels)};
  const Vector nu = spec.region_directions.row(label).transpose();
  for (Eigen::Index r = 0; r < m.regions.rows(); ++r) {
    Vector f = noise(spec.channels, noise_sigma, rng);
    if (spec.mask[static_cast<std::size_t>(r)] == 1) {
      f += scale * synth_strength(spec, rng) * synth_orientation(nu, spec.kappa_true, rng);
    }
    m.regions.row(r) = f.transpose();
  }
  return m;
}

}  // namespace detail

/// Features l * vMF(mu_label, kappa_true) + N(0, sigma^2 I), l uniform on the
/// strength range, labels uniform, logits = head * f.
inline SampleBatch gen_sample_batch(const SynthSpec& spec, int n, Rng& rng) {
  spec.validate();
  if (n < spec.categories) throw ConfigError("synth", "n must be at least the number of categories");
  SampleBatch b;
  b.features.resize(n, spec.dim);
  b.logits.resize(n, spec.categories);
  for (int i = 0; i < n; ++i) {
    const int y = static_cast<int>(rng.index(static_cast<std::size_t>(spec.categories)));
    const double l = detail::synth_strength(spec, rng);
    const Vector f = l * detail::synth_orientation(spec.directions.row(y).transpose(), spec.kappa_true, rng) +
                     detail::noise(spec.dim, spec.sigma, rng);
    b.features.row(i) = f.transpose();
    b.logits.row(i) = (spec.head * f).transpose();
    b.labels.push_back(y);
    b.ids.push_back("s" + std::to_string(i));
  }
  return b;
}

/// Single-layer regional samples; logits come from the region head over the
/// spatial mean. Uses the first layer's noise level with unit signal scale.
inline std::vector<RegionSample> gen_regional_batch(const SynthSpec& spec, int n, Rng& rng) {
  spec.validate();
  if (n < spec.categories) throw ConfigError("synth", "n must be at least the number of categories");
  std::vector<RegionSample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int y = static_cast<int>(rng.index(static_cast<std::size_t>(spec.categories)));
    RegionSample s;
    s.id = "r" + std::to_string(i);
    s.label = y;
    s.fmap = detail::synth_fmap(spec, y, 1.0, spec.layers.front().noise, rng);
    s.logits = spec.region_head.logits(s.fmap.regions);
    out.push_back(std::move(s));
  }
  return out;
}

/// Multi-layer dataset. Every layer is a channels x height x width map; the
/// sample feature is the spatial mean of the last layer and the logits come
/// from the region head.
inline Dataset gen_dataset(const SynthSpec& spec, int n, Rng& rng) {
  spec.validate();
  if (n < spec.categories) throw ConfigError("synth", "n must be at least the number of categories");
  Dataset d;
  d.name = spec.name;
  for (int y = 0; y < spec.categories; ++y) d.categories.push_back("class" + std::to_string(y));
  for (const auto& l : spec.layers) d.layers.push_back(l.name);
  for (int i = 0; i < n; ++i) {
    DatasetSample s;
    s.id = "x" + std::to_string(i);
    s.label = static_cast<int>(rng.index(static_cast<std::size_t>(spec.categories)));
    for (const auto& l : spec.layers) s.layers.push_back(detail::synth_fmap(spec, s.label, l.signal_scale, l.noise, rng));
    s.feature = s.layers.back().regions.colwise().mean().transpose();
    s.logits = spec.region_head.logits(s.layers.back().regions);
    d.samples.push_back(std::move(s));
  }
  return d;
}

/// Copy of `d` whose `layer` maps are scaled by `factor` and receive extra
/// N(0, noise^2) noise. Features and logits follow when the last layer changes.
inline Dataset perturb_layer(const Dataset& d, const std::string& layer, double factor, double noise,
                             const LinearHead& head, Rng& rng) {
  const std::size_t li = d.layer_index(layer);
  Dataset out = d;
  for (auto& s : out.samples) {
    auto& m = s.layers[li].regions;
    m *= factor;
    for (Eigen::Index r = 0; r < m.rows(); ++r) m.row(r) += detail::noise(m.cols(), noise, rng).transpose();
    if (li + 1 == out.layers.size()) {
      s.feature = m.colwise().mean().transpose();
      s.logits = head.logits(m);
    }
  }
  return out;
}

/// Regional samples of one dataset layer.
inline std::vector<RegionSample> region_samples(const Dataset& d, std::size_t layer) {
  std::vector<RegionSample> out;
  for (const auto& s : d.samples) {
    if (layer >= s.layers.size()) throw DimensionError("synth", "dataset layer index out of range");
    out.push_back({s.id, s.label, s.logits, s.layers[layer]});
  }
  return out;
}

inline SampleBatch sample_batch(const Dataset& d) {
  if (d.samples.empty()) throw DomainError("io", "dataset has no samples");
  SampleBatch b;
  const auto dim = d.samples.front().feature.size();
  const auto C = d.samples.front().logits.size();
  b.features.resize(static_cast<Eigen::Index>(d.samples.size()), dim);
  b.logits.resize(static_cast<Eigen::Index>(d.samples.size()), C);
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    b.features.row(static_cast<Eigen::Index>(i)) = d.samples[i].feature.transpose();
    b.logits.row(static_cast<Eigen::Index>(i)) = d.samples[i].logits.transpose();
    b.labels.push_back(d.samples[i].label);
    b.ids.push_back(d.samples[i].id);
  }
  b.validate();
  return b;
}

// ---------------------------------------------------------------------------
// JSON form of a spec. An infinite kappa_true is written as null.

inline nlohmann::ordered_json matrix_to_json(const Matrix& m) {
  auto out = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index j = 0; j < m.cols(); ++j) row[static_cast<std::size_t>(j)] = m(i, j);
    out.push_back(row);
  }
  return out;
}

inline Matrix matrix_from_json(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array()) throw ConfigError("synth", what + " must be an array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(j.at(0).size());
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto row = j.at(static_cast<std::size_t>(i)).get<std::vector<double>>();
    if (static_cast<Eigen::Index>(row.size()) != cols) throw ConfigError("synth", what + " is ragged");
    for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = row[static_cast<std::size_t>(k)];
  }
  return m;
}

inline nlohmann::ordered_json to_json(const SynthSpec& s) {
  nlohmann::ordered_json j;
  j["name"] = s.name;
  j["categories"] = s.categories;
  j["dim"] = s.dim;
  j["channels"] = s.channels;
  j["height"] = s.height;
  j["width"] = s.width;
  if (std::isinf(s.kappa_true)) {
    j["kappa_true"] = nullptr;
  } else {
    j["kappa_true"] = s.kappa_true;
  }
  j["strength_min"] = s.strength_min;
  j["strength_max"] = s.strength_max;
  j["sigma"] = s.sigma;
  j["mask"] = s.mask;
  j["layers"] = nlohmann::ordered_json::array();
  for (const auto& l : s.layers) {
    j["layers"].push_back({{"name", l.name}, {"signal_scale", l.signal_scale}, {"noise", l.noise}});
  }
  j["directions"] = matrix_to_json(s.directions);
  j["region_directions"] = matrix_to_json(s.region_directions);
  j["head"] = matrix_to_json(s.head);
  j["region_head"] = {{"weights", matrix_to_json(s.region_head.weights)},
                      {"bias", std::vector<double>(s.region_head.bias.data(),
                                                   s.region_head.bias.data() + s.region_head.bias.size())},
                      {"output", s.region_head.output == HeadOutput::Logit ? "logit" : "probability"}};
  return j;
}

inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  SynthSpec s;
  try {
    s.name = j.value("name", s.name);
    s.categories = j.at("categories").get<int>();
    s.dim = j.at("dim").get<int>();
    s.channels = j.at("channels").get<int>();
    s.height = j.at("height").get<int>();
    s.width = j.at("width").get<int>();
    s.kappa_true = j.at("kappa_true").is_null() ? std::numeric_limits<double>::infinity()
                                                 : j.at("kappa_true").get<double>();
    s.strength_min = j.at("strength_min").get<double>();
    s.strength_max = j.at("strength_max").get<double>();
    s.sigma = j.at("sigma").get<double>();
    s.mask = j.at("mask").get<std::vector<int>>();
    s.layers.clear();
    for (const auto& l : j.at("layers")) {
      s.layers.push_back({l.at("name").get<std::string>(), l.at("signal_scale").get<double>(), l.at("noise").get<double>()});
    }
    s.directions = matrix_from_json(j.at("directions"), "directions");
    s.region_directions = matrix_from_json(j.at("region_directions"), "region_directions");
    s.head = matrix_from_json(j.at("head"), "head");
    const auto& rh = j.at("region_head");
    s.region_head.weights = matrix_from_json(rh.at("weights"), "region_head.weights");
    const auto bias = rh.at("bias").get<std::vector<double>>();
    s.region_head.bias = Eigen::Map<const Vector>(bias.data(), static_cast<Eigen::Index>(bias.size()));
    const auto out = rh.value("output", std::string("probability"));
    if (out != "logit" && out != "probability") throw ConfigError("synth", "region_head.output must be logit or probability");
    s.region_head.output = out == "logit" ? HeadOutput::Logit : HeadOutput::Probability;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("synth", std::string("invalid spec: ") + e.what());
  }
  s.validate();
  return s;
}

}  // namespace discviz
