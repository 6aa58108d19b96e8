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

// Knowledge points: projected regional features whose largest category
// posterior exceeds tau. A knowledge point is reliable when that category is
// the sample's label.

#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "discviz/mixture.hpp"

namespace discviz {

/// Projected regions of every sample for one layer.
struct LayerRegions {
  std::string layer;
  std::vector<Matrix> h;  // per sample, R x d'
};

struct KnowledgeConfig {
  double tau = 0.4;
  std::string reference_layer;
};

/// Mean regional strength E_{x,r} |h^(r)| of a layer.
inline double average_strength(const LayerRegions& layer) {
  double total = 0.0;
  double count = 0.0;
  for (const auto& H : layer.h) {
    total += H.rowwise().norm().sum();
    count += static_cast<double>(H.rows());
  }
  if (count == 0.0) return 0.0;
  return total / count;
}

/// Rescale every layer so its average regional strength equals that of the
/// reference layer. Orientations are untouched.
inline std::vector<LayerRegions> normalize_layer_strength(const std::vector<LayerRegions>& layers,
                                                          const std::string& reference) {
  const LayerRegions* ref = nullptr;
  for (const auto& l : layers) {
    if (l.layer == reference) ref = &l;
  }
  if (ref == nullptr) throw DegenerateLayerError("knowledge", "reference layer '" + reference + "' is not present");
  const double target = average_strength(*ref);
  if (!(target > 0.0)) {
    throw DegenerateLayerError("knowledge", "reference layer '" + reference + "' has zero average strength");
  }
  std::vector<LayerRegions> out = layers;
  for (auto& l : out) {
    const double avg = average_strength(l);
    if (!(avg > 0.0)) throw DegenerateLayerError("knowledge", "layer '" + l.layer + "' has zero average strength");
    const double factor = target / avg;
    if (factor == 1.0) continue;
    for (auto& H : l.h) H *= factor;
  }
  return out;
}

struct RegionRecord {
  std::size_t sample = 0;
  Eigen::Index region = 0;
  int argmax = 0;
  double max_posterior = 0.0;
  bool is_knowledge = false;
  bool is_reliable = false;
  /// Another category reached the maximum posterior; argmax is the lowest
  /// such index.
  bool tie = false;
};

struct KnowledgeReport {
  std::string layer;
  std::size_t total = 0;
  std::size_t reliable = 0;
  std::vector<RegionRecord> regions;

  /// reliable / total, absent when there are no knowledge points.
  std::optional<double> ratio() const {
    if (total == 0) return std::nullopt;
    return static_cast<double>(reliable) / static_cast<double>(total);
  }
};

/// Classify one region from its category posterior.
inline RegionRecord classify_region(const Vector& post, int truth, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("knowledge", "tau must lie in (0, 1)");
  RegionRecord rec;
  Eigen::Index arg = 0;
  rec.max_posterior = post.maxCoeff(&arg);
  rec.argmax = static_cast<int>(arg);
  for (Eigen::Index y = 0; y < post.size(); ++y) {
    if (y != arg && std::abs(post[y] - rec.max_posterior) <= 1e-12) rec.tie = true;
  }
  rec.is_knowledge = rec.max_posterior > tau;
  rec.is_reliable = rec.is_knowledge && rec.argmax == truth;
  return rec;
}

/// Posterior of a projected region; a zero vector carries no orientation and
/// gets the priors.
inline Vector region_posterior(const Vector& h, const MixtureModel& model) {
  if (h.norm() == 0.0) return model.priors;
  return posterior(h, model);
}

/// Count knowledge points of one layer. `labels[i]` is the ground-truth
/// category of sample i, used for every region of that sample.
inline KnowledgeReport count_knowledge_points(const LayerRegions& layer, const std::vector<int>& labels,
                                              const MixtureModel& model, double tau) {
  if (layer.h.size() != labels.size()) {
    throw DimensionError("knowledge", "one label per sample is required");
  }
  KnowledgeReport report;
  report.layer = layer.layer;
  for (std::size_t i = 0; i < layer.h.size(); ++i) {
    const Matrix& H = layer.h[i];
    if (H.rows() > 0 && H.cols() != model.dim()) {
      throw DimensionError("knowledge", "region dimension differs from the mixture dimension");
    }
    for (Eigen::Index r = 0; r < H.rows(); ++r) {
      RegionRecord rec = classify_region(region_posterior(H.row(r).transpose(), model), labels[i], tau);
      rec.sample = i;
      rec.region = r;
      report.total += rec.is_knowledge ? 1 : 0;
      report.reliable += rec.is_reliable ? 1 : 0;
      report.regions.push_back(rec);
    }
  }
  return report;
}

/// Grid cells of knowledge points, grouped per sample and per category.
struct KnowledgeOverlay {
  int height = 0;
  int width = 0;
  /// sample index -> category -> (row, col) cells
  std::map<std::size_t, std::map<int, std::vector<std::pair<int, int>>>> cells;

  std::map<int, std::size_t> counts_per_category() const {
    std::map<int, std::size_t> out;
    for (const auto& [sample, cats] : cells) {
      for (const auto& [c, v] : cats) out[c] += v.size();
    }
    return out;
  }
};

inline KnowledgeOverlay knowledge_overlay(const KnowledgeReport& report, int height, int width) {
  if (height < 1 || width < 1) throw DomainError("knowledge", "overlay grid must be nonempty");
  KnowledgeOverlay overlay{height, width, {}};
  for (const auto& rec : report.regions) {
    if (!rec.is_knowledge) continue;
    if (rec.region < 0 || rec.region >= static_cast<Eigen::Index>(height) * width) {
      throw DomainError("knowledge", "region index " + std::to_string(rec.region) + " is outside the " +
                                         std::to_string(height) + "x" + std::to_string(width) + " grid");
    }
    const int r = static_cast<int>(rec.region);
    overlay.cells[rec.sample][rec.argmax].emplace_back(r / width, r % width);
  }
  return overlay;
}

}  // namespace discviz
