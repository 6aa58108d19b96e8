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

// Comparisons between two conditions of the same regions: original vs
// adversarial (attack utilities, attacked-region histograms, trajectory
// types) and teacher vs student (distillation dissimilarity histograms).

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "discviz/knowledge.hpp"
#include "discviz/mixture.hpp"

namespace discviz {

/// Regions of one layer under conditions A and B, aligned by sample and region.
struct PairedRegions {
  std::string layer;
  std::vector<std::string> ids;
  std::vector<Matrix> a;
  std::vector<Matrix> b;

  void validate() const {
    if (a.size() != b.size() || (!ids.empty() && ids.size() != a.size())) {
      throw PairingError("analysis", "layer '" + layer + "': conditions disagree on the sample count");
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].rows() != b[i].rows() || a[i].cols() != b[i].cols()) {
        throw PairingError("analysis", "layer '" + layer + "': sample " +
                                           (ids.empty() ? std::to_string(i) : ids[i]) +
                                           " has mismatched region shapes");
      }
    }
  }
};

struct Histogram {
  std::vector<double> edges;  // bins + 1
  std::vector<std::size_t> counts;

  Histogram(double lo, double hi, std::size_t bins) : counts(bins, 0) {
    for (std::size_t i = 0; i <= bins; ++i) {
      edges.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins));
    }
  }

  /// Bins are [e_i, e_{i+1}); values outside the range go to the end bins.
  void add(double x) {
    const double lo = edges.front();
    const double hi = edges.back();
    const auto bins = static_cast<double>(counts.size());
    auto idx = static_cast<long long>(std::floor((x - lo) / (hi - lo) * bins));
    idx = std::clamp<long long>(idx, 0, static_cast<long long>(counts.size()) - 1);
    ++counts[static_cast<std::size_t>(idx)];
  }

  std::size_t total() const {
    std::size_t t = 0;
    for (auto c : counts) t += c;
    return t;
  }
};

namespace detail {

// Cosine of a pair; 1 for identical vectors (including two zeros), 0 when
// only one vanishes.
inline double pair_cosine(const Vector& a, const Vector& b) {
  if (a == b) return 1.0;
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 && nb == 0.0) return 1.0;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

}  // namespace detail

struct AttackUtilities {
  double delta_orientation = 0.0;
  double delta_strength = 0.0;
};

/// E_x E_r cos(h_a, h_b) and E_x E_r | |h_a| - |h_b| |.
inline AttackUtilities attack_utilities(const PairedRegions& pairs) {
  pairs.validate();
  if (pairs.a.empty()) throw DomainError("analysis", "attack_utilities: no samples");
  AttackUtilities u;
  std::size_t used = 0;
  for (std::size_t i = 0; i < pairs.a.size(); ++i) {
    const auto R = pairs.a[i].rows();
    if (R == 0) continue;
    double c = 0.0, s = 0.0;
    for (Eigen::Index r = 0; r < R; ++r) {
      const Vector ha = pairs.a[i].row(r).transpose();
      const Vector hb = pairs.b[i].row(r).transpose();
      c += detail::pair_cosine(ha, hb);
      s += std::abs(ha.norm() - hb.norm());
    }
    u.delta_orientation += c / static_cast<double>(R);
    u.delta_strength += s / static_cast<double>(R);
    ++used;
  }
  if (used == 0) throw DomainError("analysis", "attack_utilities: no regions");
  u.delta_orientation /= static_cast<double>(used);
  u.delta_strength /= static_cast<double>(used);
  return u;
}

/// Regions whose condition-B posterior for the adversarial category exceeds
/// `threshold`, histogrammed by their condition-A posterior for the original
/// category (10 bins on [0, 1]).
inline Histogram attacked_region_histogram(const PairedRegions& pairs, const MixtureModel& model,
                                           const std::vector<int>& original, const std::vector<int>& adversarial,
                                           double threshold = 0.4) {
  pairs.validate();
  if (original.size() != pairs.a.size() || adversarial.size() != pairs.a.size()) {
    throw DimensionError("analysis", "one original and one adversarial category per sample is required");
  }
  Histogram hist(0.0, 1.0, 10);
  for (std::size_t i = 0; i < pairs.a.size(); ++i) {
    for (Eigen::Index r = 0; r < pairs.b[i].rows(); ++r) {
      const Vector pb = region_posterior(pairs.b[i].row(r).transpose(), model);
      if (!(pb[adversarial[i]] > threshold)) continue;
      const Vector pa = region_posterior(pairs.a[i].row(r).transpose(), model);
      hist.add(pa[original[i]]);
    }
  }
  return hist;
}

enum class TrajectoryType { None, Type1, Type2, Type3, Type4, Indeterminate };

inline std::string to_string(TrajectoryType t) {
  switch (t) {
    case TrajectoryType::None: return "none";
    case TrajectoryType::Type1: return "type1";
    case TrajectoryType::Type2: return "type2";
    case TrajectoryType::Type3: return "type3";
    case TrajectoryType::Type4: return "type4";
    case TrajectoryType::Indeterminate: return "indeterminate";
  }
  return "none";
}

struct Trajectory {
  Vector start;
  Vector end;
  /// Embeddings of the region at intermediate attack steps, in order.
  std::vector<Vector> midpoints;
  /// Strengths of every region of the sample before the attack; the
  /// importance cutoff is their theta_w quantile.
  std::vector<double> reference_strengths;
};

struct TrajectoryThresholds {
  double importance_quantile = 0.5;
  double posterior = 0.4;
};

/// Attack-trajectory type of one region:
///  - Type 3: unimportant at start, important and target-confident at end;
///  - Type 4: important at start, unimportant at end;
///  - Type 1 / Type 2: important at both ends and target-confident at end,
///    Type 2 when some midpoint drops below the importance cutoff, Type 1
///    otherwise (Indeterminate without midpoints);
///  - None: anything else, e.g. an unattacked region.
inline TrajectoryType classify_trajectory(const Trajectory& t, const MixtureModel& model, int target,
                                          const TrajectoryThresholds& th = {}) {
  if (!(th.importance_quantile > 0.0 && th.importance_quantile < 1.0) ||
      !(th.posterior > 0.0 && th.posterior < 1.0)) {
    throw ConfigError("analysis", "trajectory thresholds must lie in (0, 1)");
  }
  if (t.start.size() != t.end.size()) throw DimensionError("analysis", "trajectory endpoints differ in dimension");
  if (t.reference_strengths.empty()) throw DomainError("analysis", "trajectory needs reference strengths");
  const double cutoff = quantile(t.reference_strengths, th.importance_quantile);
  const bool important_start = t.start.norm() > cutoff;
  const bool important_end = t.end.norm() > cutoff;
  const bool target_confident = region_posterior(t.end, model)[target] > th.posterior;
  if (!important_start && important_end && target_confident) return TrajectoryType::Type3;
  if (important_start && !important_end) return TrajectoryType::Type4;
  if (important_start && important_end && target_confident) {
    if (t.midpoints.empty()) return TrajectoryType::Indeterminate;
    for (const auto& m : t.midpoints) {
      if (!(m.norm() > cutoff)) return TrajectoryType::Type2;
    }
    return TrajectoryType::Type1;
  }
  return TrajectoryType::None;
}

struct DistillReport {
  Histogram orientation{0.0, 2.0, 20};  // 1 - cos
  Histogram strength{-1.0, 1.0, 20};    // |h_b| - |h_a|
};

/// Histograms of 1 - cos(h_b, h_a) on [0, 2] and of |h_b| - |h_a| on a
/// symmetric range set by the largest absolute difference. Condition A is the
/// teacher, B the student.
inline DistillReport distill_dissimilarity(const PairedRegions& pairs) {
  pairs.validate();
  std::vector<double> orient, diff;
  for (std::size_t i = 0; i < pairs.a.size(); ++i) {
    for (Eigen::Index r = 0; r < pairs.a[i].rows(); ++r) {
      const Vector ha = pairs.a[i].row(r).transpose();
      const Vector hb = pairs.b[i].row(r).transpose();
      orient.push_back(1.0 - detail::pair_cosine(hb, ha));
      diff.push_back(hb.norm() - ha.norm());
    }
  }
  if (orient.empty()) throw DomainError("analysis", "distill_dissimilarity: no region pairs");
  double range = 0.0;
  for (double d : diff) range = std::max(range, std::abs(d));
  if (range == 0.0) range = 1.0;
  DistillReport report{Histogram(0.0, 2.0, 20), Histogram(-range, range, 20)};
  for (double o : orient) report.orientation.add(o);
  for (double d : diff) report.strength.add(d);
  return report;
}

}  // namespace discviz
