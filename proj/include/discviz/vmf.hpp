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

// The von Mises-Fisher distribution and its strength-dependent revision, in
// which the concentration is a function kappa(l) of the feature norm l. The
// function is tabulated by Monte Carlo: clean features of strength l are
// corrupted by isotropic Gaussian noise and kappa is fitted to the result.

#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "discviz/numutil.hpp"

namespace discviz {

inline constexpr double kKappaMax = 1e6;

struct VmfParams {
  Vector mu;
  double kappa = 0.0;

  void validate() const {
    if (mu.size() < 2) throw DomainError("vmf", "vMF mean direction needs dimension >= 2");
    if (std::abs(mu.norm() - 1.0) > 1e-9) {
      throw DomainError("vmf", "vMF mean direction must have unit norm");
    }
    if (!(kappa >= 0.0) || !std::isfinite(kappa)) {
      throw DomainError("vmf", "vMF concentration must be finite and nonnegative");
    }
  }
};

/// Piecewise-linear map from feature strength l to concentration kappa(l).
struct KappaTable {
  int dim = 0;
  double sigma = 1.0;
  std::vector<double> strengths;
  std::vector<double> kappas;
  std::size_t sample_count = 0;

  /// A table whose lookup returns `kappa` for every strength. Used where the
  /// strength dependence must be switched off.
  static KappaTable constant(int dim, double kappa) {
    KappaTable t;
    t.dim = dim;
    t.sigma = 0.0;
    t.strengths = {0.0, 1.0};
    t.kappas = {kappa, kappa};
    t.sample_count = 0;
    t.validate();
    return t;
  }

  void validate() const {
    if (dim < 2) throw DomainError("vmf", "kappa table dimension must be at least 2");
    if (strengths.empty() || strengths.size() != kappas.size()) {
      throw DomainError("vmf", "kappa table needs equally sized, nonempty grids");
    }
    for (std::size_t i = 0; i < strengths.size(); ++i) {
      if (!(strengths[i] >= 0.0) || !std::isfinite(strengths[i])) {
        throw DomainError("vmf", "kappa table strengths must be finite and nonnegative");
      }
      if (i > 0 && !(strengths[i] > strengths[i - 1])) {
        throw DomainError("vmf", "kappa table strengths must be strictly ascending");
      }
      if (!(kappas[i] >= 0.0) || !std::isfinite(kappas[i])) {
        throw DomainError("vmf", "kappa table values must be finite and nonnegative");
      }
      if (i > 0 && kappas[i] < kappas[i - 1]) {
        throw DomainError("vmf", "kappa table values must be non-decreasing");
      }
    }
  }
};

struct KappaAt {
  double kappa = 0.0;
  /// d kappa / d l; the right derivative at grid knots, 0 outside the grid.
  double slope = 0.0;
};

/// kappa(l) with its derivative. Linear interpolation inside the grid,
/// clamped to the end values outside it.
inline KappaAt kappa_lookup_with_slope(const KappaTable& table, double l) {
  const auto& s = table.strengths;
  const auto& k = table.kappas;
  if (s.size() == 1 || l < s.front()) return {k.front(), 0.0};
  if (l >= s.back()) return {k.back(), 0.0};
  const auto hi = static_cast<std::size_t>(std::upper_bound(s.begin(), s.end(), l) - s.begin());
  const std::size_t lo = hi - 1;
  const double slope = (k[hi] - k[lo]) / (s[hi] - s[lo]);
  if (l == s[lo]) return {k[lo], slope};
  return {k[lo] + slope * (l - s[lo]), slope};
}

inline double kappa_lookup(const KappaTable& table, double l) {
  return kappa_lookup_with_slope(table, l).kappa;
}

/// ln p_vMF(f | mu, kappa); depends on f only through its direction.
inline double vmf_log_pdf(const Vector& f, const VmfParams& params) {
  params.validate();
  if (f.size() != params.mu.size()) {
    throw DimensionError("vmf", "vmf_log_pdf: feature and mean direction dimensions differ");
  }
  const double n = f.norm();
  if (n == 0.0) throw DomainError("vmf", "vmf_log_pdf: zero-norm feature");
  const double cos = std::clamp(f.dot(params.mu) / n, -1.0, 1.0);
  return log_vmf_norm_const(static_cast<int>(f.size()), params.kappa) + params.kappa * cos;
}

/// Closed-form concentration estimate from the mean resultant length R,
/// kappa = R (d - R^2) / (1 - R^2), capped at `kappa_max` when R -> 1.
inline double kappa_from_resultant(double resultant, int dim, double kappa_max = kKappaMax) {
  const double r = std::max(0.0, resultant);
  if (r >= 1.0 - 1e-9) return kappa_max;
  const double k = r * (static_cast<double>(dim) - r * r) / (1.0 - r * r);
  return std::min(k, kappa_max);
}

/// Maximum-likelihood style concentration estimate of a set of directions.
///
/// Without `known_mu` R is the norm of the mean unit vector. With it, R is
/// the projection of that mean onto the known direction (clamped at 0), the
/// estimate that applies when the mean direction is not a free parameter.
inline double estimate_kappa_mle(std::span<const Vector> samples, int dim,
                                 const std::optional<Vector>& known_mu = std::nullopt,
                                 double kappa_max = kKappaMax) {
  if (samples.size() < 2) throw DomainError("vmf", "estimate_kappa_mle needs at least two samples");
  if (dim < 2) throw DomainError("vmf", "estimate_kappa_mle: dimension must be at least 2");
  Vector mean = Vector::Zero(dim);
  std::size_t used = 0;
  for (const auto& s : samples) {
    if (s.size() != dim) throw DimensionError("vmf", "estimate_kappa_mle: sample dimension mismatch");
    const double n = s.norm();
    if (n == 0.0) continue;
    mean += s / n;
    ++used;
  }
  if (used == 0) throw DomainError("vmf", "estimate_kappa_mle: all samples have zero norm");
  if (used < samples.size()) {
    throw DomainError("vmf", "estimate_kappa_mle: zero-norm sample has no direction");
  }
  mean /= static_cast<double>(used);
  const double r = known_mu ? mean.dot(*known_mu) : mean.norm();
  return kappa_from_resultant(r, dim, kappa_max);
}

/// Pool-adjacent-violators fit of a non-decreasing sequence (equal weights).
inline std::vector<double> isotonic_non_decreasing(const std::vector<double>& values) {
  struct Block {
    double sum;
    std::size_t count;
  };
  std::vector<Block> blocks;
  for (double v : values) {
    blocks.push_back({v, 1});
    while (blocks.size() > 1) {
      const Block& b = blocks.back();
      const Block& a = blocks[blocks.size() - 2];
      if (a.sum / static_cast<double>(a.count) <= b.sum / static_cast<double>(b.count)) break;
      Block merged{a.sum + b.sum, a.count + b.count};
      blocks.pop_back();
      blocks.back() = merged;
    }
  }
  std::vector<double> out;
  out.reserve(values.size());
  for (const auto& b : blocks) {
    out.insert(out.end(), b.count, b.sum / static_cast<double>(b.count));
  }
  return out;
}

/// `points` log-spaced strengths on [1e-3, 2 * max_strength].
inline std::vector<double> default_strength_grid(double max_strength, std::size_t points = 64) {
  constexpr double lo = 1e-3;
  const double hi = 2.0 * max_strength;
  if (!(hi > lo) || !std::isfinite(hi)) {
    throw DomainError("vmf", "strength grid upper bound must exceed 1e-3");
  }
  if (points < 2) throw DomainError("vmf", "strength grid needs at least two points");
  std::vector<double> grid(points);
  const double step = std::log(hi / lo) / static_cast<double>(points - 1);
  for (std::size_t i = 0; i < points; ++i) {
    grid[i] = lo * std::exp(step * static_cast<double>(i));
  }
  grid.back() = hi;
  return grid;
}

/// Tabulate kappa(l) by Monte Carlo.
///
/// For every grid strength l the noisy features are f_i = l * e_1 + sigma *
/// eps_i. The noise vectors are drawn once and shared by every grid point, in
/// antithetic pairs (eps, -eps), so that l = 0 gives exactly kappa = 0 and the
/// estimate is strictly increasing in l. `sample_count` is rounded up to even.
inline KappaTable build_kappa_table(int dim, double sigma, const std::vector<double>& strengths,
                                    std::size_t sample_count, Rng& rng) {
  if (strengths.empty()) throw DomainError("vmf", "build_kappa_table: empty strength grid");
  if (dim < 2) throw DomainError("vmf", "build_kappa_table: dimension must be at least 2");
  if (!(sigma > 0.0)) throw DomainError("vmf", "build_kappa_table: sigma must be positive");
  if (sample_count < 100) throw DomainError("vmf", "build_kappa_table: sample_count must be >= 100");
  for (std::size_t i = 1; i < strengths.size(); ++i) {
    if (!(strengths[i] > strengths[i - 1])) {
      throw DomainError("vmf", "build_kappa_table: strengths must be strictly ascending");
    }
  }
  if (strengths.front() < 0.0) throw DomainError("vmf", "build_kappa_table: negative strength");

  const std::size_t pairs = (sample_count + 1) / 2;
  Matrix noise(static_cast<Eigen::Index>(pairs), dim);
  for (Eigen::Index i = 0; i < noise.rows(); ++i) {
    for (Eigen::Index j = 0; j < dim; ++j) noise(i, j) = sigma * rng.normal();
  }

  std::vector<double> raw;
  raw.reserve(strengths.size());
  for (double l : strengths) {
    double proj = 0.0;
    for (Eigen::Index i = 0; i < noise.rows(); ++i) {
      const double tail = noise.row(i).tail(dim - 1).squaredNorm();
      const double a = l + noise(i, 0);
      const double b = l - noise(i, 0);
      const double na = std::sqrt(a * a + tail);
      const double nb = std::sqrt(b * b + tail);
      if (na > 0.0) proj += a / na;
      if (nb > 0.0) proj += b / nb;
    }
    const double r = proj / static_cast<double>(2 * pairs);
    raw.push_back(kappa_from_resultant(r, dim));
  }

  KappaTable table;
  table.dim = dim;
  table.sigma = sigma;
  table.strengths = strengths;
  table.kappas = isotonic_non_decreasing(raw);
  table.sample_count = 2 * pairs;
  return table;
}

/// ln p_vMF(f/|f| | mu, kappa(|f|)): the orientation factor of the revised
/// vMF. The strength prior p(l) is category independent and is omitted.
inline double revised_log_likelihood(const Vector& f, const Vector& mu, const KappaTable& table) {
  const double l = f.norm();
  if (l == 0.0) throw DomainError("vmf", "revised_log_likelihood: zero-norm feature");
  return vmf_log_pdf(f, VmfParams{mu, kappa_lookup(table, l)});
}

}  // namespace discviz
