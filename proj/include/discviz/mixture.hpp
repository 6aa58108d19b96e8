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

// Mixture of revised vMF components over embedded features: category
// posteriors and EM fitting of the priors and mean directions.

#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "discviz/numutil.hpp"
#include "discviz/vmf.hpp"

namespace discviz {

struct MixtureModel {
  Vector priors;      // C
  Matrix directions;  // C x dim, unit rows
  std::shared_ptr<const KappaTable> kappa_table;

  Eigen::Index categories() const { return priors.size(); }
  Eigen::Index dim() const { return directions.cols(); }

  void validate() const {
    if (priors.size() == 0) throw DomainError("mixture", "mixture model has no components");
    if (directions.rows() != priors.size()) {
      throw DimensionError("mixture", "one mean direction per prior is required");
    }
    if (!kappa_table) throw DomainError("mixture", "mixture model has no kappa table");
    if (kappa_table->dim != directions.cols()) {
      throw DimensionError("mixture", "kappa table dimension differs from model dimension");
    }
    if ((priors.array() < 0.0).any() || std::abs(priors.sum() - 1.0) > 1e-9) {
      throw DomainError("mixture", "priors must be a probability vector");
    }
    for (Eigen::Index y = 0; y < directions.rows(); ++y) {
      if (std::abs(directions.row(y).norm() - 1.0) > 1e-9) {
        throw DomainError("mixture", "mean directions must have unit norm");
      }
    }
  }
};

namespace detail {

inline constexpr double kStrengthFloor = 1e-8;

// Unnormalized log scores ln pi_y + kappa * cos(o, mu_y) for a unit o.
inline Vector mixture_scores(const Vector& o, double kappa, const MixtureModel& model) {
  Vector s = model.directions * o;
  s *= kappa;
  s += model.priors.array().log().matrix();
  return s;
}

struct Polar {
  double strength;
  Vector orientation;
};

inline Polar polar(const Vector& g) {
  const double l = g.norm();
  return {l, g / (l + 1e-12)};
}

}  // namespace detail

/// p(y | g) = pi_y exp[kappa(|g|) cos(g, mu_y)] / sum_y' (...). The vMF
/// normalizer and the strength prior are shared by all components and cancel.
inline Vector posterior(const Vector& g, const MixtureModel& model) {
  if (g.size() != model.dim()) throw DimensionError("mixture", "posterior: dimension mismatch");
  const auto [l, o] = detail::polar(g);
  if (l == 0.0) throw DomainError("mixture", "posterior: zero-norm feature");
  const double kappa = kappa_lookup(*model.kappa_table, std::max(l, detail::kStrengthFloor));
  return softmax(detail::mixture_scores(o, kappa, model));
}

/// Per-sample log-likelihood ln p(g) of the orientation mixture, with
/// kappa(|g|) fixed per sample.
inline double mixture_log_likelihood(const Vector& g, const MixtureModel& model) {
  const auto [l, o] = detail::polar(g);
  if (l == 0.0) throw DomainError("mixture", "log-likelihood: zero-norm feature");
  const double kappa = kappa_lookup(*model.kappa_table, std::max(l, detail::kStrengthFloor));
  return logsumexp(detail::mixture_scores(o, kappa, model)) +
         log_vmf_norm_const(static_cast<int>(model.dim()), kappa);
}

inline double average_log_likelihood(const Matrix& G, const MixtureModel& model) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < G.rows(); ++i) {
    total += mixture_log_likelihood(G.row(i).transpose(), model);
  }
  return total / static_cast<double>(G.rows());
}

/// Responsibilities r_iy = p(y | g_i); rows of G are samples.
inline Matrix em_e_step(const MixtureModel& model, const Matrix& G) {
  model.validate();
  if (G.cols() != model.dim()) throw DimensionError("mixture", "E-step: dimension mismatch");
  Matrix resp(G.rows(), model.categories());
  for (Eigen::Index i = 0; i < G.rows(); ++i) {
    resp.row(i) = posterior(G.row(i).transpose(), model).transpose();
  }
  return resp;
}

namespace detail {

struct MStepResult {
  Vector priors;
  Matrix directions;
  std::vector<std::size_t> degenerate;
};

inline MStepResult m_step(const Matrix& resp, const Matrix& G, const KappaTable& table) {
  if (G.rows() == 0) throw DomainError("mixture", "M-step: no samples");
  if (resp.rows() != G.rows()) throw DimensionError("mixture", "M-step: row count mismatch");
  const Eigen::Index C = resp.cols();
  MStepResult out;
  out.priors = resp.colwise().sum().transpose() / static_cast<double>(G.rows());
  out.priors /= out.priors.sum();
  Matrix resultant = Matrix::Zero(C, G.cols());
  Vector weight = Vector::Zero(C);
  for (Eigen::Index i = 0; i < G.rows(); ++i) {
    const auto [l, o] = polar(G.row(i).transpose());
    if (l == 0.0) throw DomainError("mixture", "M-step: zero-norm feature");
    const double kappa = kappa_lookup(table, std::max(l, kStrengthFloor));
    for (Eigen::Index y = 0; y < C; ++y) {
      const double a = kappa * resp(i, y);
      resultant.row(y) += a * o.transpose();
      weight[y] += a;
    }
  }
  out.directions = resultant;
  for (Eigen::Index y = 0; y < C; ++y) {
    const double n = resultant.row(y).norm();
    if (!(weight[y] > 0.0) || n <= 1e-12 * weight[y]) {
      out.degenerate.push_back(static_cast<std::size_t>(y));
      out.directions.row(y).setZero();
    } else {
      out.directions.row(y) /= n;
    }
  }
  return out;
}

}  // namespace detail

/// mu_y = normalize(sum_i kappa(|g_i|) r_iy g_i/|g_i|), pi_y = mean_i r_iy.
/// Throws DegenerateComponentError when a component's resultant vanishes.
inline MixtureModel em_m_step(const Matrix& resp, const Matrix& G,
                              std::shared_ptr<const KappaTable> table) {
  auto step = detail::m_step(resp, G, *table);
  if (!step.degenerate.empty()) {
    throw DegenerateComponentError(step.degenerate.front(),
                                   "M-step: component " + std::to_string(step.degenerate.front()) +
                                       " has a zero resultant direction");
  }
  return MixtureModel{std::move(step.priors), std::move(step.directions), std::move(table)};
}

/// C data directions picked by farthest-point traversal on cosine distance,
/// starting from a random sample; uniform priors.
inline MixtureModel farthest_point_init(const Matrix& G, Eigen::Index C,
                                        std::shared_ptr<const KappaTable> table, Rng& rng) {
  const Eigen::Index n = G.rows();
  if (n < C) throw DomainError("mixture", "fewer samples than components");
  Matrix unit(n, G.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const double l = G.row(i).norm();
    if (l == 0.0) throw DomainError("mixture", "initialization: zero-norm feature");
    unit.row(i) = G.row(i) / l;
  }
  Matrix dirs(C, G.cols());
  Vector nearest = Vector::Constant(n, std::numeric_limits<double>::infinity());
  Eigen::Index pick = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n)));
  for (Eigen::Index y = 0; y < C; ++y) {
    dirs.row(y) = unit.row(pick);
    const Vector dist = (1.0 - (unit * unit.row(pick).transpose()).array()).matrix();
    nearest = nearest.cwiseMin(dist);
    if (y + 1 < C) nearest.maxCoeff(&pick);
  }
  return MixtureModel{Vector::Constant(C, 1.0 / static_cast<double>(C)), dirs, std::move(table)};
}

struct EmConfig {
  int max_iters = 200;
  double tol = 1e-6;
  int reseed_budget = 10;
};

struct EmResult {
  MixtureModel model;
  /// Average log-likelihood of the initial model followed by one entry per
  /// iteration.
  std::vector<double> log_likelihood;
  int iterations = 0;
  int reseeds = 0;
};

/// EM for the priors and mean directions with kappa(|g|) held fixed per
/// sample. Stops when the average log-likelihood improves by less than `tol`.
inline EmResult fit_em(const Matrix& G, Eigen::Index C, std::shared_ptr<const KappaTable> table,
                       const std::optional<MixtureModel>& init, Rng& rng,
                       const EmConfig& config = {}) {
  if (C < 1) throw DomainError("mixture", "fit_em: need at least one component");
  if (G.rows() < C) throw DomainError("mixture", "fit_em: fewer samples than components");
  if (!table || table->dim != G.cols()) {
    throw DimensionError("mixture", "fit_em: kappa table dimension differs from data");
  }
  EmResult result{init ? *init : farthest_point_init(G, C, table, rng), {}, 0, 0};
  result.model.kappa_table = table;
  result.model.validate();
  double prev = average_log_likelihood(G, result.model);
  result.log_likelihood.push_back(prev);
  for (int it = 0; it < config.max_iters; ++it) {
    const Matrix resp = em_e_step(result.model, G);
    auto step = detail::m_step(resp, G, *table);
    for (std::size_t y : step.degenerate) {
      if (result.reseeds >= config.reseed_budget) {
        throw DegenerateComponentError(
            y, "fit_em: component " + std::to_string(y) + " collapsed and the reseed budget is spent");
      }
      ++result.reseeds;
      // Reseed at the sample the current model explains worst.
      Eigen::Index worst = 0;
      double worst_ll = std::numeric_limits<double>::infinity();
      for (Eigen::Index i = 0; i < G.rows(); ++i) {
        const double ll = mixture_log_likelihood(G.row(i).transpose(), result.model);
        if (ll < worst_ll) {
          worst_ll = ll;
          worst = i;
        }
      }
      step.directions.row(static_cast<Eigen::Index>(y)) = G.row(worst) / G.row(worst).norm();
      step.priors[static_cast<Eigen::Index>(y)] = std::max(step.priors[static_cast<Eigen::Index>(y)], 1e-12);
      step.priors /= step.priors.sum();
    }
    result.model.priors = std::move(step.priors);
    result.model.directions = std::move(step.directions);
    ++result.iterations;
    const double ll = average_log_likelihood(G, result.model);
    result.log_likelihood.push_back(ll);
    if (!std::isfinite(ll)) throw DivergenceError("mixture", "fit_em: log-likelihood is not finite");
    if (ll - prev < config.tol) break;
    prev = ll;
  }
  return result;
}

}  // namespace discviz
