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

// Linear projection g = M f of sample features into a low-dimensional space
// where a revised-vMF mixture reproduces the network's class posteriors.
// Fitting alternates EM on the mixture with gradient descent on
// KL(P(y|x) || Q_M(y|x)).

#pragma once

#include <string>
#include <vector>

#include "discviz/mixture.hpp"
#include "discviz/numutil.hpp"
#include "discviz/vmf.hpp"

namespace discviz {

struct SampleBatch {
  Matrix features;  // n x d
  Matrix logits;    // n x C
  std::vector<int> labels;
  std::vector<std::string> ids;

  Eigen::Index size() const { return features.rows(); }
  Eigen::Index categories() const { return logits.cols(); }

  void validate() const {
    const auto n = features.rows();
    if (logits.rows() != n || static_cast<Eigen::Index>(labels.size()) != n ||
        (!ids.empty() && static_cast<Eigen::Index>(ids.size()) != n)) {
      throw DimensionError("sample_embed", "sample batch fields disagree on the sample count");
    }
    for (int y : labels) {
      if (y < 0 || y >= logits.cols()) {
        throw DomainError("sample_embed", "label outside [0, C)");
      }
    }
    if (!features.allFinite() || !logits.allFinite()) {
      throw DomainError("sample_embed", "sample batch contains non-finite values");
    }
  }
};

struct SampleProjection {
  Matrix matrix;  // d' x d
};

struct SampleFitConfig {
  int dim = 3;
  double learning_rate = 1.0;
  int gradient_steps = 25;
  int alternations = 20;
  double tol = 1e-7;
  std::uint64_t seed = 0;
  double sigma = 1.0;
  std::size_t kappa_samples = 10000;
  /// Floor on the top of the kappa grid, in units of sigma.
  double min_grid_strength = 16.0;
  /// Mean strength of the initial embeddings, in units of sigma.
  double initial_strength = 2.0;
  /// EM for the initial mixture.
  EmConfig em;
  /// EM iterations after each descent phase.
  int em_iterations_per_alternation = 1;
};

inline Vector project_sample(const Matrix& M, const Vector& f) {
  if (M.cols() != f.size()) throw DimensionError("sample_embed", "project_sample: M has wrong width");
  return M * f;
}

inline Matrix project_samples(const Matrix& M, const Matrix& F) {
  if (M.cols() != F.cols()) throw DimensionError("sample_embed", "project_samples: M has wrong width");
  return F * M.transpose();
}

struct LossAndGradient {
  double loss = 0.0;
  Matrix gradient;
};

namespace detail {

inline LossAndGradient sample_kl(const SampleBatch& batch, const Matrix& M,
                                 const MixtureModel& model, bool want_gradient) {
  if (M.rows() != model.dim()) throw DimensionError("sample_embed", "projection rows differ from model dimension");
  if (M.cols() != batch.features.cols()) throw DimensionError("sample_embed", "projection width differs from feature dimension");
  if (batch.logits.cols() != model.categories()) {
    throw DimensionError("sample_embed", "logit count differs from mixture component count");
  }
  const auto n = batch.size();
  LossAndGradient out;
  if (want_gradient) out.gradient = Matrix::Zero(M.rows(), M.cols());
  const Vector log_priors = model.priors.array().log().matrix();
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector f = batch.features.row(i).transpose();
    const Vector g = M * f;
    const double l = g.norm();
    if (l == 0.0) throw DomainError("sample_embed", "projected feature has zero norm");
    const Vector o = g / (l + 1e-12);
    const double lf = std::max(l, kStrengthFloor);
    const auto [kappa, slope] = kappa_lookup_with_slope(*model.kappa_table, lf);
    const Vector cosines = model.directions * o;
    const Vector scores = log_priors + kappa * cosines;
    const Vector log_q = scores.array() - logsumexp(scores);
    const Vector z = batch.logits.row(i).transpose();
    const Vector log_p = z.array() - logsumexp(z);
    const Vector p = log_p.array().exp().matrix();
    double kl = 0.0;
    for (Eigen::Index y = 0; y < p.size(); ++y) {
      if (p[y] > 0.0) kl += p[y] * (log_p[y] - log_q[y]);
    }
    out.loss += kl;
    if (want_gradient) {
      const Vector delta = log_q.array().exp().matrix() - p;
      const double dc = delta.dot(cosines);
      const double dslope = l >= kStrengthFloor ? slope : 0.0;
      Vector dg = (dslope * dc) * o + (kappa / lf) * (model.directions.transpose() * delta - dc * o);
      out.gradient.noalias() += dg * f.transpose();
    }
  }
  out.loss /= static_cast<double>(n);
  if (want_gradient) out.gradient /= static_cast<double>(n);
  return out;
}

}  // namespace detail

/// Mean over samples of KL(softmax(z) || p(y | M f)).
inline double sample_kl_loss(const SampleBatch& batch, const Matrix& M, const MixtureModel& model) {
  return detail::sample_kl(batch, M, model, false).loss;
}

/// Loss and its gradient with respect to M. kappa(l) is differentiated as a
/// piecewise-linear function (right derivative at grid knots).
inline LossAndGradient sample_kl_grad(const SampleBatch& batch, const Matrix& M,
                                      const MixtureModel& model) {
  return detail::sample_kl(batch, M, model, true);
}

struct SampleFitResult {
  SampleProjection projection;
  MixtureModel model;
  Matrix embeddings;  // n x d'
  std::vector<double> loss_trace;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

namespace detail {

// Initial mixture for the first alternation: an M-step that uses the
// network's own posteriors as responsibilities, so component y starts on the
// directions of category y. Components without support fall back to
// farthest-point directions.
inline MixtureModel posterior_seeded_model(const SampleBatch& batch, const Matrix& G,
                                           std::shared_ptr<const KappaTable> table, Rng& rng) {
  Matrix resp(batch.size(), batch.categories());
  for (Eigen::Index i = 0; i < batch.size(); ++i) {
    resp.row(i) = softmax(batch.logits.row(i).transpose()).transpose();
  }
  auto step = m_step(resp, G, *table);
  if (!step.degenerate.empty()) {
    const auto fallback = farthest_point_init(G, batch.categories(), table, rng);
    for (std::size_t y : step.degenerate) {
      step.directions.row(static_cast<Eigen::Index>(y)) = fallback.directions.row(static_cast<Eigen::Index>(y));
    }
  }
  return MixtureModel{std::move(step.priors), std::move(step.directions), std::move(table)};
}

}  // namespace detail

/// Alternate (i) gradient descent with step halving on M with the mixture
/// fixed and (ii) EM iterations on the new embeddings with M fixed. The first
/// mixture comes from EM run to convergence. Returns the (M, mixture) pair
/// with the lowest loss seen, so the final loss never exceeds the initial one.
inline SampleFitResult fit_sample_projection(const SampleBatch& batch, const SampleFitConfig& config) {
  batch.validate();
  const auto C = batch.categories();
  const auto d = batch.features.cols();
  if (batch.size() < C) throw DomainError("sample_embed", "fit needs at least as many samples as categories");
  if (config.dim < 2 || config.dim > d) {
    throw ConfigError("sample_embed", "embedding dimension must lie in [2, d]");
  }
  if (!(config.learning_rate > 0.0) || !(config.initial_strength > 0.0) || config.gradient_steps < 1 ||
      config.alternations < 1 ||
      config.em_iterations_per_alternation < 1) {
    throw ConfigError("sample_embed", "learning rate, step and alternation counts must be positive");
  }
  Rng rng(config.seed);
  Matrix M(config.dim, d);
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    for (Eigen::Index j = 0; j < M.cols(); ++j) M(i, j) = rng.normal();
  }
  const double mean_strength = project_samples(M, batch.features).rowwise().norm().mean();
  if (!(mean_strength > 0.0)) throw DomainError("sample_embed", "all features project to zero");
  M *= config.initial_strength * config.sigma / mean_strength;

  Matrix G = project_samples(M, batch.features);
  const double max_strength =
      std::max(G.rowwise().norm().maxCoeff(), config.min_grid_strength * config.sigma);
  auto table = std::make_shared<const KappaTable>(build_kappa_table(
      config.dim, config.sigma, default_strength_grid(max_strength), config.kappa_samples, rng));

  MixtureModel model = fit_em(G, C, table, detail::posterior_seeded_model(batch, G, table, rng),
                              rng, config.em).model;

  SampleFitResult result;
  double loss = sample_kl_loss(batch, M, model);
  if (!std::isfinite(loss)) throw DivergenceError("sample_embed", "initial loss is not finite");
  result.initial_loss = loss;
  result.loss_trace.push_back(loss);
  Matrix best_M = M;
  MixtureModel best_model = model;
  double best_loss = loss;

  EmConfig step_em = config.em;
  step_em.max_iters = config.em_iterations_per_alternation;
  for (int alt = 0; alt < config.alternations; ++alt) {
    const double start = loss;
    const auto trace = descend_with_backtracking(
        M, loss, config.gradient_steps, config.learning_rate,
        [&](const Matrix& m) {
          auto lg = sample_kl_grad(batch, m, model);
          return std::pair{lg.loss, std::move(lg.gradient)};
        },
        [&](const Matrix& m) { return sample_kl_loss(batch, m, model); },
        [](const Matrix& m, const Matrix& g, double eta) { return Matrix(m - eta * g); },
        "sample_embed");
    result.loss_trace.insert(result.loss_trace.end(), trace.begin(), trace.end());
    if (loss < best_loss) {
      best_loss = loss;
      best_M = M;
      best_model = model;
    }
    G = project_samples(M, batch.features);
    model = fit_em(G, C, table, model, rng, step_em).model;
    loss = sample_kl_loss(batch, M, model);
    if (!std::isfinite(loss)) {
      throw DivergenceError("sample_embed", "loss became non-finite; use a smaller learning rate");
    }
    result.loss_trace.push_back(loss);
    if (loss < best_loss) {
      best_loss = loss;
      best_M = M;
      best_model = model;
    }
    if (std::abs(start - loss) < config.tol) break;
  }

  result.projection.matrix = best_M;
  result.model = best_model;
  result.embeddings = project_samples(best_M, batch.features);
  result.final_loss = best_loss;
  return result;
}

struct StrengthUncertaintyReport {
  double pearson = 0.0;
  std::vector<double> strengths;
  std::vector<double> entropies;
};

/// Pearson correlation between |g_i| and the entropy of softmax(z_i).
inline StrengthUncertaintyReport strength_uncertainty_report(const Matrix& embeddings,
                                                             const Matrix& logits) {
  if (embeddings.rows() != logits.rows()) {
    throw DimensionError("sample_embed", "embeddings and logits disagree on the sample count");
  }
  if (embeddings.rows() < 2) throw DomainError("sample_embed", "need at least two samples");
  StrengthUncertaintyReport r;
  for (Eigen::Index i = 0; i < embeddings.rows(); ++i) {
    r.strengths.push_back(embeddings.row(i).norm());
    r.entropies.push_back(entropy(softmax(logits.row(i).transpose())));
  }
  r.pearson = pearson(r.strengths, r.entropies);
  return r;
}

}  // namespace discviz
