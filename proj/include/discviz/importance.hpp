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

// Per-sample region weights w and channel weights v. Both live on the
// probability simplex and are fitted on raw (unprojected) features so that
// weighted best-match region similarities reproduce the network's
// sample-to-sample similarity. An exact Shapley enumeration over regions is
// provided as an independent attribution to compare against.

#pragma once

#include <bit>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "discviz/numutil.hpp"
#include "discviz/region_embed.hpp"

namespace discviz {

struct ImportanceWeights {
  Vector w;  // one per region, nonnegative, sums to 1
  Vector v;  // one per channel, nonnegative, sums to 1
};

struct ImportanceConfig {
  double kappa_tilde = 1000.0;
  double kappa_p = 10.0;
  double learning_rate = 0.05;
  int iterations = 100;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct L1Projection {
  Vector values;
  /// Set when the input was all zeros and the uniform vector was returned.
  bool degenerate = false;
};

/// |x| / ||x||_1, or the uniform vector when x is all zeros.
inline L1Projection project_l1(const Vector& x) {
  if (x.size() == 0) throw DomainError("importance", "project_l1 of an empty vector");
  if (!x.allFinite()) throw DomainError("importance", "project_l1: non-finite input");
  const Vector a = x.cwiseAbs();
  const double s = a.sum();
  if (s == 0.0) {
    return {Vector::Constant(x.size(), 1.0 / static_cast<double>(x.size())), true};
  }
  return {a / s, false};
}

/// ln of the unnormalized match score between region f2_r of x2 and region
/// f1_r' of x1: kappa~ * sum_k v_k (f2_k / |f2|) (f1_k / |f1|).
inline double raw_region_score(const Vector& f2_r, const Vector& f1_r, const Vector& v2, double kappa_tilde) {
  if (f2_r.size() != f1_r.size() || v2.size() != f2_r.size()) {
    throw DimensionError("importance", "raw_region_score: dimension mismatch");
  }
  const double n2 = f2_r.norm();
  const double n1 = f1_r.norm();
  if (n2 == 0.0 || n1 == 0.0) throw DomainError("importance", "raw_region_score: zero-norm feature");
  return kappa_tilde * (v2.array() * f2_r.array() * f1_r.array()).sum() / (n2 * n1);
}

namespace detail {

inline Matrix unit_rows(const Matrix& X) {
  Matrix U = Matrix::Zero(X.rows(), X.cols());
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const double l = X.row(r).norm();
    if (l > 0.0) U.row(r) = X.row(r) / l;
  }
  return U;
}

}  // namespace detail

struct ImportanceObjective {
  double loss = 0.0;
  Matrix dW;  // n x R
  Matrix dV;  // n x K
};

/// KL[P || Q_w] with ln Q~_w(x2|x1) = sum_r w2_r max_r' score(f2_r, f1_r'),
/// softmax-normalized over x2 != x1. Rows of W and V belong to samples.
/// `unit[i]` holds the L2-normalized regions of sample i (zero rows allowed).
inline ImportanceObjective importance_objective(const std::vector<Matrix>& unit, const Matrix& W,
                                                const Matrix& V, const Matrix& P, double kappa_tilde,
                                                bool want_gradient, int threads = 1) {
  const auto n = static_cast<Eigen::Index>(unit.size());
  if (n < 2) throw DomainError("importance", "importance loss needs at least two samples");
  if (W.rows() != n || V.rows() != n || P.rows() != n || P.cols() != n) {
    throw DimensionError("importance", "importance loss: batch sizes disagree");
  }
  for (const auto& u : unit) {
    if (u.rows() != W.cols() || u.cols() != V.cols()) {
      throw DimensionError("importance", "importance loss: weight shapes differ from feature maps");
    }
  }
  const auto workers = static_cast<std::size_t>(std::max(threads, 1));
  std::vector<double> partial_loss(workers, 0.0);
  std::vector<Matrix> partial_dW(workers), partial_dV(workers);

  parallel_chunks(static_cast<std::size_t>(n), threads, [&](std::size_t begin, std::size_t end, std::size_t wk) {
    if (want_gradient) {
      partial_dW[wk] = Matrix::Zero(W.rows(), W.cols());
      partial_dV[wk] = Matrix::Zero(V.rows(), V.cols());
    }
    const auto R = W.cols();
    Matrix best(n, R);
    std::vector<std::vector<Eigen::Index>> arg(static_cast<std::size_t>(n), std::vector<Eigen::Index>(static_cast<std::size_t>(R)));
    Vector S(n);
    for (auto a = static_cast<Eigen::Index>(begin); a < static_cast<Eigen::Index>(end); ++a) {
      for (Eigen::Index b = 0; b < n; ++b) {
        if (b == a) continue;
        // scores(r, r') = kappa~ * sum_k v_bk fhat_b(r,k) fhat_a(r',k)
        const Matrix weighted = unit[b] * V.row(b).asDiagonal();
        const Matrix scores = kappa_tilde * (weighted * unit[a].transpose());
        double s = 0.0;
        for (Eigen::Index r = 0; r < R; ++r) {
          Eigen::Index m = 0;
          best(b, r) = scores.row(r).maxCoeff(&m);
          arg[b][r] = m;
          s += W(b, r) * best(b, r);
        }
        S[b] = s;
      }
      S[a] = -std::numeric_limits<double>::infinity();
      const double lse = logsumexp(S);
      double kl = 0.0;
      for (Eigen::Index b = 0; b < n; ++b) {
        if (b == a) continue;
        const double p = P(a, b);
        const double log_q = S[b] - lse;
        if (p > 0.0) kl += p * (std::log(p) - log_q);
        if (!want_gradient) continue;
        const double coef = (std::exp(log_q) - p) / static_cast<double>(n);
        partial_dW[wk].row(b) += coef * best.row(b);
        for (Eigen::Index r = 0; r < R; ++r) {
          const double c = coef * W(b, r) * kappa_tilde;
          if (c == 0.0) continue;
          partial_dV[wk].row(b) += c * unit[b].row(r).cwiseProduct(unit[a].row(arg[b][r]));
        }
      }
      partial_loss[wk] += kl;
    }
  });

  ImportanceObjective out;
  for (double v : partial_loss) out.loss += v;
  out.loss /= static_cast<double>(n);
  if (want_gradient) {
    out.dW = Matrix::Zero(W.rows(), W.cols());
    out.dV = Matrix::Zero(V.rows(), V.cols());
    for (std::size_t wk = 0; wk < workers; ++wk) {
      if (partial_dW[wk].size() == 0) continue;
      out.dW += partial_dW[wk];
      out.dV += partial_dV[wk];
    }
  }
  return out;
}

inline Matrix batch_logits(const std::vector<RegionSample>& batch) {
  if (batch.empty()) throw DomainError("importance", "empty batch");
  Matrix Z(static_cast<Eigen::Index>(batch.size()), batch.front().logits.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].logits.size() != Z.cols()) throw DimensionError("importance", "samples disagree on the logit count");
    Z.row(static_cast<Eigen::Index>(i)) = batch[i].logits.transpose();
  }
  return Z;
}

/// The importance objective for a batch and per-sample weights.
inline ImportanceObjective importance_kl_loss(const std::vector<RegionSample>& batch,
                                              const std::vector<ImportanceWeights>& weights,
                                              const ImportanceConfig& config, bool want_gradient = true) {
  if (batch.size() != weights.size()) throw DimensionError("importance", "one weight set per sample is required");
  if (batch.size() < 2) throw DomainError("importance", "importance loss needs at least two samples");
  const auto R = batch.front().fmap.regions.rows();
  const auto K = batch.front().fmap.regions.cols();
  std::vector<Matrix> unit;
  Matrix W(static_cast<Eigen::Index>(batch.size()), R), V(static_cast<Eigen::Index>(batch.size()), K);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    unit.push_back(detail::unit_rows(batch[i].fmap.regions));
    if (weights[i].w.size() != R || weights[i].v.size() != K) {
      throw DimensionError("importance", "weight shapes differ from feature maps");
    }
    W.row(static_cast<Eigen::Index>(i)) = weights[i].w.transpose();
    V.row(static_cast<Eigen::Index>(i)) = weights[i].v.transpose();
  }
  const Matrix P = sample_similarity_p(batch_logits(batch), config.kappa_p);
  return importance_objective(unit, W, V, P, config.kappa_tilde, want_gradient, config.threads);
}

struct ImportanceFitResult {
  std::vector<ImportanceWeights> weights;
  std::vector<double> loss_trace;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  /// Projections (trial steps included) that fell back to the uniform vector.
  int degenerate_projections = 0;
};

/// Alternate a joint gradient step on (w, v) with projection of both back onto
/// the simplex. Steps are halved until the projected objective does not
/// increase. Starts from uniform weights.
inline ImportanceFitResult fit_importance(const std::vector<RegionSample>& batch, const ImportanceConfig& config) {
  if (batch.size() < 2) throw DomainError("importance", "fit_importance needs at least two samples");
  if (!(config.kappa_tilde > 0.0) || !(config.learning_rate > 0.0) || config.iterations < 0) {
    throw ConfigError("importance", "invalid importance configuration");
  }
  const auto n = static_cast<Eigen::Index>(batch.size());
  const auto R = batch.front().fmap.regions.rows();
  const auto K = batch.front().fmap.regions.cols();
  std::vector<Matrix> unit;
  for (const auto& s : batch) {
    s.fmap.validate();
    if (s.fmap.regions.rows() != R || s.fmap.regions.cols() != K) {
      throw DimensionError("importance", "samples disagree on the feature map shape");
    }
    unit.push_back(detail::unit_rows(s.fmap.regions));
  }
  const Matrix P = sample_similarity_p(batch_logits(batch), config.kappa_p);

  struct Params {
    Matrix W, V;
  };
  Params x{Matrix::Constant(n, R, 1.0 / static_cast<double>(R)),
           Matrix::Constant(n, K, 1.0 / static_cast<double>(K))};
  ImportanceFitResult result;
  auto loss = [&](const Params& p) {
    return importance_objective(unit, p.W, p.V, P, config.kappa_tilde, false, config.threads).loss;
  };
  double value = loss(x);
  if (!std::isfinite(value)) throw DivergenceError("importance", "initial objective is not finite");
  result.initial_loss = value;
  result.loss_trace.push_back(value);
  int degenerate = 0;
  const auto trace = descend_with_backtracking(
      x, value, config.iterations, config.learning_rate,
      [&](const Params& p) {
        auto obj = importance_objective(unit, p.W, p.V, P, config.kappa_tilde, true, config.threads);
        return std::pair{obj.loss, Params{std::move(obj.dW), std::move(obj.dV)}};
      },
      loss,
      [&](const Params& p, const Params& g, double eta) {
        Params next{p.W - eta * g.W, p.V - eta * g.V};
        for (Eigen::Index i = 0; i < n; ++i) {
          auto pw = project_l1(next.W.row(i).transpose());
          auto pv = project_l1(next.V.row(i).transpose());
          degenerate += static_cast<int>(pw.degenerate) + static_cast<int>(pv.degenerate);
          next.W.row(i) = pw.values.transpose();
          next.V.row(i) = pv.values.transpose();
        }
        return next;
      },
      "importance");
  result.loss_trace.insert(result.loss_trace.end(), trace.begin(), trace.end());
  result.final_loss = value;
  result.degenerate_projections = degenerate;
  for (Eigen::Index i = 0; i < n; ++i) {
    result.weights.push_back({x.W.row(i).transpose(), x.V.row(i).transpose()});
  }
  return result;
}

// ---------------------------------------------------------------------------
// Exact Shapley values over regions.

enum class HeadOutput { Logit, Probability };

/// Linear classifier over the spatial average of a feature map:
/// z = W * mean_r f^(r) + b, read out as a logit or a softmax probability.
struct LinearHead {
  Matrix weights;  // C x K
  Vector bias;     // C
  HeadOutput output = HeadOutput::Probability;

  Vector logits(const Matrix& regions) const {
    const Vector mean = regions.colwise().mean().transpose();
    return weights * mean + bias;
  }

  double score(const Matrix& regions, int target) const {
    const Vector z = logits(regions);
    if (output == HeadOutput::Logit) return z[target];
    return softmax(z)[target];
  }

  std::string describe() const {
    return std::string(output == HeadOutput::Logit ? "linear-logit" : "linear-softmax") +
           " head over spatial mean, C=" + std::to_string(weights.rows()) +
           " K=" + std::to_string(weights.cols());
  }
};

enum class BaselinePolicy { DatasetMean, Zero };

inline std::string to_string(BaselinePolicy p) {
  return p == BaselinePolicy::DatasetMean ? "dataset_mean" : "zero";
}

struct ShapleyReport {
  std::vector<double> phi;
  std::string baseline_policy;
  std::string head;
  double value_full = 0.0;
  double value_empty = 0.0;
  /// sum(phi) - (value_full - value_empty)
  double efficiency_residual = 0.0;
};

inline constexpr int kMaxShapleyPlayers = 16;

/// Shapley values of an N-player game (N <= 16) by full enumeration.
/// `value(mask)` is the worth of the coalition whose members are the set bits.
inline std::vector<double> shapley_values(int players, const std::function<double(std::uint32_t)>& value) {
  if (players < 1) throw DomainError("importance", "Shapley game needs at least one player");
  if (players > kMaxShapleyPlayers) {
    throw SizeError("importance", "exact Shapley enumeration is limited to 16 players, got " +
                                      std::to_string(players));
  }
  const std::uint32_t count = 1u << players;
  std::vector<double> worth(count);
  for (std::uint32_t m = 0; m < count; ++m) worth[m] = value(m);
  // weight[s] = s! (N - s - 1)! / N!
  std::vector<double> weight(static_cast<std::size_t>(players));
  for (int s = 0; s < players; ++s) {
    weight[static_cast<std::size_t>(s)] =
        std::exp(std::lgamma(s + 1.0) + std::lgamma(players - s + 0.0) - std::lgamma(players + 1.0));
  }
  std::vector<double> phi(static_cast<std::size_t>(players), 0.0);
  for (int r = 0; r < players; ++r) {
    const std::uint32_t bit = 1u << r;
    double acc = 0.0;
    for (std::uint32_t m = 0; m < count; ++m) {
      if (m & bit) continue;
      acc += weight[static_cast<std::size_t>(std::popcount(m))] * (worth[m | bit] - worth[m]);
    }
    phi[static_cast<std::size_t>(r)] = acc;
  }
  return phi;
}

/// Per-channel mean over every region of every sample.
inline Vector channel_means(const std::vector<RegionSample>& batch) {
  if (batch.empty()) throw DomainError("importance", "channel_means of an empty batch");
  Vector sum = Vector::Zero(batch.front().fmap.regions.cols());
  double count = 0.0;
  for (const auto& s : batch) {
    sum += s.fmap.regions.colwise().sum().transpose();
    count += static_cast<double>(s.fmap.regions.rows());
  }
  return sum / count;
}

/// Shapley value of every region for the head's `target` output. Regions
/// outside a coalition are replaced by `baseline`.
inline ShapleyReport exact_shapley(const RegionalFeatureMap& fmap, const LinearHead& head, int target,
                                   const Vector& baseline, BaselinePolicy policy) {
  const auto R = fmap.regions.rows();
  if (R > kMaxShapleyPlayers) {
    throw SizeError("importance", "exact Shapley enumeration is limited to 16 regions, got " + std::to_string(R));
  }
  if (baseline.size() != fmap.regions.cols() || head.weights.cols() != fmap.regions.cols()) {
    throw DimensionError("importance", "exact_shapley: channel count mismatch");
  }
  if (target < 0 || target >= head.weights.rows()) throw DomainError("importance", "exact_shapley: bad target");
  Matrix masked(R, fmap.regions.cols());
  auto value = [&](std::uint32_t mask) {
    for (Eigen::Index r = 0; r < R; ++r) {
      if (mask & (1u << r)) {
        masked.row(r) = fmap.regions.row(r);
      } else {
        masked.row(r) = baseline.transpose();
      }
    }
    return head.score(masked, target);
  };
  ShapleyReport report;
  report.phi = shapley_values(static_cast<int>(R), value);
  report.baseline_policy = to_string(policy);
  report.head = head.describe();
  report.value_full = value((1u << R) - 1u);
  report.value_empty = value(0u);
  double total = 0.0;
  for (double p : report.phi) total += p;
  report.efficiency_residual = total - (report.value_full - report.value_empty);
  return report;
}

inline double importance_shapley_correlation(const Vector& w, const std::vector<double>& phi) {
  if (static_cast<std::size_t>(w.size()) != phi.size()) {
    throw DimensionError("importance", "importance and Shapley vectors differ in length");
  }
  return pearson(std::span<const double>(w.data(), static_cast<std::size_t>(w.size())),
                 std::span<const double>(phi));
}

}  // namespace discviz
