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

// Special functions, log-space arithmetic, samplers, statistics helpers and a
// central-difference gradient checker shared by the rest of the library.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <thread>
#include <vector>

#include "discviz/error.hpp"

namespace discviz {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Seeded random stream. Identical seed and identical call sequence give an
/// identical stream; each worker owns its own instance.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  /// Number of draws taken from the underlying engine so far.
  std::uint64_t draws() const { return draws_; }

  double uniform() {
    ++draws_;
    return std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
  }

  double normal() {
    ++draws_;
    return normal_(engine_);
  }

  double gamma(double shape) {
    ++draws_;
    return std::gamma_distribution<double>(shape, 1.0)(engine_);
  }

  double beta(double a, double b) {
    const double x = gamma(a);
    const double y = gamma(b);
    return x / (x + y);
  }

  std::size_t index(std::size_t n) {
    ++draws_;
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  Vector normal_vector(Eigen::Index dim) {
    Vector v(dim);
    for (Eigen::Index i = 0; i < dim; ++i) v[i] = normal();
    return v;
  }

  /// Uniform direction on the unit sphere in `dim` dimensions.
  Vector unit_vector(Eigen::Index dim) {
    for (;;) {
      Vector v = normal_vector(dim);
      const double n = v.norm();
      if (n > 1e-300) return v / n;
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t draws_ = 0;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

namespace detail {

inline void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) {
    throw DomainError("numutil", std::string(what) + " must be finite");
  }
}

// ln of sum_k t_k with t_0 = 1 and t_{k+1} = t_k * (x^2/4) / ((k+1)(k+order+1)),
// i.e. the power series of I_order(x) divided by its leading term. Accumulated
// against a running maximum so terms of size e^x never overflow.
inline double bessel_series_log_sum(double order, double x) {
  const double q = 0.25 * x * x;
  if (q == 0.0) return 0.0;
  const double log_q = std::log(q);
  double log_term = 0.0;
  double log_max = 0.0;
  double scaled_sum = 1.0;
  for (std::size_t k = 0;; ++k) {
    const double kk = static_cast<double>(k);
    log_term += log_q - std::log((kk + 1.0) * (kk + order + 1.0));
    if (log_term > log_max) {
      scaled_sum = scaled_sum * std::exp(log_max - log_term) + 1.0;
      log_max = log_term;
    } else {
      const double rel = std::exp(log_term - log_max);
      scaled_sum += rel;
      // Terms are decreasing once (k+1)(k+order+1) > q.
      if ((kk + 1.0) * (kk + order + 1.0) > q && rel < 1e-18 * scaled_sum) break;
    }
  }
  return log_max + std::log(scaled_sum);
}

// Large-argument (Hankel) expansion of e^{-x} sqrt(2 pi x) I_order(x). Returns
// false when the asymptotic series does not reach machine precision before its
// terms start to grow.
inline bool bessel_hankel_sum(double order, double x, double& sum) {
  const double mu = 4.0 * order * order;
  double term = 1.0;
  sum = 1.0;
  for (int k = 1; k < 400; ++k) {
    const double odd = 2.0 * k - 1.0;
    const double next = -term * (mu - odd * odd) / (8.0 * k * x);
    if (next == 0.0) return true;  // half-integer order: the series terminates
    if (std::abs(next) > std::abs(term)) return false;
    sum += next;
    term = next;
    if (std::abs(term) < 1e-17 * std::abs(sum)) return true;
  }
  return false;
}

inline constexpr double kBesselSeriesCutoff = 30.0;

}  // namespace detail

/// ln I_order(x), the log of the modified Bessel function of the first kind.
///
/// Power series below x = 30; above it the large-argument asymptotic expansion
/// whenever that expansion converges to machine precision, otherwise the
/// (always convergent) series evaluated in log space. Stable for x >= 1e4.
inline double log_bessel_i(double order, double x) {
  detail::require_finite(order, "Bessel order");
  detail::require_finite(x, "Bessel argument");
  if (order < 0.0) throw DomainError("numutil", "Bessel order must be nonnegative");
  if (x < 0.0) throw DomainError("numutil", "Bessel argument must be nonnegative");
  if (x == 0.0) {
    return order == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
  }
  const double lead = order * std::log(0.5 * x) - std::lgamma(order + 1.0);
  if (x < detail::kBesselSeriesCutoff) {
    return lead + detail::bessel_series_log_sum(order, x);
  }
  double sum = 0.0;
  if (detail::bessel_hankel_sum(order, x, sum) && sum > 0.0) {
    return x - 0.5 * std::log(2.0 * std::numbers::pi * x) + std::log(sum);
  }
  return lead + detail::bessel_series_log_sum(order, x);
}

/// ln C_d(kappa), the log normalizer of the vMF density on the (d-1)-sphere.
/// At kappa = 0 this is minus the log surface area of the sphere.
inline double log_vmf_norm_const(int dim, double kappa) {
  if (dim < 2) throw DomainError("numutil", "vMF dimension must be at least 2");
  detail::require_finite(kappa, "kappa");
  if (kappa < 0.0) throw DomainError("numutil", "kappa must be nonnegative");
  const double d = static_cast<double>(dim);
  const double order = 0.5 * d - 1.0;
  const double log_two_pi = std::log(2.0 * std::numbers::pi);
  if (kappa < detail::kBesselSeriesCutoff) {
    // kappa^order cancels against the series lead term; no limit branch needed.
    return -0.5 * d * log_two_pi + order * std::log(2.0) + std::lgamma(order + 1.0) -
           detail::bessel_series_log_sum(order, kappa);
  }
  return order * std::log(kappa) - 0.5 * d * log_two_pi - log_bessel_i(order, kappa);
}

/// Mean resultant length A_d(kappa) = I_{d/2}(kappa) / I_{d/2-1}(kappa).
/// Equals -d/dkappa ln C_d(kappa).
inline double vmf_mean_resultant(int dim, double kappa) {
  if (dim < 2) throw DomainError("numutil", "vMF dimension must be at least 2");
  if (kappa <= 0.0) return 0.0;
  const double order = 0.5 * dim - 1.0;
  return std::exp(log_bessel_i(order + 1.0, kappa) - log_bessel_i(order, kappa));
}

inline double logsumexp(std::span<const double> xs) {
  if (xs.empty()) throw DomainError("numutil", "logsumexp of an empty list");
  const double m = *std::max_element(xs.begin(), xs.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

inline double logsumexp(const Vector& xs) {
  return logsumexp(std::span<const double>(xs.data(), static_cast<std::size_t>(xs.size())));
}

inline Vector softmax(const Vector& scores) {
  if (scores.size() == 0) throw DomainError("numutil", "softmax of an empty vector");
  const double lse = logsumexp(scores);
  return (scores.array() - lse).exp().matrix();
}

/// Sample Pearson correlation coefficient.
inline double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) {
    throw DimensionError("numutil", "pearson: series lengths differ");
  }
  if (xs.size() < 2) throw DomainError("numutil", "pearson needs at least two points");
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) {
    throw UndefinedCorrelationError("numutil", "pearson: zero variance series");
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

inline double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
  return pearson(std::span<const double>(xs), std::span<const double>(ys));
}

/// Shannon entropy in nats, with 0 ln 0 := 0.
inline double entropy(std::span<const double> p) {
  if (p.empty()) throw DomainError("numutil", "entropy of an empty distribution");
  double total = 0.0;
  for (double pi : p) {
    if (!(pi >= 0.0)) throw DomainError("numutil", "entropy: negative probability");
    total += pi;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw DomainError("numutil", "entropy: probabilities do not sum to 1");
  }
  double h = 0.0;
  for (double pi : p) {
    if (pi > 0.0) h -= pi * std::log(pi);
  }
  return h;
}

inline double entropy(const Vector& p) {
  return entropy(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())));
}

/// Linear-interpolation quantile (q in [0, 1]) of an unsorted sample.
inline double quantile(std::vector<double> xs, double q) {
  if (xs.empty()) throw DomainError("numutil", "quantile of an empty sample");
  std::sort(xs.begin(), xs.end());
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, xs.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return xs[lo] + frac * (xs[hi] - xs[lo]);
}

/// Draw one unit vector from vMF(mu, kappa).
///
/// Rejection sampling of the cosine w = <x, mu> (Wood, 1994), then a uniform
/// direction in the tangent space of mu.
inline Vector sample_vmf(const Vector& mu, double kappa, Rng& rng) {
  const Eigen::Index dim = mu.size();
  if (dim < 2) throw DomainError("numutil", "sample_vmf: dimension must be at least 2");
  if (std::abs(mu.norm() - 1.0) > 1e-9) {
    throw DomainError("numutil", "sample_vmf: mean direction must have unit norm");
  }
  if (!(kappa >= 0.0) || !std::isfinite(kappa)) {
    throw DomainError("numutil", "sample_vmf: kappa must be finite and nonnegative");
  }
  const double dm1 = static_cast<double>(dim - 1);
  const double b = dm1 / (2.0 * kappa + std::sqrt(4.0 * kappa * kappa + dm1 * dm1));
  const double x0 = (1.0 - b) / (1.0 + b);
  const double c = kappa * x0 + dm1 * std::log(1.0 - x0 * x0);
  double w = 0.0;
  for (;;) {
    const double z = rng.beta(0.5 * dm1, 0.5 * dm1);
    w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
    const double u = rng.uniform();
    if (kappa * w + dm1 * std::log(1.0 - x0 * w) - c >= std::log(u)) break;
  }
  Vector tangent;
  for (;;) {
    tangent = rng.normal_vector(dim);
    tangent -= tangent.dot(mu) * mu;
    const double n = tangent.norm();
    if (n > 1e-12) {
      tangent /= n;
      break;
    }
  }
  Vector out = w * mu + std::sqrt(std::max(0.0, 1.0 - w * w)) * tangent;
  return out / out.norm();
}

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::vector<double> errors;
  double epsilon = 0.0;
};

/// Compare an analytic gradient with central differences of `loss`.
///
/// Per-coordinate error is |a - n| / max(|a|, |n|, abs_floor); the floor keeps
/// coordinates whose true derivative is ~0 from reporting roundoff as error.
inline GradCheckReport grad_check(const std::function<double(const Vector&)>& loss,
                                  const Vector& params, const Vector& analytic,
                                  double eps, double abs_floor = 1e-6) {
  if (!(eps > 0.0)) throw DomainError("numutil", "grad_check: eps must be positive");
  if (analytic.size() != params.size()) {
    throw DimensionError("numutil", "grad_check: gradient size differs from parameter size");
  }
  GradCheckReport report;
  report.epsilon = eps;
  report.errors.reserve(static_cast<std::size_t>(params.size()));
  Vector probe = params;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + eps;
    const double up = loss(probe);
    probe[i] = saved - eps;
    const double down = loss(probe);
    probe[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw EvaluationError("numutil", "grad_check: loss is not finite at probe " +
                                           std::to_string(i));
    }
    const double numeric = (up - down) / (2.0 * eps);
    const double scale = std::max({std::abs(analytic[i]), std::abs(numeric), abs_floor});
    const double err = std::abs(analytic[i] - numeric) / scale;
    report.errors.push_back(err);
    report.max_relative_error = std::max(report.max_relative_error, err);
  }
  return report;
}

/// Run fn(i) for i in [0, n) on up to `threads` workers with contiguous
/// chunks. Callers write per-index results and reduce them serially, which
/// keeps output independent of the thread count.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  const std::size_t workers =
      std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] {
      for (std::size_t i = begin; i < end; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

/// Run fn(begin, end, worker) over contiguous chunks of [0, n), one chunk per
/// worker. Results reduced in worker order are deterministic for a fixed
/// thread count.
template <class Fn>
void parallel_chunks(std::size_t n, int threads, Fn&& fn) {
  const std::size_t workers =
      std::max<std::size_t>(1, std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1))));
  const std::size_t chunk = n == 0 ? 0 : (n + workers - 1) / workers;
  if (workers == 1) {
    fn(std::size_t{0}, n, std::size_t{0});
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    pool.emplace_back([&fn, begin, end, w] { fn(begin, end, w); });
  }
  for (auto& t : pool) t.join();
}

/// Gradient descent with step halving. Each step starts from twice the last
/// accepted step (capped at `max_step`) and halves until the objective does not
/// increase; a step that cannot be accepted after 50 halvings ends the run.
/// `loss` may throw DomainError on infeasible trial points, which counts as a
/// rejection. Returns the objective after every step.
template <class Params, class LossGradFn, class LossFn, class StepFn>
std::vector<double> descend_with_backtracking(Params& x, double& value, int steps, double max_step,
                                              LossGradFn&& loss_grad, LossFn&& loss, StepFn&& step,
                                              const char* module) {
  std::vector<double> trace;
  double eta = max_step;
  for (int s = 0; s < steps; ++s) {
    auto [current, grad] = loss_grad(x);
    if (!std::isfinite(current)) {
      throw DivergenceError(module, "objective is not finite; use a smaller learning rate");
    }
    value = current;
    bool accepted = false;
    for (int halving = 0; halving < 50; ++halving, eta *= 0.5) {
      Params trial = step(x, grad, eta);
      double trial_value;
      try {
        trial_value = loss(trial);
      } catch (const DomainError&) {
        continue;
      }
      if (std::isfinite(trial_value) && trial_value <= current) {
        x = std::move(trial);
        value = trial_value;
        accepted = true;
        break;
      }
    }
    trace.push_back(value);
    if (!accepted) break;
    eta = std::min(2.0 * eta, max_step);
  }
  return trace;
}

/// Cosine similarity; zero if either vector is zero.
inline double cosine(const Vector& a, const Vector& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

}  // namespace discviz
