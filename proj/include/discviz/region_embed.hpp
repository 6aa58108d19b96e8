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

// Linear projection h = Lambda f of regional features. Lambda is fitted so
// that importance-weighted region-to-region matches reproduce the network's
// sample-to-sample similarity (a KL objective over the batch), plus an
// alignment term pulling each h toward its sample embedding g.

#pragma once

#include <span>
#include <string>
#include <vector>

#include "discviz/numutil.hpp"
#include "discviz/vmf.hpp"

namespace discviz {

/// K x H x W feature map stored as one row per spatial position (row-major
/// r = row * W + col), each row a K-channel regional feature.
struct RegionalFeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  Matrix regions;  // (H*W) x K

  Eigen::Index size() const { return regions.rows(); }

  /// From channel-major K x H x W values.
  static RegionalFeatureMap from_chw(std::span<const double> values, int K, int H, int W) {
    if (K < 1 || H < 1 || W < 1) throw DomainError("region_embed", "feature map dimensions must be positive");
    if (values.size() != static_cast<std::size_t>(K) * H * W) {
      throw DimensionError("region_embed", "feature map value count differs from K*H*W");
    }
    RegionalFeatureMap m{K, H, W, Matrix(H * W, K)};
    for (int k = 0; k < K; ++k) {
      for (int r = 0; r < H * W; ++r) {
        m.regions(r, k) = values[static_cast<std::size_t>(k) * H * W + r];
      }
    }
    return m;
  }

  /// Channel-major K x H x W values.
  std::vector<double> to_chw() const {
    std::vector<double> out(static_cast<std::size_t>(channels) * height * width);
    for (int k = 0; k < channels; ++k) {
      for (int r = 0; r < height * width; ++r) {
        out[static_cast<std::size_t>(k) * height * width + r] = regions(r, k);
      }
    }
    return out;
  }

  void validate() const {
    if (regions.rows() != static_cast<Eigen::Index>(height) * width || regions.cols() != channels) {
      throw DimensionError("region_embed", "feature map shape disagrees with its dimensions");
    }
    if (regions.rows() < 1) throw DomainError("region_embed", "feature map has no regions");
    if (!regions.allFinite()) throw DomainError("region_embed", "feature map contains non-finite values");
  }
};

struct RegionSample {
  std::string id;
  int label = 0;
  Vector logits;
  RegionalFeatureMap fmap;
};

struct RegionProjection {
  Matrix matrix;  // d' x K
};

struct SimilarityConfig {
  double kappa_p = 10.0;
  double alpha = 0.1;
  double learning_rate = 1.0;
  int iterations = 100;
  /// Mean strength of the initial regional embeddings, in units of the
  /// kappa table's sigma.
  double initial_strength = 2.0;
  std::uint64_t seed = 0;
  int threads = 1;
};

/// h^(r) = Lambda f^(r) for every region; rows follow the region order.
inline Matrix project_regions(const Matrix& lambda, const RegionalFeatureMap& fmap) {
  if (lambda.cols() != fmap.regions.cols()) {
    throw DimensionError("region_embed", "Lambda width differs from the channel count");
  }
  return fmap.regions * lambda.transpose();
}

/// P(x2 | x1) = exp[kappa_p cos(z2, z1)] normalized over x2 != x1 in the
/// batch; rows of Z are logit vectors. Zero diagonal, rows sum to 1.
inline Matrix sample_similarity_p(const Matrix& Z, double kappa_p) {
  const auto n = Z.rows();
  if (n < 2) throw DomainError("region_embed", "similarity needs at least two samples");
  Matrix unit(n, Z.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const double l = Z.row(i).norm();
    if (l == 0.0) throw DomainError("region_embed", "zero-norm logit vector");
    unit.row(i) = Z.row(i) / l;
  }
  const Matrix cos = unit * unit.transpose();
  Matrix P = Matrix::Zero(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index b = 0; b < n; ++b) {
      if (b != a) m = std::max(m, kappa_p * cos(a, b));
    }
    double s = 0.0;
    for (Eigen::Index b = 0; b < n; ++b) {
      if (b == a) continue;
      P(a, b) = std::exp(kappa_p * cos(a, b) - m);
      s += P(a, b);
    }
    P.row(a) /= s;
  }
  return P;
}

struct RegionMatch {
  Eigen::Index index = 0;
  double log_likelihood = 0.0;
};

namespace detail {

inline constexpr double kRegionStrengthFloor = 1e-8;

// Per-region polar decomposition plus the kappa(l) quantities the objective
// and its gradient need.
struct RegionGeometry {
  Matrix unit;             // R x d', zero rows for zero vectors
  Vector strength;         // |h|
  Vector kappa;            // kappa(max(|h|, floor))
  Vector kappa_slope;      // d kappa / d l (0 under the floor)
  Vector log_norm;         // ln C_d'(kappa)
  Vector mean_resultant;   // A_d'(kappa) = -d ln C / d kappa

  RegionGeometry(const Matrix& H, const KappaTable& table, bool with_derivatives) {
    const auto R = H.rows();
    const int d = static_cast<int>(H.cols());
    unit = Matrix::Zero(R, H.cols());
    strength.resize(R);
    kappa.resize(R);
    kappa_slope.resize(R);
    log_norm.resize(R);
    mean_resultant = Vector::Zero(R);
    for (Eigen::Index r = 0; r < R; ++r) {
      const double l = H.row(r).norm();
      strength[r] = l;
      if (l > 0.0) unit.row(r) = H.row(r) / (l + 1e-12);
      const auto k = kappa_lookup_with_slope(table, std::max(l, kRegionStrengthFloor));
      kappa[r] = k.kappa;
      kappa_slope[r] = l >= kRegionStrengthFloor ? k.slope : 0.0;
      log_norm[r] = log_vmf_norm_const(d, k.kappa);
      if (with_derivatives) mean_resultant[r] = vmf_mean_resultant(d, k.kappa);
    }
  }
};

// argmax over rows of `candidates` (unit or zero rows) of the cosine with the
// unit vector `o`; ties go to the lowest index.
inline Eigen::Index best_match(const Eigen::Ref<const Vector>& o, const Matrix& candidates, double& best_cos) {
  Eigen::Index best = 0;
  best_cos = -std::numeric_limits<double>::infinity();
  for (Eigen::Index r = 0; r < candidates.rows(); ++r) {
    const double c = candidates.row(r).dot(o);
    if (c > best_cos) {
      best_cos = c;
      best = r;
    }
  }
  return best;
}

}  // namespace detail

/// Region of h1 whose direction best explains h2_r under the revised vMF,
/// and the corresponding log-likelihood. Since kappa depends only on |h2_r|
/// this is the region with the largest cosine.
inline RegionMatch region_match(const Vector& h2_r, const Matrix& h1, const KappaTable& table) {
  if (h1.rows() == 0) throw DomainError("region_embed", "region_match: empty candidate set");
  if (h1.cols() != h2_r.size()) throw DimensionError("region_embed", "region_match: dimension mismatch");
  const detail::RegionGeometry cand(h1, table, false);
  const double l = h2_r.norm();
  const Vector o = l > 0.0 ? Vector(h2_r / (l + 1e-12)) : Vector::Zero(h2_r.size());
  double c = 0.0;
  const auto idx = detail::best_match(o, cand.unit, c);
  const double kappa = kappa_lookup(table, std::max(l, detail::kRegionStrengthFloor));
  return {idx, log_vmf_norm_const(static_cast<int>(h2_r.size()), kappa) + kappa * c};
}

struct RegionObjective {
  double loss = 0.0;
  /// dLoss/dH for every sample (same shapes as the projected regions).
  std::vector<Matrix> dH;
};

/// KL[P || Q] over the batch. ln Q~(x2|x1) = sum_r w2_r ln Q(h2_r | h1) with
/// the best-matching region of x1 held fixed, normalized by a softmax over
/// x2 != x1. `weights[i]` holds the region weights of sample i.
inline RegionObjective similarity_objective(const std::vector<Matrix>& H, const std::vector<Vector>& weights,
                                            const Matrix& P, const KappaTable& table, bool want_gradient,
                                            int threads = 1) {
  const auto n = static_cast<Eigen::Index>(H.size());
  if (n < 2) throw DomainError("region_embed", "similarity loss needs at least two samples");
  if (P.rows() != n || P.cols() != n || static_cast<Eigen::Index>(weights.size()) != n) {
    throw DimensionError("region_embed", "similarity loss: batch sizes disagree");
  }
  std::vector<detail::RegionGeometry> geo;
  geo.reserve(static_cast<std::size_t>(n));
  for (const auto& h : H) geo.emplace_back(h, table, want_gradient);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (weights[i].size() != H[i].rows()) {
      throw DimensionError("region_embed", "region weight count differs from region count");
    }
  }

  const auto workers = static_cast<std::size_t>(std::max(threads, 1));
  std::vector<double> partial_loss(workers, 0.0);
  std::vector<std::vector<Matrix>> partial_grad(workers);

  parallel_chunks(static_cast<std::size_t>(n), threads, [&](std::size_t begin, std::size_t end, std::size_t w) {
    auto& grad = partial_grad[w];
    if (want_gradient) {
      grad.resize(static_cast<std::size_t>(n));
      for (Eigen::Index i = 0; i < n; ++i) grad[i] = Matrix::Zero(H[i].rows(), H[i].cols());
    }
    std::vector<std::vector<Eigen::Index>> match(static_cast<std::size_t>(n));
    std::vector<std::vector<double>> match_cos(static_cast<std::size_t>(n));
    Vector S(n);
    for (auto a = static_cast<Eigen::Index>(begin); a < static_cast<Eigen::Index>(end); ++a) {
      for (Eigen::Index b = 0; b < n; ++b) {
        if (b == a) continue;
        const auto& gb = geo[b];
        auto& mb = match[b];
        auto& cb = match_cos[b];
        mb.resize(static_cast<std::size_t>(gb.unit.rows()));
        cb.resize(mb.size());
        double s = 0.0;
        for (Eigen::Index r = 0; r < gb.unit.rows(); ++r) {
          double c = 0.0;
          mb[r] = detail::best_match(gb.unit.row(r).transpose(), geo[a].unit, c);
          cb[r] = c;
          s += weights[b][r] * (gb.log_norm[r] + gb.kappa[r] * c);
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
        const auto& gb = geo[b];
        const auto& ga = geo[a];
        for (Eigen::Index r = 0; r < gb.unit.rows(); ++r) {
          const double wr = weights[b][r] * coef;
          if (wr == 0.0) continue;
          const Eigen::Index m = match[b][r];
          const double c = match_cos[b][r];
          const double l2 = std::max(gb.strength[r], detail::kRegionStrengthFloor);
          const auto o = gb.unit.row(r);
          const auto u = ga.unit.row(m);
          if (gb.strength[r] > 0.0) {
            grad[b].row(r) += wr * ((c - gb.mean_resultant[r]) * gb.kappa_slope[r] * o +
                                    (gb.kappa[r] / l2) * (u - c * o));
          }
          if (ga.strength[m] > 0.0) {
            const double l1 = std::max(ga.strength[m], detail::kRegionStrengthFloor);
            grad[a].row(m) += wr * (gb.kappa[r] / l1) * (o - c * u);
          }
        }
      }
      partial_loss[w] += kl;
    }
  });

  RegionObjective out;
  for (double v : partial_loss) out.loss += v;
  out.loss /= static_cast<double>(n);
  if (want_gradient) {
    out.dH.reserve(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) out.dH.push_back(Matrix::Zero(H[i].rows(), H[i].cols()));
    for (const auto& grad : partial_grad) {
      if (grad.empty()) continue;
      for (Eigen::Index i = 0; i < n; ++i) out.dH[i] += grad[i];
    }
  }
  return out;
}

struct AlignTerm {
  double loss = 0.0;
  Matrix dH;  // R x d'
};

/// -sum_r w_r cos(g, h_r) for one sample and its gradient with respect to the
/// regional features. Zero-norm regions contribute nothing.
inline AlignTerm align_loss(const Matrix& H, const Vector& w, const Vector& g) {
  if (H.rows() != w.size()) throw DimensionError("region_embed", "align_loss: weight count differs from region count");
  if (H.cols() != g.size()) throw DimensionError("region_embed", "align_loss: dimension mismatch");
  const double lg = g.norm();
  if (lg == 0.0) throw DomainError("region_embed", "align_loss: zero-norm sample embedding");
  const Vector gu = g / lg;
  AlignTerm out{0.0, Matrix::Zero(H.rows(), H.cols())};
  for (Eigen::Index r = 0; r < H.rows(); ++r) {
    const double l = H.row(r).norm();
    if (l == 0.0) continue;
    const Vector o = H.row(r).transpose() / l;
    const double c = gu.dot(o);
    out.loss -= w[r] * c;
    out.dH.row(r) = (-w[r] / l) * (gu - c * o).transpose();
  }
  return out;
}

/// The full regional objective L_similarity + alpha * L_align (the alignment
/// term averaged over samples), and its gradient with respect to Lambda.
struct RegionLossParts {
  double similarity = 0.0;
  double align = 0.0;
  double total = 0.0;
  Matrix gradient;  // d' x K
};

inline RegionLossParts region_loss(const std::vector<RegionSample>& batch, const Matrix& lambda,
                                   const Matrix& G, const std::vector<Vector>& weights, const Matrix& P,
                                   const KappaTable& table, double alpha, bool want_gradient,
                                   int threads = 1) {
  const auto n = static_cast<Eigen::Index>(batch.size());
  if (G.rows() != n) throw DimensionError("region_embed", "sample embeddings disagree with the batch size");
  if (G.cols() != lambda.rows()) throw DimensionError("region_embed", "embedding dimension differs from Lambda rows");
  std::vector<Matrix> H;
  H.reserve(batch.size());
  for (const auto& s : batch) H.push_back(project_regions(lambda, s.fmap));
  auto sim = similarity_objective(H, weights, P, table, want_gradient, threads);
  RegionLossParts out;
  out.similarity = sim.loss;
  if (want_gradient) out.gradient = Matrix::Zero(lambda.rows(), lambda.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    Matrix dH = want_gradient ? sim.dH[i] : Matrix();
    if (alpha != 0.0) {
      const auto al = align_loss(H[i], weights[i], G.row(i).transpose());
      out.align += al.loss / static_cast<double>(n);
      if (want_gradient) dH += (alpha / static_cast<double>(n)) * al.dH;
    }
    if (want_gradient) out.gradient.noalias() += dH.transpose() * batch[i].fmap.regions;
  }
  out.total = out.similarity + alpha * out.align;
  return out;
}

struct RegionFitResult {
  RegionProjection projection;
  std::vector<double> loss_trace;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

/// Gradient descent with step halving on L_similarity + alpha * L_align.
/// Best matches are recomputed at every evaluation.
inline RegionFitResult fit_region_projection(const std::vector<RegionSample>& batch, const Matrix& G,
                                             const std::vector<Vector>& weights, const KappaTable& table,
                                             const SimilarityConfig& config) {
  if (batch.size() < 2) throw DomainError("region_embed", "regional fit needs at least two samples");
  if (!(config.alpha >= 0.0) || !(config.kappa_p >= 0.0) || !(config.learning_rate > 0.0) ||
      !(config.initial_strength > 0.0) || config.iterations < 0) {
    throw ConfigError("region_embed", "invalid similarity configuration");
  }
  const int K = batch.front().fmap.channels;
  for (const auto& s : batch) {
    s.fmap.validate();
    if (s.fmap.channels != K) throw DimensionError("region_embed", "samples disagree on the channel count");
  }
  const auto dprime = G.cols();
  if (dprime > K) throw ConfigError("region_embed", "embedding dimension exceeds the channel count");
  Matrix Z(static_cast<Eigen::Index>(batch.size()), batch.front().logits.size());
  for (std::size_t i = 0; i < batch.size(); ++i) Z.row(static_cast<Eigen::Index>(i)) = batch[i].logits.transpose();
  const Matrix P = sample_similarity_p(Z, config.kappa_p);

  Rng rng(config.seed);
  Matrix lambda(dprime, K);
  for (Eigen::Index i = 0; i < lambda.rows(); ++i) {
    for (Eigen::Index j = 0; j < lambda.cols(); ++j) lambda(i, j) = rng.normal();
  }
  double total = 0.0;
  double count = 0.0;
  for (const auto& s : batch) {
    total += project_regions(lambda, s.fmap).rowwise().norm().sum();
    count += static_cast<double>(s.fmap.size());
  }
  if (!(total > 0.0)) throw DomainError("region_embed", "all regional features project to zero");
  const double unit = table.sigma > 0.0 ? table.sigma : 1.0;
  lambda *= config.initial_strength * unit * count / total;

  auto eval = [&](const Matrix& l, bool grad) {
    return region_loss(batch, l, G, weights, P, table, config.alpha, grad, config.threads);
  };
  RegionFitResult result;
  double value = eval(lambda, false).total;
  if (!std::isfinite(value)) throw DivergenceError("region_embed", "initial objective is not finite");
  result.initial_loss = value;
  result.loss_trace.push_back(value);
  const auto trace = descend_with_backtracking(
      lambda, value, config.iterations, config.learning_rate,
      [&](const Matrix& l) {
        auto parts = eval(l, true);
        return std::pair{parts.total, std::move(parts.gradient)};
      },
      [&](const Matrix& l) { return eval(l, false).total; },
      [](const Matrix& l, const Matrix& g, double eta) { return Matrix(l - eta * g); }, "region_embed");
  result.loss_trace.insert(result.loss_trace.end(), trace.begin(), trace.end());
  result.projection.matrix = lambda;
  result.final_loss = value;
  return result;
}

/// Mean over samples of sum_r w_r cos(g, h_r).
inline double mean_alignment(const std::vector<RegionSample>& batch, const Matrix& lambda, const Matrix& G,
                             const std::vector<Vector>& weights) {
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto H = project_regions(lambda, batch[i].fmap);
    total -= align_loss(H, weights[i], G.row(static_cast<Eigen::Index>(i)).transpose()).loss;
  }
  return total / static_cast<double>(batch.size());
}

}  // namespace discviz
