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

#include <cmath>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "discviz/region_embed.hpp"
#include "discviz/synth.hpp"
#include "oracles.hpp"

namespace discviz {
namespace {

KappaTable linear_table(int dim) {
  KappaTable t;
  t.dim = dim;
  t.sigma = 1.0;
  t.strengths = {0.0, 100.0};
  t.kappas = {0.5, 150.0};
  t.validate();
  return t;
}

RegionalFeatureMap random_fmap(int K, int H, int W, Rng& rng) {
  RegionalFeatureMap m{K, H, W, Matrix(H * W, K)};
  for (int r = 0; r < H * W; ++r) m.regions.row(r) = rng.normal_vector(K).transpose();
  return m;
}

std::vector<RegionSample> random_batch(int n, int K, int C, Rng& rng) {
  std::vector<RegionSample> b;
  for (int i = 0; i < n; ++i) {
    RegionSample s;
    s.id = "s" + std::to_string(i);
    s.label = static_cast<int>(rng.index(static_cast<std::size_t>(C)));
    s.logits = 2.0 * rng.normal_vector(C);
    s.fmap = random_fmap(K, 2, 2, rng);
    b.push_back(std::move(s));
  }
  return b;
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) m.row(i) = rng.normal_vector(c).transpose();
  return m;
}

// Straight-line KL[P || Q] for d' = 3 with C_3 in closed form.
double similarity_oracle(const std::vector<Matrix>& H, const std::vector<Vector>& w, const Matrix& P,
                         const KappaTable& t, Matrix* Q_out = nullptr) {
  const auto n = static_cast<Eigen::Index>(H.size());
  double total = 0.0;
  if (Q_out) *Q_out = Matrix::Zero(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    std::vector<double> scores;
    for (Eigen::Index b = 0; b < n; ++b) {
      if (b == a) continue;
      double s = 0.0;
      for (Eigen::Index r = 0; r < H[b].rows(); ++r) {
        const double l = H[b].row(r).norm();
        double best = -2.0;
        for (Eigen::Index m = 0; m < H[a].rows(); ++m) {
          best = std::max(best, H[b].row(r).dot(H[a].row(m)) / (l * H[a].row(m).norm()));
        }
        const double kappa = oracle::interpolate(t.strengths, t.kappas, l);
        s += w[b][r] * (oracle::log_c3(kappa) + kappa * best);
      }
      scores.push_back(s);
    }
    const auto q = oracle::softmax(scores);
    std::size_t k = 0;
    for (Eigen::Index b = 0; b < n; ++b) {
      if (b == a) continue;
      if (Q_out) (*Q_out)(a, b) = q[k];
      if (P(a, b) > 0.0) total += P(a, b) * std::log(P(a, b) / q[k]);
      ++k;
    }
  }
  return total / static_cast<double>(n);
}

Vector flat(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }
Matrix unflat(const Vector& v, Eigen::Index r, Eigen::Index c) { return Eigen::Map<const Matrix>(v.data(), r, c); }

TEST(RegionalFeatureMap, ChannelMajorRoundTrip) {
  std::vector<double> v(2 * 2 * 3);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  const auto m = RegionalFeatureMap::from_chw(v, 2, 2, 3);
  EXPECT_EQ(m.regions(4, 1), 10.0);
  EXPECT_EQ(m.to_chw(), v);
}

TEST(ProjectRegions, IdentityZeroAndSingleCell) {
  Rng rng(1);
  const auto f = random_fmap(4, 3, 3, rng);
  EXPECT_EQ(project_regions(Matrix::Identity(4, 4), f), f.regions);
  RegionalFeatureMap zero{4, 3, 3, Matrix::Zero(9, 4)};
  EXPECT_EQ(project_regions(random_matrix(3, 4, rng), zero), Matrix::Zero(9, 3));
  const auto one = random_fmap(4, 1, 1, rng);
  const Matrix L = random_matrix(3, 4, rng);
  EXPECT_LT((project_regions(L, one).row(0).transpose() - L * one.regions.row(0).transpose()).norm(), 1e-15);
}

TEST(SampleSimilarityP, ZeroConcentrationIsUniform) {
  Rng rng(2);
  const Matrix P = sample_similarity_p(random_matrix(5, 3, rng), 0.0);
  for (int a = 0; a < 5; ++a) {
    for (int b = 0; b < 5; ++b) EXPECT_DOUBLE_EQ(P(a, b), a == b ? 0.0 : 0.25);
  }
}

TEST(SampleSimilarityP, DuplicateDominates) {
  Matrix Z = Matrix::Identity(5, 5);
  Z.row(1) = Z.row(0);
  const Matrix P = sample_similarity_p(Z, 20.0);
  EXPECT_GT(P(0, 1), 0.99);
}

TEST(SampleSimilarityP, RowsSumToOne) {
  Rng rng(3);
  const Matrix P = sample_similarity_p(random_matrix(12, 4, rng), 7.0);
  for (int a = 0; a < 12; ++a) EXPECT_NEAR(P.row(a).sum(), 1.0, 1e-12);
}

TEST(SampleSimilarityP, ZeroLogitsRejected) {
  EXPECT_THROW(sample_similarity_p(Matrix::Zero(3, 2), 1.0), DomainError);
}

TEST(RegionMatch, PicksParallelRegion) {
  Matrix h1 = Matrix::Zero(3, 3);
  h1(0, 1) = 1.0;
  h1(1, 0) = 4.0;
  h1(2, 2) = 2.0;
  Vector h2 = Vector::Zero(3);
  h2[0] = 0.5;
  EXPECT_EQ(region_match(h2, h1, linear_table(3)).index, 1);
}

TEST(RegionMatch, TiesGoToFirst) {
  const Matrix h1 = Matrix::Ones(4, 3);
  Rng rng(4);
  EXPECT_EQ(region_match(rng.normal_vector(3), h1, linear_table(3)).index, 0);
}

TEST(RegionMatch, MatchesExhaustiveScan) {
  Rng rng(5);
  const auto t = linear_table(3);
  for (int k = 0; k < 100; ++k) {
    const Matrix h1 = random_matrix(9, 3, rng);
    const Vector h2 = 3.0 * rng.normal_vector(3);
    Eigen::Index best = 0;
    double best_cos = -2.0;
    for (Eigen::Index r = 0; r < 9; ++r) {
      const double c = h1.row(r).dot(h2) / (h1.row(r).norm() * h2.norm());
      if (c > best_cos) {
        best_cos = c;
        best = r;
      }
    }
    const auto m = region_match(h2, h1, t);
    EXPECT_EQ(m.index, best);
    const double kappa = oracle::interpolate(t.strengths, t.kappas, h2.norm());
    EXPECT_NEAR(m.log_likelihood, oracle::log_c3(kappa) + kappa * best_cos, 1e-10);
  }
}

TEST(RegionMatch, InvariantToRescalingWithConstantKappa) {
  Rng rng(6);
  const auto t = KappaTable::constant(3, 5.0);
  for (int k = 0; k < 50; ++k) {
    const Matrix h1 = random_matrix(6, 3, rng);
    const Vector h2 = rng.normal_vector(3);
    EXPECT_EQ(region_match(h2, h1, t).index, region_match(h2, 9.0 * h1, t).index);
  }
}

TEST(SimilarityObjective, MatchesStraightLineOracle) {
  Rng rng(7);
  const auto t = linear_table(3);
  for (int k = 0; k < 5; ++k) {
    std::vector<Matrix> H;
    std::vector<Vector> w;
    for (int i = 0; i < 6; ++i) {
      H.push_back(2.0 * random_matrix(4, 3, rng));
      Vector wi(4);
      for (int r = 0; r < 4; ++r) wi[r] = rng.uniform();
      w.push_back(wi / wi.sum());
    }
    const Matrix P = sample_similarity_p(random_matrix(6, 5, rng), 3.0);
    EXPECT_NEAR(similarity_objective(H, w, P, t, false).loss, similarity_oracle(H, w, P, t), 1e-10);
  }
}

TEST(SimilarityObjective, ZeroWhenPEqualsQ) {
  Rng rng(8);
  const auto t = linear_table(3);
  std::vector<Matrix> H;
  std::vector<Vector> w;
  for (int i = 0; i < 5; ++i) {
    H.push_back(random_matrix(3, 3, rng));
    w.push_back(Vector::Constant(3, 1.0 / 3.0));
  }
  Matrix Q;
  similarity_oracle(H, w, Matrix::Zero(5, 5), t, &Q);
  EXPECT_NEAR(similarity_objective(H, w, Q, t, false).loss, 0.0, 1e-12);
}

TEST(SimilarityObjective, TwoSamplesAlwaysZero) {
  Rng rng(9);
  const auto t = linear_table(3);
  const std::vector<Matrix> H{random_matrix(4, 3, rng), random_matrix(4, 3, rng)};
  const std::vector<Vector> w(2, Vector::Constant(4, 0.25));
  const Matrix P = sample_similarity_p(random_matrix(2, 3, rng), 2.0);
  EXPECT_NEAR(similarity_objective(H, w, P, t, false).loss, 0.0, 1e-15);
  EXPECT_THROW(similarity_objective({H[0]}, {w[0]}, Matrix::Zero(1, 1), t, false), DomainError);
}

TEST(SimilarityObjective, ThreadCountDoesNotChangeLoss) {
  Rng rng(10);
  const auto t = linear_table(3);
  std::vector<Matrix> H;
  std::vector<Vector> w;
  for (int i = 0; i < 9; ++i) {
    H.push_back(random_matrix(4, 3, rng));
    w.push_back(Vector::Constant(4, 0.25));
  }
  const Matrix P = sample_similarity_p(random_matrix(9, 4, rng), 3.0);
  const auto a = similarity_objective(H, w, P, t, true, 1);
  const auto b = similarity_objective(H, w, P, t, true, 3);
  EXPECT_NEAR(a.loss, b.loss, 1e-12);
  for (int i = 0; i < 9; ++i) EXPECT_LT((a.dH[i] - b.dH[i]).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(RegionLoss, GradientMatchesFiniteDifferencesWithMatchesFixed) {
  Rng rng(11);
  const auto t = linear_table(3);
  for (int k = 0; k < 5; ++k) {
    const auto batch = random_batch(6, 5, 3, rng);
    const Matrix G = random_matrix(6, 3, rng);
    std::vector<Vector> w;
    for (int i = 0; i < 6; ++i) {
      Vector wi(4);
      for (int r = 0; r < 4; ++r) wi[r] = 0.1 + rng.uniform();
      w.push_back(wi / wi.sum());
    }
    Matrix Z(6, 3);
    for (int i = 0; i < 6; ++i) Z.row(i) = batch[static_cast<std::size_t>(i)].logits.transpose();
    const Matrix P = sample_similarity_p(Z, 4.0);
    const Matrix L = random_matrix(3, 5, rng);
    const auto parts = region_loss(batch, L, G, w, P, t, 0.0, true);
    const auto report = grad_check(
        [&](const Vector& p) { return region_loss(batch, unflat(p, 3, 5), G, w, P, t, 0.0, false).total; },
        flat(L), flat(parts.gradient), 1e-5);
    EXPECT_LT(report.max_relative_error, 1e-4) << "instance " << k;
  }
}

TEST(AlignLoss, Examples) {
  Vector g(3);
  g << 0.0, 2.0, 0.0;
  Matrix par(2, 3);
  par << 0, 1, 0, 0, 5, 0;
  const Vector w = Vector::Constant(2, 0.5);
  EXPECT_NEAR(align_loss(par, w, g).loss, -1.0, 1e-15);
  Matrix perp(2, 3);
  perp << 1, 0, 0, 0, 0, 3;
  EXPECT_NEAR(align_loss(perp, w, g).loss, 0.0, 1e-15);
  Matrix opp(2, 3);
  opp << 0, 1, 0, 0, -2, 0;
  EXPECT_NEAR(align_loss(opp, w, g).loss, 0.0, 1e-15);
  EXPECT_THROW(align_loss(par, w, Vector::Zero(3)), DomainError);
}

TEST(AlignLoss, ValueAndClosedFormGradient) {
  Rng rng(12);
  for (int k = 0; k < 20; ++k) {
    const Matrix H = random_matrix(5, 3, rng);
    Vector w(5);
    for (int r = 0; r < 5; ++r) w[r] = rng.uniform();
    w /= w.sum();
    const Vector g = rng.normal_vector(3);
    const auto al = align_loss(H, w, g);
    double want = 0.0;
    for (int r = 0; r < 5; ++r) want -= w[r] * H.row(r).dot(g) / (H.row(r).norm() * g.norm());
    EXPECT_NEAR(al.loss, want, 1e-10);
    for (int r = 0; r < 5; ++r) {
      const Vector h = H.row(r).transpose();
      const Vector gu = g.normalized();
      const Vector o = h.normalized();
      const Vector d = -w[r] * (gu - gu.dot(o) * o) / h.norm();
      EXPECT_LT((al.dH.row(r).transpose() - d).cwiseAbs().maxCoeff(), 1e-6);
    }
    const auto report = grad_check([&](const Vector& p) { return align_loss(unflat(p, 5, 3), w, g).loss; }, flat(H),
                                   flat(al.dH), 1e-5);
    EXPECT_LT(report.max_relative_error, 1e-4);
  }
}

TEST(AlignLoss, GradientThroughLambda) {
  Rng rng(13);
  const auto batch = random_batch(4, 4, 2, rng);
  const Matrix G = random_matrix(4, 3, rng);
  const std::vector<Vector> w(4, Vector::Constant(4, 0.25));
  const Matrix L = random_matrix(3, 4, rng);
  const Matrix P = Matrix::Constant(4, 4, 1.0 / 3.0) - Matrix::Identity(4, 4) / 3.0;
  const auto t = linear_table(3);
  auto align_only = [&](const Matrix& l, bool grad) {
    auto all = region_loss(batch, l, G, w, P, t, 1.0, grad);
    auto sim = region_loss(batch, l, G, w, P, t, 0.0, grad);
    return std::pair{all.total - sim.total, grad ? Matrix(all.gradient - sim.gradient) : Matrix()};
  };
  const auto [v, grad] = align_only(L, true);
  (void)v;
  const auto report =
      grad_check([&](const Vector& p) { return align_only(unflat(p, 3, 4), false).first; }, flat(L), flat(grad), 1e-5);
  EXPECT_LT(report.max_relative_error, 1e-4);
}

struct AlignFixture {
  std::vector<RegionSample> batch;
  Matrix G;
  std::vector<Vector> w;
};

AlignFixture align_fixture() {
  Rng rng(14);
  auto spec = make_synth_spec(3, 8, 16, 2, 2, std::vector<int>(4, 1), 2.0, rng);
  spec.layers = {SynthLayer{"conv", 1.0, 0.05}};
  AlignFixture f;
  f.batch = gen_regional_batch(spec, 30, rng);
  f.G = Matrix::Zero(30, 3);
  for (int i = 0; i < 30; ++i) f.G(i, f.batch[static_cast<std::size_t>(i)].label) = 1.0;
  f.w.assign(30, Vector::Constant(4, 0.25));
  return f;
}

TEST(FitRegionProjection, LargeAlphaAligns) {
  const auto f = align_fixture();
  Rng rng(15);
  const auto table = build_kappa_table(3, 1.0, default_strength_grid(16.0), 2000, rng);
  SimilarityConfig c;
  c.alpha = 1e3;
  c.learning_rate = 1e-2;
  c.iterations = 100;
  const auto r = fit_region_projection(f.batch, f.G, f.w, table, c);
  EXPECT_GT(mean_alignment(f.batch, r.projection.matrix, f.G, f.w), 0.9);
  EXPECT_LE(r.final_loss, r.initial_loss);
  c.alpha = 0.0;
  const auto s = fit_region_projection(f.batch, f.G, f.w, table, c);
  EXPECT_LE(s.final_loss, s.initial_loss);
}

TEST(FitRegionProjection, InitializerIsNonzeroAndDeterministic) {
  const auto f = align_fixture();
  Rng rng(16);
  const auto table = build_kappa_table(3, 1.0, default_strength_grid(16.0), 2000, rng);
  SimilarityConfig c;
  c.iterations = 0;
  c.seed = 4;
  const auto a = fit_region_projection(f.batch, f.G, f.w, table, c);
  EXPECT_GT(a.projection.matrix.norm(), 0.0);
  c.iterations = 5;
  const auto b = fit_region_projection(f.batch, f.G, f.w, table, c);
  const auto b2 = fit_region_projection(f.batch, f.G, f.w, table, c);
  EXPECT_TRUE(b.projection.matrix == b2.projection.matrix);
  EXPECT_EQ(b.loss_trace, b2.loss_trace);
}

TEST(FitRegionProjection, Errors) {
  const auto f = align_fixture();
  const auto table = KappaTable::constant(3, 1.0);
  SimilarityConfig c;
  c.alpha = -1.0;
  EXPECT_THROW(fit_region_projection(f.batch, f.G, f.w, table, c), ConfigError);
  c = SimilarityConfig{};
  EXPECT_THROW(fit_region_projection({f.batch[0]}, f.G.topRows(1), {f.w[0]}, table, c), DomainError);
}

}  // namespace
}  // namespace discviz
