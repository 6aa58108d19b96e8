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
#include <memory>
#include <vector>

#include <gtest/gtest.h>

#include "discviz/sample_embed.hpp"
#include "discviz/synth.hpp"
#include "oracles.hpp"

namespace discviz {
namespace {

// Linear over the whole range used here, so finite differences see no kinks.
std::shared_ptr<const KappaTable> linear_table(int dim) {
  KappaTable t;
  t.dim = dim;
  t.sigma = 1.0;
  t.strengths = {0.0, 100.0};
  t.kappas = {0.0, 150.0};
  t.validate();
  return std::make_shared<const KappaTable>(t);
}

oracle::Rows rows(const Matrix& m) {
  oracle::Rows out(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m(i, j);
  }
  return out;
}

struct Instance {
  SampleBatch batch;
  Matrix M;
  MixtureModel model;
};

Instance random_instance(Rng& rng, int n = 12, int d = 6, int dp = 3, int C = 4) {
  Instance in;
  in.batch.features = Matrix(n, d);
  in.batch.logits = Matrix(n, C);
  for (int i = 0; i < n; ++i) {
    in.batch.features.row(i) = rng.normal_vector(d).transpose();
    in.batch.logits.row(i) = (2.0 * rng.normal_vector(C)).transpose();
    in.batch.labels.push_back(static_cast<int>(rng.index(static_cast<std::size_t>(C))));
  }
  in.M = Matrix(dp, d);
  for (int a = 0; a < dp; ++a) in.M.row(a) = rng.normal_vector(d).transpose();
  Matrix dirs(C, dp);
  for (int y = 0; y < C; ++y) dirs.row(y) = rng.unit_vector(dp).transpose();
  Vector pri(C);
  for (int y = 0; y < C; ++y) pri[y] = 0.5 + rng.uniform();
  in.model = MixtureModel{pri / pri.sum(), dirs, linear_table(dp)};
  return in;
}

Vector flat(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

Matrix unflat(const Vector& v, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

TEST(ProjectSample, IdentityZeroAndBasis) {
  Rng rng(1);
  const Vector f = rng.normal_vector(4);
  EXPECT_EQ(project_sample(Matrix::Identity(4, 4), f), f);
  EXPECT_EQ(project_sample(Matrix::Zero(3, 4), f), Vector::Zero(3));
  Matrix M(3, 8);
  for (int a = 0; a < 3; ++a) M.row(a) = rng.normal_vector(8).transpose();
  Vector e = Vector::Zero(8);
  e[5] = 1.0;
  EXPECT_EQ(project_sample(M, e), M.col(5));
  EXPECT_THROW(project_sample(M, f), DimensionError);
}

TEST(SampleKlLoss, ZeroWhenLogitsAreThePosterior) {
  Rng rng(2);
  auto in = random_instance(rng);
  for (Eigen::Index i = 0; i < in.batch.size(); ++i) {
    const Vector q = posterior(in.M * in.batch.features.row(i).transpose(), in.model);
    in.batch.logits.row(i) = q.array().log().matrix().transpose();
  }
  EXPECT_NEAR(sample_kl_loss(in.batch, in.M, in.model), 0.0, 1e-12);
}

TEST(SampleKlLoss, OneHotAgainstUniformIsLogC) {
  Rng rng(3);
  auto in = random_instance(rng, 10, 5, 3, 6);
  in.model.kappa_table = std::make_shared<const KappaTable>(KappaTable::constant(3, 0.0));
  in.model.priors = Vector::Constant(6, 1.0 / 6.0);
  for (Eigen::Index i = 0; i < in.batch.size(); ++i) {
    in.batch.logits.row(i).setZero();
    in.batch.logits(i, in.batch.labels[static_cast<std::size_t>(i)]) = 1000.0;
  }
  EXPECT_NEAR(sample_kl_loss(in.batch, in.M, in.model), std::log(6.0), 1e-12);
}

TEST(SampleKlLoss, MatchesStraightLineOracle) {
  Rng rng(4);
  for (int t = 0; t < 5; ++t) {
    const auto in = random_instance(rng);
    const double want =
        oracle::sample_kl(rows(in.batch.features), rows(in.batch.logits), rows(in.M),
                          std::vector<double>(in.model.priors.data(), in.model.priors.data() + in.model.priors.size()),
                          rows(in.model.directions), in.model.kappa_table->strengths, in.model.kappa_table->kappas);
    EXPECT_NEAR(sample_kl_loss(in.batch, in.M, in.model), want, 1e-10);
  }
}

TEST(SampleKlLoss, NonNegative) {
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    const auto in = random_instance(rng);
    EXPECT_GE(sample_kl_loss(in.batch, in.M, in.model), 0.0);
  }
}

TEST(SampleKlLoss, ZeroProjectionRejected) {
  Rng rng(6);
  auto in = random_instance(rng);
  EXPECT_THROW(sample_kl_loss(in.batch, Matrix::Zero(in.M.rows(), in.M.cols()), in.model), DomainError);
}

TEST(SampleKlGrad, StationaryAtSymmetricConfiguration) {
  SampleBatch b;
  b.features = Matrix::Identity(2, 2);
  b.logits = Matrix::Zero(2, 2);
  b.labels = {0, 1};
  Matrix dirs(2, 2);
  dirs << 1.0, 0.0, -1.0, 0.0;
  const MixtureModel m{Vector::Constant(2, 0.5), dirs, linear_table(2)};
  Matrix M(2, 2);
  M << 0.0, 0.0, 1.5, 2.5;
  const auto lg = sample_kl_grad(b, M, m);
  EXPECT_NEAR(lg.loss, 0.0, 1e-15);
  EXPECT_LT(lg.gradient.norm(), 1e-8);
}

TEST(SampleKlGrad, FiniteDifferences) {
  Rng rng(7);
  for (int t = 0; t < 5; ++t) {
    const auto in = random_instance(rng);
    const auto lg = sample_kl_grad(in.batch, in.M, in.model);
    const auto report = grad_check(
        [&](const Vector& p) { return sample_kl_loss(in.batch, unflat(p, in.M.rows(), in.M.cols()), in.model); },
        flat(in.M), flat(lg.gradient), 1e-5);
    EXPECT_LT(report.max_relative_error, 1e-4) << "instance " << t;
  }
}

TEST(SampleKlGrad, LogitShiftLeavesGradientUnchanged) {
  Rng rng(8);
  auto in = random_instance(rng);
  const auto a = sample_kl_grad(in.batch, in.M, in.model);
  in.batch.logits.array() += 42.0;
  const auto b = sample_kl_grad(in.batch, in.M, in.model);
  EXPECT_LT((a.gradient - b.gradient).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SampleKlLoss, ArgmaxInvariantToScalingWithConstantKappa) {
  Rng rng(9);
  auto in = random_instance(rng);
  in.model.kappa_table = std::make_shared<const KappaTable>(KappaTable::constant(3, 4.0));
  for (Eigen::Index i = 0; i < in.batch.size(); ++i) {
    const Vector f = in.batch.features.row(i).transpose();
    Eigen::Index a = 0, b = 0;
    posterior(in.M * f, in.model).maxCoeff(&a);
    posterior((5.0 * in.M) * f, in.model).maxCoeff(&b);
    EXPECT_EQ(a, b);
  }
}

SampleFitConfig quick_config() {
  SampleFitConfig c;
  c.kappa_samples = 2000;
  c.alternations = 5;
  c.gradient_steps = 10;
  return c;
}

TEST(FitSampleProjection, SingleCategoryHasZeroLoss) {
  Rng rng(10);
  SampleBatch b;
  b.features = Matrix(20, 5);
  b.logits = Matrix(20, 1);
  for (int i = 0; i < 20; ++i) {
    b.features.row(i) = rng.normal_vector(5).transpose();
    b.logits(i, 0) = rng.normal();
    b.labels.push_back(0);
  }
  auto c = quick_config();
  c.alternations = 1;
  const auto r = fit_sample_projection(b, c);
  EXPECT_EQ(r.final_loss, 0.0);
  for (double v : r.loss_trace) EXPECT_EQ(v, 0.0);
}

TEST(FitSampleProjection, ReducesSyntheticLossTenfold) {
  Rng rng(1);
  std::vector<int> mask(9, 0);
  mask[0] = mask[4] = 1;
  auto spec = make_synth_spec(10, 64, 16, 3, 3, mask, 0.5, rng);
  spec.kappa_true = 20.0;
  spec.sigma = 0.3;
  const auto batch = gen_sample_batch(spec, 2000, rng);
  SampleFitConfig c;
  c.seed = 3;
  const auto r = fit_sample_projection(batch, c);
  EXPECT_LT(r.final_loss, 0.1 * r.initial_loss);
  for (double v : r.loss_trace) EXPECT_TRUE(std::isfinite(v));
  EXPECT_LE(r.final_loss, r.initial_loss);
  const auto report = strength_uncertainty_report(r.embeddings, batch.logits);
  EXPECT_LE(report.pearson, -0.5);
}

TEST(FitSampleProjection, DeterministicForFixedSeed) {
  Rng rng(11);
  const auto in = random_instance(rng, 40, 8, 3, 4);
  auto c = quick_config();
  c.seed = 5;
  const auto a = fit_sample_projection(in.batch, c);
  const auto b = fit_sample_projection(in.batch, c);
  EXPECT_TRUE(a.projection.matrix == b.projection.matrix);
  EXPECT_EQ(a.loss_trace, b.loss_trace);
}

TEST(FitSampleProjection, ConfigErrors) {
  Rng rng(12);
  const auto in = random_instance(rng, 10, 4, 3, 2);
  auto c = quick_config();
  c.dim = 5;
  EXPECT_THROW(fit_sample_projection(in.batch, c), ConfigError);
  c = quick_config();
  c.learning_rate = 0.0;
  EXPECT_THROW(fit_sample_projection(in.batch, c), ConfigError);
}

TEST(StrengthUncertaintyReport, EqualEntropiesAreUndefined) {
  Matrix G(3, 2);
  G << 1, 0, 2, 0, 3, 0;
  EXPECT_THROW(strength_uncertainty_report(G, Matrix::Zero(3, 4)), UndefinedCorrelationError);
}

TEST(StrengthUncertaintyReport, ExactNegativeRelation) {
  Matrix Z(4, 3);
  Z << 0, 0, 0, 1, 0, 0, 3, 0, 0, 0, 2, 5;
  Matrix G = Matrix::Zero(4, 2);
  for (int i = 0; i < 4; ++i) G(i, 0) = 5.0 - entropy(softmax(Z.row(i).transpose()));
  EXPECT_NEAR(strength_uncertainty_report(G, Z).pearson, -1.0, 1e-12);
}

}  // namespace
}  // namespace discviz
