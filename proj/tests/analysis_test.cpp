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

#include "discviz/analysis.hpp"

namespace discviz {
namespace {

MixtureModel log_prob_model(int C) {
  KappaTable t;
  t.dim = C;
  t.sigma = 1.0;
  t.strengths = {0.0, 100.0};
  t.kappas = {0.0, 100.0};
  t.validate();
  return MixtureModel{Vector::Constant(C, 1.0 / C), Matrix::Identity(C, C), std::make_shared<const KappaTable>(t)};
}

PairedRegions random_pairs(Rng& rng, int n = 6, int R = 4, int d = 3) {
  PairedRegions p;
  p.layer = "conv";
  for (int i = 0; i < n; ++i) {
    Matrix H(R, d);
    for (int r = 0; r < R; ++r) H.row(r) = rng.normal_vector(d).transpose();
    p.ids.push_back("s" + std::to_string(i));
    p.a.push_back(H);
    p.b.push_back(H);
  }
  return p;
}

TEST(AttackUtilities, IdenticalConditions) {
  Rng rng(1);
  const auto u = attack_utilities(random_pairs(rng));
  EXPECT_NEAR(u.delta_orientation, 1.0, 1e-12);
  EXPECT_EQ(u.delta_strength, 0.0);
}

TEST(AttackUtilities, NegatedRegions) {
  Rng rng(2);
  auto p = random_pairs(rng);
  for (auto& H : p.b) H = -H;
  const auto u = attack_utilities(p);
  EXPECT_NEAR(u.delta_orientation, -1.0, 1e-12);
  EXPECT_NEAR(u.delta_strength, 0.0, 1e-12);
}

TEST(AttackUtilities, DoubledRegionsShiftStrengthOnly) {
  Rng rng(3);
  auto p = random_pairs(rng);
  double mean = 0.0;
  for (auto& H : p.b) {
    mean += H.rowwise().norm().mean();
    H *= 2.0;
  }
  mean /= static_cast<double>(p.b.size());
  const auto u = attack_utilities(p);
  EXPECT_NEAR(u.delta_orientation, 1.0, 1e-12);
  EXPECT_NEAR(u.delta_strength, mean, 1e-12);
}

TEST(AttackUtilities, OrthogonalPair) {
  PairedRegions p{"conv", {"x"}, {Matrix(1, 2)}, {Matrix(1, 2)}};
  p.a[0] << 3.0, 0.0;
  p.b[0] << 0.0, 1.0;
  const auto u = attack_utilities(p);
  EXPECT_NEAR(u.delta_orientation, 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(u.delta_strength, 2.0);
}

TEST(PairedRegions, MismatchIsAPairingError) {
  Rng rng(4);
  auto p = random_pairs(rng);
  p.b.pop_back();
  EXPECT_THROW(attack_utilities(p), PairingError);
  p = random_pairs(rng);
  p.b[2] = Matrix::Zero(3, 3);
  try {
    attack_utilities(p);
    FAIL() << "expected PairingError";
  } catch (const PairingError& e) {
    EXPECT_NE(std::string(e.what()).find("s2"), std::string::npos);
  }
}

TEST(Histogram, BinsAndClamping) {
  Histogram h(0.0, 1.0, 10);
  h.add(0.0);
  h.add(0.05);
  h.add(0.1);
  h.add(1.0);
  h.add(-3.0);
  EXPECT_EQ(h.counts[0], 3u);
  EXPECT_EQ(h.counts[1], 1u);
  EXPECT_EQ(h.counts[9], 1u);
  EXPECT_EQ(h.total(), 5u);
  EXPECT_EQ(h.edges.size(), 11u);
}

TEST(AttackedRegionHistogram, ThresholdOneSelectsNothing) {
  Rng rng(5);
  const auto p = random_pairs(rng, 5, 4, 3);
  const std::vector<int> orig(5, 0), adv(5, 1);
  EXPECT_EQ(attacked_region_histogram(p, log_prob_model(3), orig, adv, 1.0).total(), 0u);
}

TEST(AttackedRegionHistogram, UnattackedConfidentRegionsLandInTopBin) {
  PairedRegions p{"conv", {"x"}, {Matrix(2, 3)}, {}};
  p.a[0] << std::log(0.95), std::log(0.03), std::log(0.02), std::log(0.02), std::log(0.96), std::log(0.02);
  p.b = p.a;
  const auto h = attacked_region_histogram(p, log_prob_model(3), {0}, {0}, 0.4);
  EXPECT_EQ(h.total(), 1u);
  EXPECT_EQ(h.counts[9], 1u);
}

TEST(AttackedRegionHistogram, UninformativeOriginalsLandInLowBins) {
  PairedRegions p{"conv", {"x", "y"}, {Matrix::Zero(3, 4), Matrix::Zero(3, 4)}, {Matrix(3, 4), Matrix(3, 4)}};
  for (auto& H : p.b) {
    for (int r = 0; r < 3; ++r) H.row(r) << std::log(0.1), std::log(0.7), std::log(0.1), std::log(0.1);
  }
  const auto h = attacked_region_histogram(p, log_prob_model(4), {0, 0}, {1, 1}, 0.4);
  EXPECT_EQ(h.total(), 6u);
  EXPECT_EQ(h.counts[2], 6u);
}

class TrajectoryTest : public ::testing::Test {
 protected:
  MixtureModel model = log_prob_model(3);
  std::vector<double> refs{1.0, 2.0, 3.0, 4.0};
  Vector e(int i, double s) const {
    Vector v = Vector::Zero(3);
    v[i] = s;
    return v;
  }
};

TEST_F(TrajectoryTest, UnattackedRegionIsNone) {
  const Trajectory t{e(0, 1.0), e(0, 1.0), {e(0, 1.0)}, refs};
  EXPECT_EQ(classify_trajectory(t, model, 2), TrajectoryType::None);
}

TEST_F(TrajectoryTest, EmergingRegionIsType3) {
  const Trajectory t{e(0, 1.0), e(2, 10.0), {}, refs};
  EXPECT_EQ(classify_trajectory(t, model, 2), TrajectoryType::Type3);
}

TEST_F(TrajectoryTest, VanishingRegionIsType4) {
  const Trajectory t{e(0, 10.0), e(2, 1.0), {}, refs};
  EXPECT_EQ(classify_trajectory(t, model, 2), TrajectoryType::Type4);
}

TEST_F(TrajectoryTest, RotatingRegions) {
  Trajectory t{e(0, 10.0), e(2, 10.0), {e(1, 5.0), (e(1, 5.0) + e(2, 5.0))}, refs};
  EXPECT_EQ(classify_trajectory(t, model, 2), TrajectoryType::Type1);
  t.midpoints.push_back(e(1, 0.5));
  EXPECT_EQ(classify_trajectory(t, model, 2), TrajectoryType::Type2);
  t.midpoints.clear();
  EXPECT_EQ(classify_trajectory(t, model, 2), TrajectoryType::Indeterminate);
}

TEST_F(TrajectoryTest, ImportantButOffTargetIsNone) {
  const Trajectory t{e(0, 10.0), e(1, 10.0), {e(0, 10.0)}, refs};
  EXPECT_EQ(classify_trajectory(t, model, 2), TrajectoryType::None);
}

TEST_F(TrajectoryTest, Errors) {
  EXPECT_THROW(classify_trajectory(Trajectory{e(0, 1.0), e(0, 1.0), {}, {}}, model, 0), DomainError);
  EXPECT_THROW(classify_trajectory(Trajectory{e(0, 1.0), e(0, 1.0), {}, refs}, model, 0, {1.0, 0.4}), ConfigError);
  EXPECT_EQ(to_string(TrajectoryType::Type2), "type2");
}

TEST(DistillDissimilarity, IdenticalStudent) {
  Rng rng(6);
  const auto p = random_pairs(rng);
  const auto r = distill_dissimilarity(p);
  EXPECT_EQ(r.orientation.counts[0], r.orientation.total());
  EXPECT_EQ(r.orientation.total(), 24u);
  EXPECT_EQ(r.strength.counts[10], 24u);
}

TEST(DistillDissimilarity, NegatedStudentSitsAtTwo) {
  Rng rng(7);
  auto p = random_pairs(rng);
  for (auto& H : p.b) H = -H;
  const auto r = distill_dissimilarity(p);
  EXPECT_EQ(r.orientation.counts[19], 24u);
}

TEST(DistillDissimilarity, StrengthRangeIsSymmetric) {
  PairedRegions p{"conv", {"x"}, {Matrix(2, 2)}, {Matrix(2, 2)}};
  p.a[0] << 1.0, 0.0, 0.0, 2.0;
  p.b[0] << 3.0, 0.0, 0.0, 1.0;
  const auto r = distill_dissimilarity(p);
  EXPECT_DOUBLE_EQ(r.strength.edges.front(), -2.0);
  EXPECT_DOUBLE_EQ(r.strength.edges.back(), 2.0);
  EXPECT_EQ(r.strength.counts[19], 1u);
  EXPECT_EQ(r.strength.counts[5], 1u);
}

}  // namespace
}  // namespace discviz
