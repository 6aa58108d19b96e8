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
#include <cstdlib>
#include <filesystem>
#include <string>

#include <gtest/gtest.h>

#include "discviz/discviz.hpp"

namespace discviz {
namespace {

namespace fs = std::filesystem;

struct Run {
  int code = 0;
  std::string err;
};

fs::path scratch() { return fs::temp_directory_path() / "discviz_cli_test"; }

Run cli(const std::string& args) {
  const fs::path err = scratch() / "stderr.txt";
  const std::string cmd = std::string("\"") + DISCVIZ_CLI + "\" " + args + " > /dev/null 2> \"" + err.string() + "\"";
  Run r;
  r.code = std::system(cmd.c_str());
  r.err = fs::exists(err) ? read_file(err) : "";
  return r;
}

nlohmann::json load(const fs::path& p) { return nlohmann::json::parse(read_file(p)); }

// One small synthetic dataset run through every stage, shared by the tests.
class CliPipeline : public ::testing::Test {
 protected:
  static fs::path root() { return scratch() / "pipeline"; }
  static std::string manifest() { return (root() / "dataset" / "manifest.json").string(); }
  static std::string perturbed() { return (root() / "perturbed" / "manifest.json").string(); }

  static void SetUpTestSuite() {
    fs::remove_all(scratch());
    fs::create_directories(scratch());
    const std::string out = " --out \"" + root().string() + "\" --seed 1";
    const std::string fast = " --layers conv2,conv3 --iterations 15 --importance-iterations 15";
    ok_ = cli("synth --perturb-layer conv3" + out).code == 0 &&
          cli("fit-sample --manifest \"" + manifest() + "\"" + out).code == 0 &&
          cli("fit-region --manifest \"" + manifest() + "\"" + out + fast).code == 0 &&
          cli("knowledge --manifest \"" + manifest() + "\" --layers conv2,conv3" + out).code == 0;
  }
  static void TearDownTestSuite() { fs::remove_all(scratch()); }

  void SetUp() override { ASSERT_TRUE(ok_) << "pipeline setup failed"; }

  static inline bool ok_ = false;
};

TEST_F(CliPipeline, FitSampleReportsNegativeStrengthEntropyCorrelation) {
  const auto s = load(root() / "sample" / "summary.json");
  EXPECT_EQ(s["command"], "fit-sample");
  EXPECT_LE(s["metrics"]["strength_entropy_pearson"].get<double>(), -0.5);
  EXPECT_LT(s["metrics"]["final_kl"].get<double>(), s["metrics"]["initial_kl"].get<double>());
  for (const auto& o : s["outputs"]) EXPECT_TRUE(fs::exists(root() / o.get<std::string>())) << o;
}

TEST_F(CliPipeline, FitRegionWritesNormalizedLayers) {
  const auto s = load(root() / "region" / "summary.json");
  EXPECT_EQ(s["metrics"]["reference_layer"], "conv3");
  ASSERT_EQ(s["metrics"]["layers"].size(), 2u);
  EXPECT_EQ(s["metrics"]["layers"][1]["strength_scale"].get<double>(), 1.0);
  for (const auto& o : s["outputs"]) EXPECT_TRUE(fs::exists(root() / o.get<std::string>())) << o;
}

TEST_F(CliPipeline, ExportsCarryCategoriesAndRegionEntries) {
  const auto e = load(root() / "sample" / "embeddings.json");
  ASSERT_EQ(e["categories"].size(), 10u);
  double pi = 0.0;
  for (const auto& c : e["categories"]) pi += c["pi"].get<double>();
  EXPECT_NEAR(pi, 1.0, 1e-12);
  EXPECT_FALSE(e["loss_trace"].empty());

  const auto r = load(root() / "region" / "conv3" / "regions.json");
  for (const auto& s : r["samples"]) {
    double w = 0.0;
    for (const auto& cell : s["regions"]) {
      w += cell["w"].get<double>();
      double n = 0.0;
      for (const auto& x : cell["h"]) n += x.get<double>() * x.get<double>();
      EXPECT_NEAR(cell["strength"].get<double>(), std::sqrt(n), 1e-12);
      EXPECT_LT(cell["posterior_argmax"].get<int>(), 10);
    }
    EXPECT_NEAR(w, 1.0, 1e-9);
  }
  EXPECT_FALSE(load(root() / "region" / "conv3" / "importance.json")["loss_trace"].empty());
}

TEST_F(CliPipeline, KnowledgeEmitsMonotoneSweep) {
  const auto k = load(root() / "knowledge" / "final.json");
  ASSERT_EQ(k["layers"].size(), 2u);
  for (const auto& l : k["layers"]) {
    EXPECT_TRUE(l["tau_monotone"].get<bool>());
    EXPECT_LE(l["reliable"].get<int>(), l["total"].get<int>());
  }
}

TEST_F(CliPipeline, AttackAgainstItselfIsUnchanged) {
  const fs::path out = scratch() / "self";
  fs::remove_all(out);
  fs::create_directories(out);
  fs::copy(root() / "sample", out / "sample", fs::copy_options::recursive);
  fs::copy(root() / "region", out / "region", fs::copy_options::recursive);
  ASSERT_EQ(cli("attack --manifest \"" + manifest() + "\" --pair \"" + manifest() + "\" --layers conv2,conv3 --out \"" +
                out.string() + "\"")
                .code,
            0);
  for (const auto& l : load(out / "attack" / "report.json")["layers"]) {
    EXPECT_NEAR(l["utilities"]["delta_orientation"].get<double>(), 1.0, 1e-12);
    EXPECT_EQ(l["utilities"]["delta_strength"].get<double>(), 0.0);
  }
}

TEST_F(CliPipeline, AttackOnPerturbedLayer) {
  ASSERT_EQ(cli("attack --manifest \"" + manifest() + "\" --pair \"" + perturbed() + "\" --layers conv2,conv3 --out \"" +
                root().string() + "\"")
                .code,
            0);
  const auto layers = load(root() / "attack" / "report.json")["layers"];
  EXPECT_EQ(layers[0]["utilities"]["delta_strength"].get<double>(), 0.0);
  EXPECT_GT(layers[1]["utilities"]["delta_strength"].get<double>(), 0.0);
}

TEST_F(CliPipeline, DistillWritesHistograms) {
  ASSERT_EQ(cli("distill --manifest \"" + manifest() + "\" --pair \"" + perturbed() + "\" --layers conv2,conv3 --out \"" +
                root().string() + "\"")
                .code,
            0);
  const auto layers = load(root() / "distill" / "report.json")["layers"];
  ASSERT_EQ(layers.size(), 2u);
  EXPECT_EQ(layers[0]["orientation"]["counts"][0].get<int>(), layers[0]["orientation"]["total"].get<int>());
  EXPECT_EQ(layers[0]["orientation"]["edges"].size(), 21u);
}

TEST_F(CliPipeline, MismatchedSamplesArePairingErrors) {
  auto doc = load(perturbed());
  doc["samples"].erase(doc["samples"].begin() + 5);
  const fs::path bad = root() / "perturbed" / "short.json";
  write_file(bad, doc.dump());
  const auto r = cli("attack --manifest \"" + manifest() + "\" --pair \"" + bad.string() +
                     "\" --layers conv3 --out \"" + root().string() + "\"");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("error [analysis]"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("x5 (missing in B)"), std::string::npos) << r.err;
}

TEST_F(CliPipeline, MissingLogitsNamesTheSample) {
  const fs::path copy = scratch() / "broken";
  fs::remove_all(copy);
  fs::copy(root() / "dataset", copy, fs::copy_options::recursive);
  fs::remove(copy / "tensors" / "x7.logits.ftc");
  const auto r = cli("fit-sample --manifest \"" + (copy / "manifest.json").string() + "\" --out \"" +
                     (scratch() / "broken_out").string() + "\"");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("sample 'x7'"), std::string::npos) << r.err;
}

TEST_F(CliPipeline, MissingUpstreamStageIsADependencyError) {
  const std::string fresh = " --out \"" + (scratch() / "fresh").string() + "\"";
  for (const std::string cmd : {"fit-region", "knowledge"}) {
    const auto r = cli(cmd + " --manifest \"" + manifest() + "\"" + fresh);
    EXPECT_NE(r.code, 0) << cmd;
    EXPECT_NE(r.err.find("run fit-sample first"), std::string::npos) << r.err;
  }
  const fs::path half = scratch() / "half";
  fs::remove_all(half);
  fs::create_directories(half);
  fs::copy(root() / "sample", half / "sample", fs::copy_options::recursive);
  const auto r = cli("distill --manifest \"" + manifest() + "\" --pair \"" + perturbed() + "\" --out \"" +
                     half.string() + "\"");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("run fit-region first"), std::string::npos) << r.err;
}

TEST(Cli, UsageErrors) {
  fs::create_directories(scratch());
  EXPECT_NE(cli("").code, 0);
  EXPECT_NE(cli("fit-sample").code, 0);
  EXPECT_NE(cli("knowledge --out x --tau 1.5").code, 0);
}

// No class signal and identical outputs for every sample.
TEST(Cli, ZeroSignalDatasetHasNoKnowledgePoints) {
  const fs::path dir = scratch() / "zero";
  fs::remove_all(dir);
  fs::create_directories(dir);
  Rng rng(5);
  auto spec = make_synth_spec(4, 8, 8, 3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 0}, 0.0, rng);
  spec.layers = {{"conv1", 0.0, 0.3}, {"conv2", 0.0, 0.3}};
  spec.region_head.bias = Vector::Ones(4);
  write_file(dir / "spec.in.json", to_json(spec).dump());
  const std::string out = " --out \"" + dir.string() + "\" --seed 2";
  const std::string m = " --manifest \"" + (dir / "dataset" / "manifest.json").string() + "\"";
  ASSERT_EQ(cli("synth --n 60 --spec \"" + (dir / "spec.in.json").string() + "\"" + out).code, 0);
  ASSERT_EQ(cli("fit-sample" + m + out + " --kappa-samples 2000").code, 0);
  ASSERT_EQ(cli("fit-region" + m + out).code, 0);
  ASSERT_EQ(cli("knowledge" + m + out).code, 0);
  for (const auto& l : load(dir / "knowledge" / "final.json")["layers"]) {
    EXPECT_EQ(l["total"].get<int>(), 0) << l["layer"];
    EXPECT_TRUE(l["ratio"].is_null());
  }
}

}  // namespace
}  // namespace discviz
