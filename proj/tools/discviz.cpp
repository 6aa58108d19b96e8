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

// discviz command-line tool.
//
//   discviz synth      --out DIR [--spec FILE] [--n N] [--perturb-layer L]
//   discviz fit-sample --manifest M --out DIR
//   discviz fit-region --manifest M --out DIR [--layers a,b] [--reference-layer L]
//   discviz knowledge  --manifest M --out DIR [--tau T]
//   discviz attack     --manifest A --pair B --out DIR [--trajectory S1 ...]
//   discviz distill    --manifest TEACHER --pair STUDENT --out DIR
//
// Every subcommand writes <stage>/summary.json under DIR with the keys
// command, config, metrics and outputs.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "discviz/discviz.hpp"

namespace fs = std::filesystem;
using discviz::Json;

namespace {

struct RunConfig {
  std::string command;
  std::string manifest;
  std::string pair;
  std::vector<std::string> trajectory;
  std::string spec;
  std::string out;
  std::uint64_t seed = 0;
  int dim = 3;
  double alpha = 0.1;
  double tau = 0.4;
  double kappa_p = 10.0;
  double kappa_tilde = 1000.0;
  double lr_sample = 1.0;
  double lr_region = 1.0;
  double lr_importance = 0.05;
  int sample_steps = 25;
  int alternations = 20;
  int region_iterations = 100;
  int importance_iterations = 100;
  std::size_t kappa_samples = 10000;
  std::string layers;
  std::string reference_layer;
  std::string checkpoint = "final";
  int threads = 1;
  bool reproducible = false;
  // synth
  int n = 200;
  int categories = 10;
  int channels = 16;
  int grid = 3;
  double head_scale = 2.0;
  std::string perturb_layer;
  double perturb_factor = 2.0;
  double perturb_noise = 0.0;
  std::string dtype = "f64";
};

Json config_json(const RunConfig& c) {
  Json j{{"manifest", c.manifest},
         {"seed", c.seed},
         {"dim", c.dim},
         {"alpha", c.alpha},
         {"tau", c.tau},
         {"kappa_p", c.kappa_p},
         {"kappa_tilde", c.kappa_tilde},
         {"lr_sample", c.lr_sample},
         {"lr_region", c.lr_region},
         {"lr_importance", c.lr_importance},
         {"sample_steps", c.sample_steps},
         {"alternations", c.alternations},
         {"region_iterations", c.region_iterations},
         {"importance_iterations", c.importance_iterations},
         {"kappa_samples", c.kappa_samples},
         {"layers", c.layers},
         {"reference_layer", c.reference_layer},
         {"threads", c.threads},
         {"reproducible", c.reproducible}};
  if (!c.pair.empty()) j["pair"] = c.pair;
  if (!c.trajectory.empty()) j["trajectory"] = c.trajectory;
  if (c.command == "knowledge") j["checkpoint"] = c.checkpoint;
  if (c.command == "synth") {
    j["spec"] = c.spec;
    j["n"] = c.n;
    j["categories"] = c.categories;
    j["channels"] = c.channels;
    j["grid"] = c.grid;
    j["head_scale"] = c.head_scale;
    j["perturb_layer"] = c.perturb_layer;
    j["perturb_factor"] = c.perturb_factor;
    j["perturb_noise"] = c.perturb_noise;
    j["dtype"] = c.dtype;
  }
  return j;
}

void write_json(const fs::path& path, const Json& j) { discviz::write_file(path, j.dump(2) + "\n"); }

Json read_json(const fs::path& path, const std::string& stage) {
  if (!fs::exists(path)) {
    throw discviz::DependencyError("cli", "missing '" + path.string() + "'; run " + stage + " first");
  }
  try {
    return Json::parse(discviz::read_file(path));
  } catch (const Json::exception& e) {
    throw discviz::IoError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

class Summary {
 public:
  Summary(const RunConfig& config, fs::path root) : root_(std::move(root)) {
    doc_["command"] = config.command;
    doc_["config"] = config_json(config);
    doc_["metrics"] = Json::object();
    doc_["outputs"] = Json::array();
  }

  Json& metrics() { return doc_["metrics"]; }

  /// Record `path` (under the output root) as an output.
  void output(const fs::path& path) { doc_["outputs"].push_back(fs::relative(path, root_).generic_string()); }

  void write(const fs::path& path) {
    output(path);
    write_json(path, doc_);
  }

 private:
  fs::path root_;
  Json doc_;
};

std::vector<std::string> split_layers(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

discviz::Manifest require_manifest(const std::string& path, const char* flag = "--manifest") {
  if (path.empty()) throw discviz::ConfigError("cli", std::string(flag) + " is required");
  return discviz::read_manifest(path);
}

std::vector<std::string> ids_of(const discviz::Dataset& d) {
  std::vector<std::string> ids;
  for (const auto& s : d.samples) ids.push_back(s.id);
  return ids;
}

// ---------------------------------------------------------------------------

int cmd_synth(const RunConfig& c) {
  if (c.out.empty()) throw discviz::ConfigError("cli", "--out is required");
  const fs::path out(c.out);
  discviz::Rng rng(c.seed);
  discviz::SynthSpec spec;
  if (!c.spec.empty()) {
    try {
      spec = discviz::synth_spec_from_json(nlohmann::json::parse(discviz::read_file(c.spec)));
    } catch (const nlohmann::json::exception& e) {
      throw discviz::ConfigError("synth", "'" + c.spec + "' is not valid JSON: " + e.what());
    }
  } else {
    const int cells = c.grid * c.grid;
    std::vector<int> mask(static_cast<std::size_t>(cells), 0);
    mask[0] = 1;
    mask[static_cast<std::size_t>(cells / 2)] = 1;
    spec = discviz::make_synth_spec(c.categories, c.channels, c.channels, c.grid, c.grid, mask, c.head_scale, rng);
  }
  const auto dtype = c.dtype == "f32" ? discviz::Dtype::F32 : discviz::Dtype::F64;
  if (c.dtype != "f32" && c.dtype != "f64") throw discviz::ConfigError("cli", "--dtype must be f32 or f64");

  Summary summary(c, out);
  write_json(out / "spec.json", discviz::to_json(spec));
  summary.output(out / "spec.json");
  const auto data = discviz::gen_dataset(spec, c.n, rng);
  summary.output(discviz::write_dataset(out / "dataset", data, dtype));

  std::vector<std::size_t> histogram(static_cast<std::size_t>(spec.categories), 0);
  for (const auto& s : data.samples) ++histogram[static_cast<std::size_t>(s.label)];
  summary.metrics()["samples"] = data.samples.size();
  summary.metrics()["label_histogram"] = histogram;

  if (!c.perturb_layer.empty()) {
    const auto perturbed = discviz::perturb_layer(data, c.perturb_layer, c.perturb_factor, c.perturb_noise,
                                                  spec.region_head, rng);
    summary.output(discviz::write_dataset(out / "perturbed", perturbed, dtype));
    summary.metrics()["perturbed_layer"] = c.perturb_layer;
  }
  summary.write(out / "synth_summary.json");
  return 0;
}

int cmd_fit_sample(const RunConfig& c) {
  if (c.out.empty()) throw discviz::ConfigError("cli", "--out is required");
  const auto manifest = require_manifest(c.manifest);
  const auto data = discviz::load_dataset(manifest, false);
  const auto batch = discviz::sample_batch(data);
  const fs::path dir = fs::path(c.out) / "sample";

  discviz::SampleFitConfig cfg;
  cfg.dim = c.dim;
  cfg.learning_rate = c.lr_sample;
  cfg.gradient_steps = c.sample_steps;
  cfg.alternations = c.alternations;
  cfg.seed = c.seed;
  cfg.kappa_samples = c.kappa_samples;
  const auto fit = discviz::fit_sample_projection(batch, cfg);
  const auto report = discviz::strength_uncertainty_report(fit.embeddings, batch.logits);

  Summary summary(c, c.out);
  write_json(dir / "model.json", discviz::to_json(fit.model));
  summary.output(dir / "model.json");
  discviz::write_tensor(dir / "projection.ftc", discviz::tensor_from_matrix(fit.projection.matrix));
  summary.output(dir / "projection.ftc");

  Json emb{{"ids", batch.ids}, {"labels", batch.labels}, {"samples", Json::array()}};
  for (Eigen::Index i = 0; i < batch.size(); ++i) {
    const discviz::Vector g = fit.embeddings.row(i).transpose();
    emb["samples"].push_back({{"id", batch.ids[static_cast<std::size_t>(i)]},
                              {"label", batch.labels[static_cast<std::size_t>(i)]},
                              {"g", discviz::vector_to_json(g)},
                              {"strength", report.strengths[static_cast<std::size_t>(i)]},
                              {"entropy", report.entropies[static_cast<std::size_t>(i)]},
                              {"posterior", discviz::vector_to_json(discviz::posterior(g, fit.model))}});
  }
  emb["categories"] = Json::array();
  for (Eigen::Index y = 0; y < fit.model.priors.size(); ++y) {
    const discviz::Vector mu = fit.model.directions.row(y).transpose();
    emb["categories"].push_back({{"id", y}, {"mu", discviz::vector_to_json(mu)}, {"pi", fit.model.priors[y]}});
  }
  emb["loss_trace"] = fit.loss_trace;
  write_json(dir / "embeddings.json", emb);
  summary.output(dir / "embeddings.json");

  summary.metrics()["initial_kl"] = fit.initial_loss;
  summary.metrics()["final_kl"] = fit.final_loss;
  summary.metrics()["loss_trace"] = fit.loss_trace;
  summary.metrics()["strength_entropy_pearson"] = report.pearson;
  summary.write(dir / "summary.json");
  return 0;
}

struct SampleArtifacts {
  discviz::MixtureModel model;
  discviz::Matrix projection;
};

SampleArtifacts load_sample_artifacts(const fs::path& out) {
  const fs::path dir = out / "sample";
  SampleArtifacts a{discviz::mixture_from_json(read_json(dir / "model.json", "fit-sample")), {}};
  if (!fs::exists(dir / "projection.ftc")) {
    throw discviz::DependencyError("cli", "missing '" + (dir / "projection.ftc").string() + "'; run fit-sample first");
  }
  a.projection = discviz::tensor_to_matrix(discviz::read_tensor(dir / "projection.ftc"), "projection");
  return a;
}

std::vector<std::string> selected_layers(const RunConfig& c, const discviz::Manifest& m) {
  auto layers = split_layers(c.layers);
  if (layers.empty()) layers = m.layers;
  if (layers.empty()) throw discviz::ConfigError("cli", "manifest '" + m.name + "' lists no layers");
  return layers;
}

int cmd_fit_region(const RunConfig& c) {
  if (c.out.empty()) throw discviz::ConfigError("cli", "--out is required");
  const auto artifacts = load_sample_artifacts(c.out);
  const auto manifest = require_manifest(c.manifest);
  const auto layers = selected_layers(c, manifest);
  const std::string reference = c.reference_layer.empty() ? layers.back() : c.reference_layer;
  if (std::find(layers.begin(), layers.end(), reference) == layers.end()) {
    throw discviz::ConfigError("cli", "reference layer '" + reference + "' is not among the fitted layers");
  }
  const auto data = discviz::load_dataset(manifest, true, layers);
  const auto batch = discviz::sample_batch(data);
  if (artifacts.projection.cols() != batch.features.cols()) {
    throw discviz::DependencyError("cli", "fit-sample outputs do not match this manifest's feature dimension");
  }
  const discviz::Matrix G = discviz::project_samples(artifacts.projection, batch.features);
  const fs::path root = fs::path(c.out) / "region";
  Summary summary(c, c.out);

  std::vector<discviz::LayerRegions> projected;
  std::vector<discviz::Matrix> lambdas;
  std::vector<std::vector<discviz::ImportanceWeights>> importances;
  std::vector<std::vector<double>> importance_traces;
  Json layer_metrics = Json::array();
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const auto regions = discviz::region_samples(data, li);
    discviz::ImportanceConfig icfg;
    icfg.kappa_tilde = c.kappa_tilde;
    icfg.kappa_p = c.kappa_p;
    icfg.learning_rate = c.lr_importance;
    icfg.iterations = c.importance_iterations;
    icfg.seed = c.seed;
    icfg.threads = c.threads;
    const auto imp = discviz::fit_importance(regions, icfg);

    std::vector<discviz::Vector> w;
    for (const auto& iw : imp.weights) w.push_back(iw.w);
    discviz::SimilarityConfig scfg;
    scfg.kappa_p = c.kappa_p;
    scfg.alpha = c.alpha;
    scfg.learning_rate = c.lr_region;
    scfg.iterations = c.region_iterations;
    scfg.seed = c.seed + li;
    scfg.threads = c.threads;
    const auto fit = discviz::fit_region_projection(regions, G, w, *artifacts.model.kappa_table, scfg);

    discviz::LayerRegions lr{layers[li], {}};
    for (const auto& s : regions) lr.h.push_back(discviz::project_regions(fit.projection.matrix, s.fmap));
    projected.push_back(std::move(lr));
    lambdas.push_back(fit.projection.matrix);
    importances.push_back(imp.weights);
    importance_traces.push_back(imp.loss_trace);
    layer_metrics.push_back({{"layer", layers[li]},
                             {"importance_initial_kl", imp.initial_loss},
                             {"importance_final_kl", imp.final_loss},
                             {"degenerate_projections", imp.degenerate_projections},
                             {"region_initial_loss", fit.initial_loss},
                             {"region_final_loss", fit.final_loss},
                             {"mean_alignment", discviz::mean_alignment(regions, fit.projection.matrix, G, w)}});
  }

  const auto normalized = discviz::normalize_layer_strength(projected, reference);
  const auto ids = ids_of(data);
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const fs::path dir = root / layers[li];
    const double before = discviz::average_strength(projected[li]);
    const double scale = discviz::average_strength(normalized[li]) / before;
    layer_metrics[li]["strength_scale"] = scale;

    discviz::write_tensor(dir / "lambda.ftc", discviz::tensor_from_matrix(lambdas[li]));
    summary.output(dir / "lambda.ftc");

    Json imp{{"layer", layers[li]}, {"samples", Json::array()}};
    for (std::size_t i = 0; i < ids.size(); ++i) {
      imp["samples"].push_back({{"id", ids[i]},
                                {"w", discviz::vector_to_json(importances[li][i].w)},
                                {"v", discviz::vector_to_json(importances[li][i].v)}});
    }
    imp["loss_trace"] = importance_traces[li];
    write_json(dir / "importance.json", imp);
    summary.output(dir / "importance.json");

    const auto& fmap = data.samples.front().layers[li];
    Json reg{{"layer", layers[li]},
             {"height", fmap.height},
             {"width", fmap.width},
             {"strength_scale", scale},
             {"samples", Json::array()}};
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const discviz::Matrix& h = normalized[li].h[i];
      Json cells = Json::array();
      for (Eigen::Index r = 0; r < h.rows(); ++r) {
        const discviz::Vector hr = h.row(r).transpose();
        const discviz::Vector p = discviz::posterior(hr, artifacts.model);
        Eigen::Index best = 0;
        const double pmax = p.maxCoeff(&best);
        cells.push_back({{"r", r},
                         {"h", discviz::vector_to_json(hr)},
                         {"strength", hr.norm()},
                         {"w", importances[li][i].w[r]},
                         {"posterior_argmax", best},
                         {"posterior_max", pmax}});
      }
      reg["samples"].push_back({{"id", ids[i]}, {"label", data.samples[i].label}, {"regions", std::move(cells)}});
    }
    write_json(dir / "regions.json", reg);
    summary.output(dir / "regions.json");
  }
  summary.metrics()["reference_layer"] = reference;
  summary.metrics()["layers"] = layer_metrics;
  summary.write(root / "summary.json");
  return 0;
}

struct RegionArtifacts {
  std::string layer;
  int height = 0;
  int width = 0;
  double scale = 1.0;
  std::vector<std::string> ids;
  std::vector<int> labels;
  discviz::LayerRegions regions;
};

RegionArtifacts load_region_artifacts(const fs::path& out, const std::string& layer) {
  const Json j = read_json(out / "region" / layer / "regions.json", "fit-region");
  RegionArtifacts a;
  a.layer = layer;
  a.height = j.at("height").get<int>();
  a.width = j.at("width").get<int>();
  a.scale = j.at("strength_scale").get<double>();
  a.regions.layer = layer;
  for (const auto& s : j.at("samples")) {
    a.ids.push_back(s.at("id").get<std::string>());
    a.labels.push_back(s.at("label").get<int>());
    const auto& cells = s.at("regions");
    discviz::Matrix h(static_cast<Eigen::Index>(cells.size()), 0);
    for (std::size_t r = 0; r < cells.size(); ++r) {
      const discviz::Vector hr = discviz::vector_from_json(cells[r].at("h"));
      if (r == 0) h.resize(h.rows(), hr.size());
      if (hr.size() != h.cols()) throw discviz::DimensionError("cli", "ragged region embeddings in regions.json");
      h.row(static_cast<Eigen::Index>(r)) = hr.transpose();
    }
    a.regions.h.push_back(std::move(h));
  }
  return a;
}

std::vector<std::string> fitted_layers(const RunConfig& c, const discviz::Manifest& m) {
  auto layers = selected_layers(c, m);
  for (const auto& l : layers) {
    if (!fs::exists(fs::path(c.out) / "region" / l / "regions.json")) {
      throw discviz::DependencyError("cli", "layer '" + l + "' has no regional embedding; run fit-region first");
    }
  }
  return layers;
}

int cmd_knowledge(const RunConfig& c) {
  if (c.out.empty()) throw discviz::ConfigError("cli", "--out is required");
  const auto model = discviz::mixture_from_json(read_json(fs::path(c.out) / "sample" / "model.json", "fit-sample"));
  const auto manifest = require_manifest(c.manifest);
  const auto layers = fitted_layers(c, manifest);
  const fs::path dir = fs::path(c.out) / "knowledge";
  Summary summary(c, c.out);

  Json reports = Json::array();
  for (const auto& layer : layers) {
    const auto a = load_region_artifacts(c.out, layer);
    const auto report = discviz::count_knowledge_points(a.regions, a.labels, model, c.tau);
    Json entry = discviz::to_json(report);
    entry["checkpoint"] = c.checkpoint;
    Json sweep = Json::array();
    bool monotone = true;
    std::size_t previous = std::numeric_limits<std::size_t>::max();
    for (int t = 1; t <= 9; ++t) {
      const double tau = t / 10.0;
      const auto r = discviz::count_knowledge_points(a.regions, a.labels, model, tau);
      monotone = monotone && r.total <= previous;
      previous = r.total;
      sweep.push_back({{"tau", tau}, {"total", r.total}, {"reliable", r.reliable}});
    }
    entry["tau_sweep"] = sweep;
    entry["tau_monotone"] = monotone;
    const auto overlay = discviz::knowledge_overlay(report, a.height, a.width);
    Json per_category = Json::object();
    for (const auto& [cat, count] : overlay.counts_per_category()) per_category[std::to_string(cat)] = count;
    entry["per_category"] = per_category;
    write_json(dir / (layer + "_overlay.json"), discviz::to_json(overlay, a.ids));
    summary.output(dir / (layer + "_overlay.json"));
    reports.push_back(std::move(entry));
  }
  Json doc{{"checkpoint", c.checkpoint}, {"tau", c.tau}, {"layers", reports}};
  write_json(dir / (c.checkpoint + ".json"), doc);
  summary.output(dir / (c.checkpoint + ".json"));
  summary.metrics()["layers"] = reports;
  summary.write(dir / "summary.json");
  return 0;
}

// Datasets A and B with the same sample ids in the same order.
void check_pairing(const discviz::Dataset& a, const discviz::Dataset& b) {
  std::set<std::string> ia, ib;
  for (const auto& s : a.samples) ia.insert(s.id);
  for (const auto& s : b.samples) ib.insert(s.id);
  std::vector<std::string> offenders;
  for (const auto& id : ia) {
    if (!ib.count(id)) offenders.push_back(id + " (missing in B)");
  }
  for (const auto& id : ib) {
    if (!ia.count(id)) offenders.push_back(id + " (missing in A)");
  }
  if (offenders.empty() && a.samples.size() == b.samples.size()) {
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
      if (a.samples[i].id != b.samples[i].id) offenders.push_back(a.samples[i].id + " (order differs)");
    }
  }
  if (!offenders.empty()) {
    std::string list;
    for (std::size_t i = 0; i < offenders.size() && i < 20; ++i) list += (i ? ", " : "") + offenders[i];
    if (offenders.size() > 20) list += ", ...";
    throw discviz::PairingError("analysis", "conditions disagree on samples: " + list);
  }
}

// Regions of one layer projected with the fitted Lambda and strength scale.
std::vector<discviz::Matrix> project_layer(const discviz::Dataset& d, std::size_t li, const discviz::Matrix& lambda,
                                           double scale) {
  std::vector<discviz::Matrix> out;
  for (const auto& s : d.samples) out.push_back(scale * discviz::project_regions(lambda, s.layers[li]));
  return out;
}

struct PairedRun {
  std::vector<std::string> layers;
  discviz::Dataset a;
  discviz::Dataset b;
  std::vector<discviz::Matrix> lambdas;
  std::vector<double> scales;
};

PairedRun load_pair(const RunConfig& c) {
  if (c.pair.empty()) throw discviz::ConfigError("cli", "--pair is required");
  const auto ma = require_manifest(c.manifest);
  const auto mb = require_manifest(c.pair, "--pair");
  PairedRun run;
  run.layers = fitted_layers(c, ma);
  for (const auto& l : run.layers) {
    if (std::find(mb.layers.begin(), mb.layers.end(), l) == mb.layers.end()) {
      throw discviz::PairingError("analysis", "layer '" + l + "' is missing from '" + c.pair + "'");
    }
  }
  run.a = discviz::load_dataset(ma, true, run.layers);
  run.b = discviz::load_dataset(mb, true, run.layers);
  check_pairing(run.a, run.b);
  for (const auto& l : run.layers) {
    const fs::path p = fs::path(c.out) / "region" / l / "lambda.ftc";
    if (!fs::exists(p)) throw discviz::DependencyError("cli", "missing '" + p.string() + "'; run fit-region first");
    run.lambdas.push_back(discviz::tensor_to_matrix(discviz::read_tensor(p), "lambda"));
    run.scales.push_back(load_region_artifacts(c.out, l).scale);
  }
  return run;
}

int cmd_attack(const RunConfig& c) {
  if (c.out.empty()) throw discviz::ConfigError("cli", "--out is required");
  const auto model = discviz::mixture_from_json(read_json(fs::path(c.out) / "sample" / "model.json", "fit-sample"));
  const auto run = load_pair(c);
  std::vector<discviz::Dataset> steps;
  for (const auto& path : c.trajectory) {
    steps.push_back(discviz::load_dataset(discviz::read_manifest(path), true, run.layers));
    check_pairing(run.a, steps.back());
  }
  const fs::path dir = fs::path(c.out) / "attack";
  Summary summary(c, c.out);

  std::vector<int> original, adversarial;
  for (std::size_t i = 0; i < run.a.samples.size(); ++i) {
    original.push_back(run.a.samples[i].label);
    Eigen::Index arg = 0;
    run.b.samples[i].logits.maxCoeff(&arg);
    adversarial.push_back(static_cast<int>(arg));
  }

  Json layers = Json::array();
  for (std::size_t li = 0; li < run.layers.size(); ++li) {
    discviz::PairedRegions pairs{run.layers[li], ids_of(run.a), project_layer(run.a, li, run.lambdas[li], run.scales[li]),
                                 project_layer(run.b, li, run.lambdas[li], run.scales[li])};
    const auto util = discviz::attack_utilities(pairs);
    const auto hist = discviz::attacked_region_histogram(pairs, model, original, adversarial);
    Json entry{{"layer", run.layers[li]}, {"utilities", discviz::to_json(util)}, {"attacked_histogram", discviz::to_json(hist)}};
    if (!steps.empty()) {
      std::vector<std::vector<discviz::Matrix>> mids;
      for (const auto& s : steps) mids.push_back(project_layer(s, li, run.lambdas[li], run.scales[li]));
      std::map<std::string, std::size_t> counts;
      for (std::size_t i = 0; i < pairs.a.size(); ++i) {
        std::vector<double> strengths;
        for (Eigen::Index r = 0; r < pairs.a[i].rows(); ++r) strengths.push_back(pairs.a[i].row(r).norm());
        for (Eigen::Index r = 0; r < pairs.a[i].rows(); ++r) {
          discviz::Trajectory t{pairs.a[i].row(r).transpose(), pairs.b[i].row(r).transpose(), {}, strengths};
          for (const auto& m : mids) t.midpoints.push_back(m[i].row(r).transpose());
          ++counts[discviz::to_string(discviz::classify_trajectory(t, model, adversarial[i]))];
        }
      }
      entry["trajectory_types"] = counts;
    }
    layers.push_back(std::move(entry));
  }
  write_json(dir / "report.json", Json{{"layers", layers}});
  summary.output(dir / "report.json");
  summary.metrics()["layers"] = layers;
  summary.write(dir / "summary.json");
  return 0;
}

int cmd_distill(const RunConfig& c) {
  if (c.out.empty()) throw discviz::ConfigError("cli", "--out is required");
  const auto run = load_pair(c);
  const fs::path dir = fs::path(c.out) / "distill";
  Summary summary(c, c.out);
  Json layers = Json::array();
  for (std::size_t li = 0; li < run.layers.size(); ++li) {
    discviz::PairedRegions pairs{run.layers[li], ids_of(run.a), project_layer(run.a, li, run.lambdas[li], run.scales[li]),
                                 project_layer(run.b, li, run.lambdas[li], run.scales[li])};
    const auto report = discviz::distill_dissimilarity(pairs);
    Json entry = discviz::to_json(report);
    entry["layer"] = run.layers[li];
    layers.push_back(std::move(entry));
  }
  write_json(dir / "report.json", Json{{"layers", layers}});
  summary.output(dir / "report.json");
  summary.metrics()["layers"] = layers;
  summary.write(dir / "summary.json");
  return 0;
}

int default_threads() {
  if (const char* env = std::getenv("DISCVIZ_THREADS")) {
    try {
      const int t = std::stoi(env);
      if (t >= 1) return t;
    } catch (const std::exception&) {
    }
    std::cerr << "warning: ignoring invalid DISCVIZ_THREADS='" << env << "'\n";
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discrimination-power visualization of DNN features"};
  app.require_subcommand(1);
  RunConfig c;
  c.threads = default_threads();

  auto common = [&c](CLI::App* sub) {
    sub->add_option("--manifest", c.manifest, "Dataset manifest (condition A)");
    sub->add_option("--out", c.out, "Output directory")->required();
    sub->add_option("--seed", c.seed, "Random seed");
    sub->add_option("--threads", c.threads, "Worker threads (default: DISCVIZ_THREADS or 1)")
        ->check(CLI::PositiveNumber);
    sub->add_flag("--reproducible", c.reproducible, "Run serially so outputs are byte-identical across runs");
    sub->add_option("--layers", c.layers, "Comma-separated layer names (default: all)");
  };

  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset");
  common(synth);
  synth->add_option("--spec", c.spec, "Synthetic spec JSON (default: random spec from --seed)");
  synth->add_option("--n", c.n, "Number of samples")->check(CLI::PositiveNumber);
  synth->add_option("--categories", c.categories, "Categories")->check(CLI::Range(2, 1000));
  synth->add_option("--channels", c.channels, "Channels per layer")->check(CLI::PositiveNumber);
  synth->add_option("--grid", c.grid, "Grid side length")->check(CLI::Range(1, 64));
  synth->add_option("--head-scale", c.head_scale, "Scale of the linear head");
  synth->add_option("--perturb-layer", c.perturb_layer, "Also write a copy with this layer perturbed");
  synth->add_option("--perturb-factor", c.perturb_factor, "Strength factor for the perturbed layer");
  synth->add_option("--perturb-noise", c.perturb_noise, "Noise added to the perturbed layer");
  synth->add_option("--dtype", c.dtype, "Tensor dtype: f32 or f64");

  auto* fit_sample = app.add_subcommand("fit-sample", "Fit the sample-level projection and mixture");
  common(fit_sample);
  fit_sample->add_option("--dim", c.dim, "Embedding dimension");
  fit_sample->add_option("--lr", c.lr_sample, "Learning rate");
  fit_sample->add_option("--steps", c.sample_steps, "Gradient steps per alternation");
  fit_sample->add_option("--alternations", c.alternations, "EM/descent alternations");
  fit_sample->add_option("--kappa-samples", c.kappa_samples, "Monte Carlo samples per kappa table entry");

  auto* fit_region = app.add_subcommand("fit-region", "Fit region importance and regional projections");
  common(fit_region);
  fit_region->add_option("--alpha", c.alpha, "Weight of the alignment term");
  fit_region->add_option("--kappa-p", c.kappa_p, "Concentration of the sample similarity");
  fit_region->add_option("--kappa-tilde", c.kappa_tilde, "Concentration of the importance match score");
  fit_region->add_option("--reference-layer", c.reference_layer, "Layer whose strength scale is kept");
  fit_region->add_option("--lr", c.lr_region, "Learning rate of the regional projection");
  fit_region->add_option("--lr-importance", c.lr_importance, "Learning rate of the importance fit");
  fit_region->add_option("--iterations", c.region_iterations, "Regional projection iterations");
  fit_region->add_option("--importance-iterations", c.importance_iterations, "Importance iterations");

  auto* knowledge = app.add_subcommand("knowledge", "Count knowledge points per layer");
  common(knowledge);
  knowledge->add_option("--tau", c.tau, "Posterior threshold")->check(CLI::Range(0.0, 1.0));
  knowledge->add_option("--checkpoint", c.checkpoint, "Label of this checkpoint");

  auto* attack = app.add_subcommand("attack", "Compare original and adversarial regional features");
  common(attack);
  attack->add_option("--pair", c.pair, "Manifest of the adversarial condition (B)");
  attack->add_option("--trajectory", c.trajectory, "Manifests of intermediate attack steps, in order");

  auto* distill = app.add_subcommand("distill", "Compare teacher (A) and student (B) regional features");
  common(distill);
  distill->add_option("--pair", c.pair, "Manifest of the student condition (B)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  if (c.reproducible && c.threads != 1) {
    std::cerr << "note: --reproducible runs with 1 thread\n";
    c.threads = 1;
  }

  try {
    if (synth->parsed()) return c.command = "synth", cmd_synth(c);
    if (fit_sample->parsed()) return c.command = "fit-sample", cmd_fit_sample(c);
    if (fit_region->parsed()) return c.command = "fit-region", cmd_fit_region(c);
    if (knowledge->parsed()) return c.command = "knowledge", cmd_knowledge(c);
    if (attack->parsed()) return c.command = "attack", cmd_attack(c);
    if (distill->parsed()) return c.command = "distill", cmd_distill(c);
  } catch (const discviz::Error& e) {
    std::cerr << "error [" << e.module() << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error [cli]: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
