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

// JSON forms of fitted models and analysis reports.

#pragma once

#include <memory>
#include <string>
#include <vector>

#include "discviz/analysis.hpp"
#include "discviz/importance.hpp"
#include "discviz/knowledge.hpp"
#include "discviz/mixture.hpp"
#include "discviz/synth.hpp"
#include "discviz/vmf.hpp"
#include "json.hpp"

namespace discviz {

using Json = nlohmann::ordered_json;

inline Json vector_to_json(const Vector& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline Vector vector_from_json(const nlohmann::json& j) {
  const auto xs = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(xs.data(), static_cast<Eigen::Index>(xs.size()));
}

inline Json to_json(const KappaTable& t) {
  return Json{{"dim", t.dim},
              {"sigma", t.sigma},
              {"sample_count", t.sample_count},
              {"strengths", t.strengths},
              {"kappas", t.kappas}};
}

inline KappaTable kappa_table_from_json(const nlohmann::json& j) {
  KappaTable t;
  try {
    t.dim = j.at("dim").get<int>();
    t.sigma = j.at("sigma").get<double>();
    t.sample_count = j.at("sample_count").get<std::size_t>();
    t.strengths = j.at("strengths").get<std::vector<double>>();
    t.kappas = j.at("kappas").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw DomainError("vmf", std::string("invalid kappa table: ") + e.what());
  }
  t.validate();
  return t;
}

inline Json to_json(const MixtureModel& m) {
  return Json{{"priors", vector_to_json(m.priors)},
              {"directions", matrix_to_json(m.directions)},
              {"kappa_table", to_json(*m.kappa_table)}};
}

inline MixtureModel mixture_from_json(const nlohmann::json& j) {
  MixtureModel m;
  try {
    m.priors = vector_from_json(j.at("priors"));
    m.directions = matrix_from_json(j.at("directions"), "directions");
    m.kappa_table = std::make_shared<const KappaTable>(kappa_table_from_json(j.at("kappa_table")));
  } catch (const nlohmann::json::exception& e) {
    throw DomainError("mixture", std::string("invalid mixture model: ") + e.what());
  }
  m.validate();
  return m;
}

inline Json to_json(const Histogram& h) {
  return Json{{"edges", h.edges}, {"counts", h.counts}, {"total", h.total()}};
}

inline Json to_json(const KnowledgeReport& r) {
  Json j{{"layer", r.layer}, {"total", r.total}, {"reliable", r.reliable}};
  if (const auto ratio = r.ratio()) {
    j["ratio"] = *ratio;
  } else {
    j["ratio"] = nullptr;
  }
  std::size_t ties = 0;
  for (const auto& rec : r.regions) ties += rec.tie && rec.is_knowledge ? 1 : 0;
  j["ties"] = ties;
  return j;
}

inline Json to_json(const KnowledgeOverlay& o, const std::vector<std::string>& ids) {
  Json j{{"height", o.height}, {"width", o.width}, {"samples", Json::array()}};
  for (const auto& [sample, cats] : o.cells) {
    Json s{{"id", sample < ids.size() ? ids[sample] : std::to_string(sample)}, {"categories", Json::array()}};
    for (const auto& [c, cells] : cats) {
      Json cj{{"category", c}, {"cells", Json::array()}};
      for (const auto& [row, col] : cells) cj["cells"].push_back({row, col});
      s["categories"].push_back(std::move(cj));
    }
    j["samples"].push_back(std::move(s));
  }
  return j;
}

inline Json to_json(const ShapleyReport& r) {
  return Json{{"phi", r.phi},
              {"baseline_policy", r.baseline_policy},
              {"head", r.head},
              {"value_full", r.value_full},
              {"value_empty", r.value_empty},
              {"efficiency_residual", r.efficiency_residual}};
}

inline Json to_json(const AttackUtilities& u) {
  return Json{{"delta_orientation", u.delta_orientation}, {"delta_strength", u.delta_strength}};
}

inline Json to_json(const DistillReport& r) {
  return Json{{"orientation", to_json(r.orientation)}, {"strength", to_json(r.strength)}};
}

}  // namespace discviz
