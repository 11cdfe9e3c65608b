#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "clusterre/design.hpp"
#include "clusterre/simharness.hpp"

namespace clusterre {

using Json = nlohmann::json;

// Criterion wire format:
//   {"level": "cluster"|"individual", "kind": "mahalanobis"|
//    "weighted_euclidean"|"general_quadratic", "weights": [...],
//    "matrix": [[...]], "threshold": a, "target_rate": alpha,
//    "columns": [...], "tiers": [{"columns": [...], "target_rate": ...,
//    "threshold": ...}, ...]}
Json criterion_to_json(const CriterionSpec& spec);
CriterionSpec criterion_from_json(const Json& j);

ScenarioConfig scenario_from_json(const Json& j);
Json scenario_to_json(const ScenarioConfig& cfg);

Json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const Json& j);

// FNV-1a hash of the canonical serialization, for run manifests.
std::uint64_t config_hash(const Json& j);

}  // namespace clusterre
