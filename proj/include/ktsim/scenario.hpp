#pragma once

// Scenario files: YAML or JSON, converted to one JSON tree and validated
// field by field. Unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ktsim/accounting.hpp"
#include "ktsim/simulation.hpp"

namespace ktsim::scenario {

struct Expectation {
  enum class Kind { Equals, Min, Max, Predict };
  std::string metric;
  Kind kind = Kind::Equals;
  double value = 0.0;
  std::optional<double> tolerance;  // Predict without tolerance: 99% CI test
  std::string defense;
  std::map<std::string, std::string> params;
};

struct Scenario {
  std::string name;
  std::string description;
  std::uint64_t trials = 1;
  sim::SimConfig sim;
  accounting::Params accounting;
  std::vector<Expectation> expect;
  nlohmann::json source;  // validated input tree
};

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> trials;
  std::optional<std::uint64_t> epochs;
};

/// Re-parses the source tree with the overrides applied, so derived
/// settings (a random topology, for one) follow the new seed.
Scenario with_overrides(const Scenario& s, const Overrides& o);

/// YAML (a superset of JSON) text to a JSON tree. Throws ConfigInvalid.
nlohmann::json yaml_to_json(const std::string& text);
Scenario from_json(const nlohmann::json& j);
Scenario parse(const std::string& text);
/// Throws IoError when the file cannot be read.
Scenario load(const std::filesystem::path& path);

/// Directory of the scenarios shipped with the tool.
std::filesystem::path bundled_dir();
/// Sorted names of bundled scenarios (file stems).
std::vector<std::string> bundled();
/// A path to an existing file, or the name of a bundled scenario.
std::filesystem::path resolve(const std::string& name_or_path);

}  // namespace ktsim::scenario
