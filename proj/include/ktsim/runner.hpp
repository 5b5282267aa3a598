#pragma once

// Monte-Carlo runner: fans trials out over a worker pool, aggregates them
// in trial order and checks the scenario's expectations.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ktsim/metrics.hpp"
#include "ktsim/scenario.hpp"

namespace ktsim::runner {

struct Check {
  std::string metric;
  std::string kind;  // equals, min, max, predict
  double expected = 0.0;
  double observed = 0.0;
  bool present = false;
  bool passed = false;
  std::string detail;
};

struct RunResult {
  scenario::Scenario scenario;
  std::vector<sim::TrialResult> trials;
  metrics::Aggregate aggregate;
  std::vector<Check> checks;
  bool predictions_met = true;
};

/// 0 picks the hardware concurrency.
RunResult run(const scenario::Scenario& s, unsigned threads = 0);

std::vector<Check> check(const scenario::Scenario& s, const metrics::Aggregate& a);

/// Sorted, deterministic metrics document.
nlohmann::json metrics_json(const RunResult& r);
std::string summary_text(const RunResult& r);

/// Closed-form figures next to the simulated counters of a run.
nlohmann::json account_json(const RunResult& r);
std::string account_text(const nlohmann::json& report);

/// Writes metrics.json, trials.csv and summary.txt into `dir`.
void write_outputs(const RunResult& r, const std::filesystem::path& dir);

}  // namespace ktsim::runner
