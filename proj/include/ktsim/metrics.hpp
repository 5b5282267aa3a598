#pragma once

// Aggregation of per-trial results into a flat, sorted metric map.
// Every reduction is a sum, max or count, so trial order does not matter.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ktsim/simulation.hpp"

namespace ktsim::metrics {

/// Two-sided 99% normal quantile.
inline constexpr double kZ99 = 2.5758293035489004;

/// Wilson score interval for k successes in n trials.
std::pair<double, double> wilson(std::uint64_t k, std::uint64_t n, double z = kZ99);

struct Rate {
  std::uint64_t k = 0;
  std::uint64_t n = 0;
  double value() const { return n ? static_cast<double>(k) / static_cast<double>(n) : 0.0; }
};

struct Aggregate {
  std::uint64_t trials = 0;
  std::map<std::string, double> values;  // includes every rate's value
  std::map<std::string, Rate> rates;

  bool has(const std::string& name) const { return values.count(name) != 0; }
};

Aggregate aggregate(const sim::SimConfig& cfg, const std::vector<sim::TrialResult>& trials);

/// One row per trial.
std::string trials_csv(const std::vector<sim::TrialResult>& trials);

}  // namespace ktsim::metrics
