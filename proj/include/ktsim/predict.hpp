#pragma once

// Closed-form expectations the Monte-Carlo runs are checked against.
// Probabilities are evaluated exactly as rationals.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace ktsim::predict {

struct Prediction {
  std::string formula;  // human-readable form
  std::string exact;    // "p/q" for probabilities, decimal for bounds
  double value = 0.0;
  bool probability = true;
};

/// 1 - (1/(c+1))^m
Prediction akm(std::int64_t c, std::int64_t m);
/// 1 - prod_i max(1/(c_i+1), owner_offline_i)
Prediction akm_churn(const std::vector<std::int64_t>& contacts,
                     const std::vector<bool>& owner_offline);
/// Owner detects: 1 - ((r+1)/(r+f+1))^m
Prediction akm_general_owner(std::int64_t f, std::int64_t r, std::int64_t m);
/// Any client detects: 1 - (1/C(r+f+1, f))^m
Prediction akm_general_any(std::int64_t f, std::int64_t r, std::int64_t m);
/// 1 - (1/N)^k
Prediction ktaca(std::int64_t n, std::int64_t k);
/// 2 (diam + 1) delta, in the unit of delta.
Prediction ktca_bound(std::int64_t diameter, double delta);

/// Dispatches on a defense name (AKM, AKM-churn, AKM-general, KTACA, KTCA)
/// and string parameters. Throws Unsupported or ConfigInvalid.
Prediction evaluate(const std::string& defense, const std::map<std::string, std::string>& params);

/// "c=1,m=10" -> {c: 1, m: 10}. List values use ';' as separator.
std::map<std::string, std::string> parse_params(const std::string& text);

}  // namespace ktsim::predict
