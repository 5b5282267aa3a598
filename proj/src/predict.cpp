#include "ktsim/predict.hpp"

#include <boost/multiprecision/cpp_int.hpp>
#include <algorithm>
#include <sstream>
#include <string_view>

#include "ktsim/error.hpp"

namespace ktsim::predict {

namespace mp = boost::multiprecision;
using Rational = mp::cpp_rational;

namespace {

Rational rpow(const Rational& base, std::int64_t e) {
  Rational out = 1;
  for (std::int64_t i = 0; i < e; ++i) out *= base;
  return out;
}

mp::cpp_int binomial(std::int64_t n, std::int64_t k) {
  mp::cpp_int out = 1;
  for (std::int64_t i = 1; i <= k; ++i) out = out * (n - k + i) / i;
  return out;
}

Prediction make(std::string formula, const Rational& p) {
  Prediction out;
  out.formula = std::move(formula);
  std::ostringstream s;
  s << mp::numerator(p) << '/' << mp::denominator(p);
  out.exact = s.str();
  out.value = p.convert_to<double>();
  return out;
}

void require(bool ok, const std::string& field, const std::string& why) {
  if (!ok) throw ConfigInvalid(field, why);
}

std::int64_t as_int(const std::map<std::string, std::string>& p, const std::string& key) {
  auto it = p.find(key);
  if (it == p.end()) throw ConfigInvalid("params." + key, "missing");
  try {
    std::size_t used = 0;
    const auto v = std::stoll(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(it->second);
    return v;
  } catch (const std::exception&) {
    throw ConfigInvalid("params." + key, "expected an integer, got '" + it->second + "'");
  }
}

std::vector<std::int64_t> as_list(const std::map<std::string, std::string>& p,
                                  const std::string& key) {
  auto it = p.find(key);
  if (it == p.end()) return {};
  std::vector<std::int64_t> out;
  std::stringstream ss(it->second);
  std::string item;
  while (std::getline(ss, item, ';')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stoll(item));
    } catch (const std::exception&) {
      throw ConfigInvalid("params." + key, "expected integers, got '" + item + "'");
    }
  }
  return out;
}

}  // namespace

Prediction akm(std::int64_t c, std::int64_t m) {
  require(c >= 0, "params.c", "must be non-negative");
  require(m >= 1, "params.m", "must be at least 1");
  return make("1-(1/(c+1))^m", 1 - rpow(Rational(1, c + 1), m));
}

Prediction akm_churn(const std::vector<std::int64_t>& contacts,
                     const std::vector<bool>& owner_offline) {
  require(!contacts.empty(), "params.c", "need one contact count per epoch");
  require(owner_offline.size() == contacts.size(), "params.owner_offline",
          "one flag per monitored epoch");
  Rational undetected = 1;
  for (std::size_t i = 0; i < contacts.size(); ++i) {
    require(contacts[i] >= 0, "params.c", "must be non-negative");
    undetected *= owner_offline[i] ? Rational(1) : Rational(1, contacts[i] + 1);
  }
  return make("1-prod max(1/(c_i+1), owner_i)", 1 - undetected);
}

Prediction akm_general_owner(std::int64_t f, std::int64_t r, std::int64_t m) {
  require(f >= 0 && r >= 0, "params", "f and r must be non-negative");
  require(m >= 1, "params.m", "must be at least 1");
  return make("1-((r+1)/(r+f+1))^m", 1 - rpow(Rational(r + 1, r + f + 1), m));
}

Prediction akm_general_any(std::int64_t f, std::int64_t r, std::int64_t m) {
  require(f >= 0 && r >= 0, "params", "f and r must be non-negative");
  require(m >= 1, "params.m", "must be at least 1");
  const Rational one_in(mp::cpp_int(1), binomial(r + f + 1, f));
  return make("1-(1/C(r+f+1,f))^m", 1 - rpow(one_in, m));
}

Prediction ktaca(std::int64_t n, std::int64_t k) {
  require(n >= 1, "params.N", "must be at least 1");
  require(k >= 1, "params.k", "must be at least 1");
  return make("1-(1/N)^k", 1 - rpow(Rational(1, n), k));
}

Prediction ktca_bound(std::int64_t diameter, double delta) {
  require(diameter >= 0, "params.diam", "must be non-negative");
  require(delta > 0, "params.delta", "must be positive");
  Prediction out;
  out.formula = "2*(diam+1)*delta";
  out.value = 2.0 * static_cast<double>(diameter + 1) * delta;
  std::ostringstream s;
  s << out.value;
  out.exact = s.str();
  out.probability = false;
  return out;
}

namespace {

void known_keys(const std::map<std::string, std::string>& p,
                const std::vector<std::string_view>& keys) {
  for (const auto& [k, v] : p)
    if (std::find(keys.begin(), keys.end(), k) == keys.end())
      throw ConfigInvalid("params." + k, "unknown parameter");
}

}  // namespace

Prediction evaluate(const std::string& defense, const std::map<std::string, std::string>& p) {
  static const std::map<std::string, std::vector<std::string_view>, std::less<>> keys{
      {"AKM", {"c", "m"}},
      {"AKM-churn", {"c", "m", "owner_offline"}},
      {"AKM-general", {"f", "r", "m", "detector"}},
      {"KTACA", {"N", "k"}},
      {"KTCA", {"diam", "delta"}}};
  if (auto it = keys.find(defense); it != keys.end()) known_keys(p, it->second);
  if (defense == "AKM") return akm(as_int(p, "c"), as_int(p, "m"));
  if (defense == "AKM-churn") {
    auto c = as_list(p, "c");
    const auto m = p.count("m") ? as_int(p, "m") : static_cast<std::int64_t>(c.size());
    if (c.size() == 1) c.assign(static_cast<std::size_t>(m), c.front());
    std::vector<bool> off(c.size(), false);
    for (auto i : as_list(p, "owner_offline")) {
      require(i >= 0 && static_cast<std::size_t>(i) < off.size(), "params.owner_offline",
              "index outside the monitoring window");
      off[static_cast<std::size_t>(i)] = true;
    }
    return akm_churn(c, off);
  }
  if (defense == "AKM-general") {
    const auto who = p.count("detector") ? p.at("detector") : std::string("owner");
    if (who == "owner") return akm_general_owner(as_int(p, "f"), as_int(p, "r"), as_int(p, "m"));
    if (who == "any") return akm_general_any(as_int(p, "f"), as_int(p, "r"), as_int(p, "m"));
    throw ConfigInvalid("params.detector", "expected owner or any");
  }
  if (defense == "KTACA") return ktaca(as_int(p, "N"), p.count("k") ? as_int(p, "k") : 1);
  if (defense == "KTCA") {
    double d = 1.0;
    if (p.count("delta")) {
      std::size_t used = 0;
      try {
        d = std::stod(p.at("delta"), &used);
      } catch (const std::exception&) {
        used = 0;
      }
      require(used > 0 && used == p.at("delta").size(), "params.delta", "expected a number");
    }
    return ktca_bound(as_int(p, "diam"), d);
  }
  throw Unsupported("no closed form for defense '" + defense + "'");
}

std::map<std::string, std::string> parse_params(const std::string& text) {
  std::map<std::string, std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigInvalid("params", "expected key=value, got '" + item + "'");
    out[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return out;
}

}  // namespace ktsim::predict
