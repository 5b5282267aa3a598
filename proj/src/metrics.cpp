#include "ktsim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ktsim::metrics {

using sim::TrialResult;

std::pair<double, double> wilson(std::uint64_t k, std::uint64_t n, double z) {
  if (n == 0) return {0.0, 1.0};
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(k) / nn;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / nn;
  const double centre = (p + z2 / (2.0 * nn)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn)) / denom;
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

template <class T>
std::string opt(const std::optional<T>& v) {
  if (!v) return "";
  if constexpr (std::is_floating_point_v<T>) return fmt(*v);
  else return std::to_string(*v);
}

}  // namespace

Aggregate aggregate(const sim::SimConfig& cfg, const std::vector<TrialResult>& trials) {
  Aggregate a;
  a.trials = trials.size();
  const std::uint64_t n = trials.size();
  auto rate = [&](const std::string& name, auto pred) {
    Rate r{0, n};
    for (const auto& t : trials)
      if (pred(t)) ++r.k;
    a.rates[name] = r;
    a.values[name] = r.value();
  };
  auto& v = a.values;
  v["trials"] = static_cast<double>(n);

  rate("detection_rate", [](const TrialResult& t) { return t.detected; });
  rate("owner_detection_rate", [](const TrialResult& t) { return t.owner_rel_epoch.has_value(); });
  rate("victim_detection_rate", [](const TrialResult& t) { return t.victim_rel_epoch.has_value(); });
  rate("victim_pom_rate", [](const TrialResult& t) { return t.victim_pom_rel_epoch.has_value(); });
  rate("pom_rate", [](const TrialResult& t) { return t.pom_present; });
  rate("poms_valid_rate", [](const TrialResult& t) { return t.poms_valid; });

  const auto& adv = cfg.adversary;
  if (!adv.honest() && adv.start_epoch < cfg.epochs) {
    const auto last = static_cast<std::int64_t>(cfg.epochs - 1 - adv.start_epoch);
    for (std::int64_t k = 0; k <= last; ++k) {
      const std::string s = std::to_string(k);
      auto within = [k](const std::optional<std::int64_t>& e) { return e && *e <= k; };
      rate("detection_rate_by_rel_epoch_" + s,
           [&](const TrialResult& t) { return within(t.first_rel_epoch); });
      rate("owner_detection_rate_by_rel_epoch_" + s,
           [&](const TrialResult& t) { return within(t.owner_rel_epoch); });
      rate("victim_pom_rate_by_rel_epoch_" + s,
           [&](const TrialResult& t) { return within(t.victim_pom_rel_epoch); });
      rate("pom_rate_by_rel_epoch_" + s, [&](const TrialResult& t) {
        if (!t.first_pom_epoch) return false;
        return *t.first_pom_epoch - static_cast<std::int64_t>(adv.start_epoch) <= k;
      });
    }

    rate("pom_coverage_complete_rate",
         [](const TrialResult& t) { return t.pom_coverage_complete; });
    rate("pom_within_bound_rate", [](const TrialResult& t) {
      return t.pom_coverage_complete && t.pom_coverage_ms && *t.pom_coverage_ms <= t.pom_bound_ms;
    });
    double worst = 0.0, bound = 0.0;
    for (const auto& t : trials) {
      if (t.pom_coverage_ms) worst = std::max(worst, *t.pom_coverage_ms);
      bound = std::max(bound, t.pom_bound_ms);
    }
    v["pom_coverage_max_ms"] = worst;
    v["pom_bound_max_ms"] = bound;

    const double t0 = sim::us_to_ms(cfg.clock.epoch_start(adv.start_epoch));
    double sum = 0.0, mx = 0.0;
    std::uint64_t cnt = 0;
    for (const auto& t : trials) {
      if (!t.first_time_ms) continue;
      const double d = *t.first_time_ms - t0;
      sum += d;
      mx = std::max(mx, d);
      ++cnt;
    }
    v["detection_time_mean_ms"] = cnt ? sum / static_cast<double>(cnt) : 0.0;
    v["detection_time_max_ms"] = mx;

    if (adv.short_lived()) {
      rate("duplicate_at_restore_rate", [](const TrialResult& t) {
        return t.duplicate_pom_ms && t.restore_ms && *t.duplicate_pom_ms == *t.restore_ms &&
               t.poms_valid;
      });
    }
  }

  if (cfg.prevention.enabled) {
    rate("oob_detect_rate", [](const TrialResult& t) { return t.oob_detect_latency_ms.has_value(); });
    const double bound = sim::us_to_ms(2 * cfg.clock.delta);
    rate("oob_detect_within_2delta_rate", [bound](const TrialResult& t) {
      return t.oob_detect_latency_ms && *t.oob_detect_latency_ms <= bound && t.app_under_fake == 0;
    });
    double mx = 0.0;
    std::uint64_t sent = 0, fake = 0;
    for (const auto& t : trials) {
      if (t.oob_detect_latency_ms) mx = std::max(mx, *t.oob_detect_latency_ms);
      sent += t.app_sent;
      fake += t.app_under_fake;
    }
    v["oob_detect_latency_max_ms"] = mx;
    v["app_sent"] = static_cast<double>(sent);
    v["app_under_fake"] = static_cast<double>(fake);
  }

  std::array<std::uint64_t, client::kCauses> causes{};
  std::uint64_t core = 0, heuristic = 0, client_epochs = 0, str_peers = 0, lookups = 0, stored = 0;
  std::array<std::uint64_t, msg::kTrafficClasses> bytes{};
  for (const auto& t : trials) {
    for (std::size_t i = 0; i < client::kCauses; ++i) {
      causes[i] += t.cause_counts[i];
      const auto c = static_cast<client::Cause>(i);
      if (client::is_core(c)) core += t.cause_counts[i];
      if (client::is_heuristic(c)) heuristic += t.cause_counts[i];
    }
    for (std::size_t i = 0; i < msg::kTrafficClasses; ++i) bytes[i] += t.bytes[i];
    client_epochs += t.client_epochs;
    str_peers += t.str_exchange_peers;
    lookups += t.lookups;
    stored = std::max(stored, t.max_stored_bytes);
  }
  for (std::size_t i = 0; i < client::kCauses; ++i)
    v["events_" + client::to_string(static_cast<client::Cause>(i))] =
        static_cast<double>(causes[i]);
  v["core_events"] = static_cast<double>(core);
  v["heuristic_events"] = static_cast<double>(heuristic);
  v["client_epochs"] = static_cast<double>(client_epochs);
  const double ce = client_epochs ? static_cast<double>(client_epochs) : 1.0;
  v["heuristic_events_per_client_epoch"] = static_cast<double>(heuristic) / ce;
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < msg::kTrafficClasses; ++i) {
    v["bytes_per_client_epoch_" + msg::to_string(static_cast<msg::Traffic>(i))] =
        static_cast<double>(bytes[i]) / ce;
    total += bytes[i];
  }
  v["bytes_per_client_epoch_total"] = static_cast<double>(total) / ce;
  v["str_exchange_peers_per_client_epoch"] = static_cast<double>(str_peers) / ce;
  v["lookups"] = static_cast<double>(lookups);
  v["lookup_bytes_per_lookup"] =
      lookups ? static_cast<double>(bytes[static_cast<std::size_t>(msg::Traffic::Lookup)]) /
                    static_cast<double>(lookups)
              : 0.0;
  v["max_stored_bytes"] = static_cast<double>(stored);
  return a;
}

std::string trials_csv(const std::vector<TrialResult>& trials) {
  std::ostringstream os;
  os << "trial,detected,first_time_ms,first_epoch,first_cause,first_rel_epoch,owner_rel_epoch,"
        "victim_rel_epoch,victim_pom_rel_epoch,pom_present,poms_valid,pom_coverage_complete,"
        "pom_coverage_ms,pom_bound_ms,restore_ms,duplicate_pom_ms,oob_detect_latency_ms,"
        "app_sent,app_under_fake,detectors,events\n";
  for (const auto& t : trials) {
    os << t.trial << ',' << (t.detected ? 1 : 0) << ',' << opt(t.first_time_ms) << ','
       << opt(t.first_epoch) << ',' << (t.first_cause ? client::to_string(*t.first_cause) : "")
       << ',' << opt(t.first_rel_epoch) << ',' << opt(t.owner_rel_epoch) << ','
       << opt(t.victim_rel_epoch) << ',' << opt(t.victim_pom_rel_epoch) << ','
       << (t.pom_present ? 1 : 0) << ',' << (t.poms_valid ? 1 : 0) << ','
       << (t.pom_coverage_complete ? 1 : 0) << ',' << opt(t.pom_coverage_ms) << ','
       << fmt(t.pom_bound_ms) << ',' << opt(t.restore_ms) << ',' << opt(t.duplicate_pom_ms)
       << ',' << opt(t.oob_detect_latency_ms) << ',' << t.app_sent << ',' << t.app_under_fake
       << ',' << t.detectors.size() << ',' << t.events << '\n';
  }
  return os.str();
}

}  // namespace ktsim::metrics
