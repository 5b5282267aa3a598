#include "ktsim/runner.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include "ktsim/accounting.hpp"
#include "ktsim/error.hpp"

namespace ktsim::runner {

using nlohmann::json;

RunResult run(const scenario::Scenario& s, unsigned threads) {
  RunResult r;
  r.scenario = s;
  const std::uint64_t n = s.trials;
  r.trials.resize(n);
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::uint64_t>(threads, n));

  std::atomic<std::uint64_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  auto work = [&] {
    for (;;) {
      const auto t = next.fetch_add(1);
      if (t >= n) return;
      try {
        r.trials[t] = sim::run_trial(r.scenario.sim, t);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!failure) failure = std::current_exception();
        next = n;
        return;
      }
    }
  };
  if (threads <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned i = 0; i < threads; ++i) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  r.aggregate = metrics::aggregate(r.scenario.sim, r.trials);
  r.checks = check(r.scenario, r.aggregate);
  for (const auto& c : r.checks) r.predictions_met = r.predictions_met && c.passed;
  return r;
}

namespace {

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

}  // namespace

std::vector<Check> check(const scenario::Scenario& s, const metrics::Aggregate& a) {
  using Kind = scenario::Expectation::Kind;
  std::vector<Check> out;
  for (const auto& e : s.expect) {
    Check c;
    c.metric = e.metric;
    c.expected = e.value;
    c.kind = e.kind == Kind::Equals ? "equals"
             : e.kind == Kind::Min  ? "min"
             : e.kind == Kind::Max  ? "max"
                                    : "predict";
    auto it = a.values.find(e.metric);
    if (it == a.values.end()) {
      c.detail = "metric not produced";
      out.push_back(c);
      continue;
    }
    c.present = true;
    c.observed = it->second;
    switch (e.kind) {
      case Kind::Equals:
        c.passed = std::abs(c.observed - e.value) <= e.tolerance.value_or(0.0);
        c.detail = "|" + num(c.observed) + " - " + num(e.value) + "| <= " +
                   num(e.tolerance.value_or(0.0));
        break;
      case Kind::Min:
        c.passed = c.observed >= e.value;
        c.detail = num(c.observed) + " >= " + num(e.value);
        break;
      case Kind::Max:
        c.passed = c.observed <= e.value;
        c.detail = num(c.observed) + " <= " + num(e.value);
        break;
      case Kind::Predict:
        if (e.tolerance) {
          c.passed = std::abs(c.observed - e.value) <= *e.tolerance;
          c.detail = e.defense + ": |" + num(c.observed) + " - " + num(e.value) + "| <= " +
                     num(*e.tolerance);
        } else {
          auto r = a.rates.find(e.metric);
          if (r == a.rates.end()) {
            c.detail = "not a rate; a tolerance is required";
            break;
          }
          const auto [lo, hi] = metrics::wilson(r->second.k, r->second.n);
          c.passed = e.value >= lo && e.value <= hi;
          c.detail = e.defense + ": " + num(e.value) + " in 99% CI [" + num(lo) + ", " +
                     num(hi) + "]";
        }
        break;
    }
    out.push_back(c);
  }
  return out;
}

json metrics_json(const RunResult& r) {
  const auto& s = r.scenario;
  json j;
  j["scenario"] = s.name;
  j["defense"] = client::to_string(s.sim.defense);
  j["seed"] = s.sim.seed;
  j["trials"] = s.trials;
  j["epochs"] = s.sim.epochs;
  j["clients"] = s.sim.topology.size();
  json m = json::object();
  for (const auto& [k, v] : r.aggregate.values) m[k] = v;
  j["metrics"] = m;
  json ci = json::object();
  for (const auto& [k, rate] : r.aggregate.rates) {
    const auto [lo, hi] = metrics::wilson(rate.k, rate.n);
    ci[k] = {{"successes", rate.k}, {"trials", rate.n}, {"low", lo}, {"high", hi}};
  }
  j["ci99"] = ci;
  json checks = json::array();
  for (const auto& c : r.checks)
    checks.push_back({{"metric", c.metric},
                      {"kind", c.kind},
                      {"expected", c.expected},
                      {"observed", c.observed},
                      {"present", c.present},
                      {"passed", c.passed},
                      {"detail", c.detail}});
  j["expectations"] = checks;
  j["predictions_met"] = r.predictions_met;
  return j;
}

std::string summary_text(const RunResult& r) {
  const auto& s = r.scenario;
  std::ostringstream os;
  os << "scenario " << s.name << " (" << client::to_string(s.sim.defense) << ")\n";
  if (!s.description.empty()) os << "  " << s.description << "\n";
  os << "seed " << s.sim.seed << ", " << s.trials << " trials, " << s.sim.epochs << " epochs, "
     << s.sim.topology.size() << " clients\n\n";
  const auto& v = r.aggregate.values;
  auto line = [&](const std::string& k) {
    auto it = v.find(k);
    if (it == v.end()) return;
    os << "  " << std::left << std::setw(40) << k << num(it->second);
    auto rt = r.aggregate.rates.find(k);
    if (rt != r.aggregate.rates.end()) {
      const auto [lo, hi] = metrics::wilson(rt->second.k, rt->second.n);
      os << "  [" << num(lo) << ", " << num(hi) << "]";
    }
    os << "\n";
  };
  for (const char* k : {"detection_rate", "owner_detection_rate", "victim_detection_rate",
                        "victim_pom_rate", "pom_rate", "poms_valid_rate",
                        "pom_within_bound_rate", "pom_coverage_max_ms", "pom_bound_max_ms",
                        "detection_time_mean_ms", "detection_time_max_ms",
                        "duplicate_at_restore_rate", "oob_detect_within_2delta_rate",
                        "oob_detect_latency_max_ms", "app_under_fake", "core_events",
                        "heuristic_events", "heuristic_events_per_client_epoch",
                        "bytes_per_client_epoch_total", "max_stored_bytes"})
    line(k);
  os << "\nevents by cause\n";
  for (const auto& [k, val] : v)
    if (k.rfind("events_", 0) == 0 && val != 0.0) os << "  " << k.substr(7) << " " << num(val) << "\n";
  if (!r.checks.empty()) {
    os << "\nexpectations\n";
    for (const auto& c : r.checks)
      os << "  " << (c.passed ? "PASS " : "FAIL ") << c.metric << " (" << c.kind << "): "
         << c.detail << "\n";
    os << (r.predictions_met ? "\nall expectations met\n" : "\nexpectations violated\n");
  }
  return os.str();
}

json account_json(const RunResult& r) {
  const auto& p = r.scenario.accounting;
  const auto rep = accounting::closed_form(p);
  json j;
  j["scenario"] = r.scenario.name;
  j["defense"] = client::to_string(r.scenario.sim.defense);
  json params = {{"N_total", p.total_users},
                 {"n_updates_per_epoch", p.updates_per_epoch},
                 {"contacts", p.contacts},
                 {"str_wire_bytes", p.str_wire_bytes},
                 {"hash_bytes", p.hash_bytes},
                 {"sig_bytes", p.sig_bytes},
                 {"akr_bytes", p.akr_bytes},
                 {"ktaca_extra_bytes", p.ktaca_extra_bytes},
                 {"m", p.monitor_epochs},
                 {"epochs_per_month", p.epochs_per_month},
                 {"new_contacts_per_month", p.new_contacts_per_month},
                 {"updates_per_month", p.updates_per_month}};
  j["params"] = params;
  json lines = json::array();
  for (const auto& l : rep.lines)
    lines.push_back({{"defense", l.defense},
                     {"quantity", l.quantity},
                     {"bytes", l.bytes},
                     {"kb", static_cast<double>(l.bytes) / 1000.0},
                     {"formula", l.formula}});
  j["formula"] = lines;
  j["notes"] = rep.notes;

  // Simulated counters, with the formula re-evaluated at the simulated sizes.
  const auto& v = r.aggregate.values;
  auto get = [&](const std::string& k) {
    auto it = v.find(k);
    return it == v.end() ? 0.0 : it->second;
  };
  const double peers = get("str_exchange_peers_per_client_epoch");
  const double exchange = get("bytes_per_client_epoch_str_exchange");
  const double clients = static_cast<double>(r.scenario.sim.topology.size());
  const double log_clients = std::ceil(std::log2(std::max(clients, 1.0)));
  json sim;
  sim["client_epochs"] = get("client_epochs");
  sim["str_exchange_per_client_epoch"] = exchange;
  sim["str_exchange_formula_at_simulated_contacts"] =
      static_cast<double>(p.str_wire_bytes) * peers;
  sim["str_exchange_matches"] = exchange == static_cast<double>(p.str_wire_bytes) * peers;
  sim["str_fetch_per_client_epoch"] = get("bytes_per_client_epoch_str_fetch");
  sim["own_poi_per_client_epoch"] = get("bytes_per_client_epoch_own_poi");
  sim["own_poi_formula_at_simulated_size"] = static_cast<double>(p.hash_bytes) * log_clients;
  sim["historic_poi_per_client_epoch"] = get("bytes_per_client_epoch_historic_poi");
  sim["lookup_bytes_per_lookup"] = get("lookup_bytes_per_lookup");
  sim["lookup_formula_at_simulated_size"] = static_cast<double>(p.hash_bytes) * (log_clients + 1);
  sim["akr_per_client_epoch"] = get("bytes_per_client_epoch_akr");
  sim["asr_per_client_epoch"] = get("bytes_per_client_epoch_asr");
  sim["total_per_client_epoch"] = get("bytes_per_client_epoch_total");
  sim["max_stored_bytes"] = get("max_stored_bytes");
  j["simulated"] = sim;
  return j;
}

std::string account_text(const json& j) {
  std::ostringstream os;
  os << "traffic accounting for " << j["scenario"].get<std::string>() << "\n\nclosed form\n";
  for (const auto& l : j["formula"]) {
    os << "  " << std::left << std::setw(6) << l["defense"].get<std::string>() << " "
       << std::setw(26) << l["quantity"].get<std::string>() << std::right << std::setw(10)
       << l["bytes"].get<std::uint64_t>() << " B  " << std::setw(10)
       << num(l["kb"].get<double>()) << " KB   " << l["formula"].get<std::string>() << "\n";
  }
  os << "\nsimulated (" << j["defense"].get<std::string>() << " run)\n";
  for (auto it = j["simulated"].begin(); it != j["simulated"].end(); ++it)
    os << "  " << std::left << std::setw(44) << it.key() << it.value().dump() << "\n";
  if (!j["notes"].empty()) {
    os << "\nnotes\n";
    for (const auto& n : j["notes"]) os << "  " << n.get<std::string>() << "\n";
  }
  return os.str();
}

void write_outputs(const RunResult& r, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw IoError("cannot write " + (dir / name).string());
    out << text;
  };
  write("metrics.json", metrics_json(r).dump(2) + "\n");
  write("trials.csv", metrics::trials_csv(r.trials));
  write("summary.txt", summary_text(r));
}

}  // namespace ktsim::runner
