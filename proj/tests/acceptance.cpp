// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

#include "ktsim/accounting.hpp"
#include "ktsim/predict.hpp"
#include "ktsim/runner.hpp"
#include "ktsim/scenario.hpp"
#include "ktsim/transparency_log.hpp"
#include "naive_tree.hpp"

using namespace ktsim;

namespace {

int failures = 0;

void report(int id, const std::string& title, bool ok, const std::string& detail) {
  std::cout << (ok ? "[PASS] " : "[FAIL] ") << std::setw(2) << id << "  " << title << ": "
            << detail << std::endl;
  if (!ok) ++failures;
}

struct Timed {
  runner::RunResult result;
  double seconds = 0.0;
};

Timed run(const std::string& name, scenario::Overrides o = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  auto s = scenario::with_overrides(scenario::load(scenario::resolve(name)), o);
  Timed t{runner::run(s, 0), 0.0};
  t.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return t;
}

double metric(const runner::RunResult& r, const std::string& k) {
  auto it = r.aggregate.values.find(k);
  if (it == r.aggregate.values.end()) throw std::runtime_error("missing metric " + k);
  return it->second;
}

std::string fmt(double v, int prec = 6) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

bool near(double x, double y, double tol) { return std::abs(x - y) <= tol; }

void guarded(int id, const std::string& title, const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    report(id, title, false, std::string("error: ") + e.what());
  }
}

crypto::Bytes key_bytes(const std::string& s) { return {s.begin(), s.end()}; }

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main() {
  guarded(1, "AKM c=1 m=10", [] {
    const auto r = run("akm_c1_m10");
    const double p = predict::akm(1, 10).value;
    const double rate = metric(r.result, "detection_rate");
    const bool ok = r.result.trials.size() == 10000 && near(rate, p, 0.003) && r.seconds < 30.0;
    report(1, "AKM c=1 m=10", ok,
           "rate " + fmt(rate) + " vs " + fmt(p, 10) + " (tol 0.003), " +
               std::to_string(r.result.trials.size()) + " trials, " + fmt(r.seconds, 3) + " s");
  });

  guarded(2, "AKM general f=2 r=2 m=4", [] {
    const auto r = run("akm_general_f2_r2");
    const double po = predict::akm_general_owner(2, 2, 4).value;
    const double pa = predict::akm_general_any(2, 2, 4).value;
    const double owner = metric(r.result, "owner_detection_rate");
    const double any = metric(r.result, "detection_rate");
    const bool ok =
        r.result.trials.size() == 10000 && near(owner, po, 0.02) && near(any, pa, 0.005);
    report(2, "AKM general f=2 r=2 m=4", ok,
           "owner " + fmt(owner) + " vs " + fmt(po) + " (tol 0.02), any " + fmt(any) + " vs " +
               fmt(pa) + " (tol 0.005), 10000 trials");
  });

  guarded(3, "AKM owner churn", [] {
    const auto r = run("akm_churn_c2_m5");
    const double p = predict::akm_churn({2, 2, 2, 2, 2}, {false, true, true, false, false}).value;
    const double rate = metric(r.result, "detection_rate");
    report(3, "AKM owner churn c=2 m=5, owner offline 2 epochs", near(rate, p, 0.02),
           "rate " + fmt(rate) + " vs " + fmt(p) + " (tol 0.02), " +
               std::to_string(r.result.trials.size()) + " trials");
  });

  guarded(4, "KTCA detection-time bound", [] {
    bool ok = true;
    std::string detail;
    for (const char* name : {"ktca_bound_ring10", "ktca_bound_star101", "ktca_bound_gnp50"}) {
      const auto r = run(name);
      const double within = metric(r.result, "pom_within_bound_rate");
      const double valid = metric(r.result, "poms_valid_rate");
      const double worst = metric(r.result, "pom_coverage_max_ms");
      const double bound = metric(r.result, "pom_bound_max_ms");
      double tightest = 1e300;
      for (const auto& t : r.result.trials)
        if (t.pom_coverage_ms) tightest = std::min(tightest, t.pom_bound_ms - *t.pom_coverage_ms);
      const bool one = r.result.trials.size() == 1000 && within == 1.0 && valid == 1.0;
      ok = ok && one;
      detail += std::string(detail.empty() ? "" : "; ") + name + " " + fmt(within * 100, 4) +
                "% covered, max " + fmt(worst, 4) + " ms, bound " + fmt(bound, 4) +
                " ms, min slack " + fmt(tightest, 4) + " ms";
    }
    report(4, "KTCA detection-time bound", ok, detail + " (1000 trials each)");
  });

  guarded(5, "KTACA N=50", [] {
    const auto r = run("ktaca_n50");
    const double p1 = predict::ktaca(50, 1).value, p3 = predict::ktaca(50, 3).value;
    const double r1 = metric(r.result, "victim_pom_rate_by_rel_epoch_0");
    const double r3 = metric(r.result, "victim_pom_rate_by_rel_epoch_2");
    const bool ok = r.result.trials.size() == 10000 && near(r1, p1, 0.01) && near(r3, p3, 0.005);
    report(5, "KTACA N=50", ok,
           "first epoch " + fmt(r1) + " vs " + fmt(p1) + " (tol 0.01), three epochs " + fmt(r3) +
               " vs " + fmt(p3) + " (tol 0.005), 10000 trials");
  });

  guarded(6, "short-lived attack", [] {
    bool ok = true;
    std::string detail;
    for (const char* name : {"short_lived_ktca", "short_lived_akm", "short_lived_ktaca"}) {
      const auto r = run(name);
      const double at = metric(r.result, "duplicate_at_restore_rate");
      const double valid = metric(r.result, "poms_valid_rate");
      ok = ok && r.result.trials.size() == 1000 && at == 1.0 && valid == 1.0;
      detail += std::string(detail.empty() ? "" : "; ") + name + " " + fmt(at * 100, 4) +
                "% at restore, valid " + fmt(valid * 100, 4) + "%";
    }
    report(6, "short-lived attack", ok, detail + " (1000 trials each)");
  });

  guarded(7, "no false positives", [] {
    bool ok = true;
    std::string detail;
    for (const char* name : {"honest_1000e_ktca", "honest_1000e_akm", "honest_1000e_ktaca"}) {
      const auto r = run(name);
      const double core = metric(r.result, "core_events");
      const double heur = metric(r.result, "heuristic_events_per_client_epoch");
      ok = ok && core == 0.0;
      detail += std::string(detail.empty() ? "" : "; ") + name + " core " + fmt(core) +
                ", heuristic " + fmt(heur, 3) + "/client-epoch";
    }
    report(7, "no false positives", ok, detail);
  });

  guarded(8, "prevention mode", [] {
    const auto r = run("prevention_oob");
    const double within = metric(r.result, "oob_detect_within_2delta_rate");
    const double leaked = metric(r.result, "app_under_fake");
    const double worst = metric(r.result, "oob_detect_latency_max_ms");
    const bool ok = r.result.trials.size() == 1000 && within == 1.0 && leaked == 0.0;
    report(8, "prevention mode", ok,
           fmt(within * 100, 4) + "% detected within 2 delta, max " + fmt(worst, 4) +
               " ms, app messages under the fake key " + fmt(leaked) + ", 1000 trials");
  });

  guarded(9, "traffic accounting", [] {
    const auto rep = accounting::closed_form({});
    const auto ktca = rep.get("KTCA", "per_epoch");
    const auto lookup = rep.get("KTCA", "poi_lookup");
    const auto month = rep.get("KTCA", "monthly");
    const auto ktaca = rep.get("KTACA", "per_epoch");
    const bool flagged = ktaca != accounting::kPublishedKtacaEpochBytes && !rep.notes.empty();
    const auto r = run("accounting_ktca");
    const auto acc = runner::account_json(r.result);
    const bool exchange = acc["simulated"]["str_exchange_matches"].get<bool>();
    const bool ok = ktca == 7136 && lookup == 1056 && month == 220416 && ktaca == 33952 &&
                    flagged && exchange;
    report(9, "traffic accounting", ok,
           "KTCA " + std::to_string(ktca) + " B/epoch, PoI lookup " + std::to_string(lookup) +
               " B, KTCA month " + std::to_string(month) + " B, KTACA " +
               std::to_string(ktaca) + " B/epoch (published figure rounds to 33960), simulated STR "
               "exchange " + (exchange ? "matches" : "differs"));
  });

  guarded(10, "PoI soundness", [] {
    const auto sk = crypto::KeyPair::from_seed(std::uint64_t{4242});
    std::mt19937_64 rng(2024);
    std::uint64_t forged = 0, total = 0;
    for (int n : {1, 8, 64, 1024}) {
      std::vector<log::PublicKeyRecord> recs;
      for (int i = 0; i < n; ++i)
        recs.push_back({"user-" + std::to_string(i), key_bytes("pk" + std::to_string(i)), 0});
      const auto tree = log::build_tree(recs, 1000 + static_cast<std::uint64_t>(n), 0);
      const auto str = log::generate_str(tree, std::nullopt, sk, 0);
      for (int i = 0; i < 10000; ++i) {
        const auto& r = recs[rng() % recs.size()];
        auto poi = log::prove_inclusion(tree, r.client_id);
        auto id = r.client_id;
        auto pk = r.public_key;
        auto s = str;
        bool mutated = false;
        while (!mutated) {
          mutated = true;
          switch (rng() % 12) {
            case 0: pk.push_back(static_cast<std::uint8_t>(rng())); break;
            case 1: pk[rng() % pk.size()] ^= static_cast<std::uint8_t>(1 + rng() % 255); break;
            case 2:
              if (n == 1) { mutated = false; break; }
              pk = recs[(&r - recs.data() + 1 + rng() % (n - 1)) % n].public_key;
              break;
            case 3:
              if (n == 1) { mutated = false; break; }
              id = recs[(&r - recs.data() + 1 + rng() % (n - 1)) % n].client_id;
              break;
            case 4:
              if (poi.siblings.empty()) { mutated = false; break; }
              poi.siblings[rng() % poi.siblings.size()].sibling.bytes[rng() % 32] ^= 1;
              break;
            case 5:
              if (poi.siblings.empty()) { mutated = false; break; }
              poi.siblings[rng() % poi.siblings.size()].side ^= true;
              break;
            case 6:
              if (poi.nonces.empty()) { mutated = false; break; }
              poi.nonces[rng() % poi.nonces.size()].bytes[rng() % 32] ^= 0x80;
              break;
            case 7: poi.leaf.nonce.bytes[rng() % 32] ^= 4; break;
            case 8: poi.leaf.index.bytes[rng() % 32] ^= 2; break;
            case 9: poi.depth += (rng() % 2) ? 1 : -1; break;
            case 10:
              if (poi.siblings.empty()) { mutated = false; break; }
              poi.siblings.pop_back();
              break;
            case 11: s.root_hash.bytes[rng() % 32] ^= 8; break;
          }
        }
        forged += log::verify_poi(s, poi, id, pk, sk.verifying_key());
        ++total;
      }
    }
    std::vector<naive::Rec> nrecs;
    std::vector<log::PublicKeyRecord> recs8;
    for (int i = 0; i < 8; ++i) {
      nrecs.push_back({"user-" + std::to_string(i), "pk" + std::to_string(i), {}, 0});
      recs8.push_back({"user-" + std::to_string(i), key_bytes("pk" + std::to_string(i)), 0});
    }
    const auto root = log::build_tree(recs8, 42, 0).root_hash();
    const bool naive_ok = root == naive::root(nrecs, 42, 0);
    // tests/oracles/tree_root.py 8 42 0
    const bool golden =
        root.hex() == "a613e84ec4db3f8af924645ab284d6d87793d37cb793858b459dd1d6213b3aeb";
    report(10, "PoI soundness", forged == 0 && total == 40000 && naive_ok && golden,
           std::to_string(forged) + " forged of " + std::to_string(total) +
               " mutations over sizes {1, 8, 64, 1024}; 8-record root " +
               (naive_ok ? "matches" : "differs from") + " the naive builder and " +
               (golden ? "matches" : "differs from") + " the hashlib oracle");
  });

  guarded(11, "graph partition", [] {
    const auto w = run("partition_within_arc");
    const auto x = run("partition_cross_arc");
    const double within = metric(w.result, "pom_within_bound_rate");
    const double before = metric(x.result, "pom_rate_by_rel_epoch_2");
    const double after = metric(x.result, "pom_rate_by_rel_epoch_4");
    const double valid = std::min(metric(w.result, "poms_valid_rate"),
                                  metric(x.result, "poms_valid_rate"));
    const bool ok = within == 1.0 && before == 0.0 && after == 1.0 && valid == 1.0;
    report(11, "graph partition", ok,
           "within-arc " + fmt(within * 100, 4) + "% in bound; cross-arc PoM before the new "
           "edge " + fmt(before * 100, 4) + "%, by the end of the epoch after it " +
               fmt(after * 100, 4) + "%");
  });

  guarded(12, "determinism", [] {
    const auto base = std::filesystem::temp_directory_path() / "ktsim_acceptance";
    std::filesystem::remove_all(base);
    bool ok = true;
    std::string detail;
    for (const char* name : {"ktca_bound_gnp50", "akm_general_f2_r2", "ktaca_n50"}) {
      const auto s = scenario::with_overrides(scenario::load(scenario::resolve(name)),
                                              {std::uint64_t{77}, std::uint64_t{60}, {}});
      runner::write_outputs(runner::run(s, 1), base / name / "a");
      runner::write_outputs(runner::run(s, 3), base / name / "b");
      const bool same = slurp(base / name / "a" / "metrics.json") ==
                            slurp(base / name / "b" / "metrics.json") &&
                        slurp(base / name / "a" / "trials.csv") ==
                            slurp(base / name / "b" / "trials.csv");
      ok = ok && same;
      detail += std::string(detail.empty() ? "" : ", ") + name + (same ? " identical" : " DIFFERS");
    }
    report(12, "determinism", ok, detail + " (two runs, 1 and 3 threads)");
  });

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
