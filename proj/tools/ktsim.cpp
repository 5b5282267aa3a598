// ktsim command line: run scenarios, evaluate closed-form predictions and
// print the traffic accounting report.

#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "ktsim/error.hpp"
#include "ktsim/metrics.hpp"
#include "ktsim/predict.hpp"
#include "ktsim/runner.hpp"
#include "ktsim/scenario.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kViolated = 1;
constexpr int kConfigError = 2;

}  // namespace

int main(int argc, char** argv) {
  using namespace ktsim;
  CLI::App app{"Key transparency attack-detection simulator"};
  app.require_subcommand(1);

  std::string scenario_name;
  std::optional<std::uint64_t> seed, trials, epochs;
  std::string out_dir;
  std::string format = "text";
  unsigned threads = 0;

  auto* run = app.add_subcommand("run", "Run a scenario");
  run->add_option("scenario", scenario_name, "Scenario file or bundled name")->required();
  run->add_option("--seed", seed, "Master seed");
  run->add_option("--trials", trials, "Number of trials");
  run->add_option("--epochs", epochs, "Epochs per trial");
  run->add_option("--out", out_dir, "Write metrics.json, trials.csv and summary.txt here");
  run->add_option("--format", format, "Output on stdout")
      ->check(CLI::IsMember({"json", "csv", "text"}));
  run->add_option("--threads", threads, "Worker threads (0: all cores)");

  std::string defense, params;
  auto* pred = app.add_subcommand("predict", "Evaluate a closed-form expectation");
  pred->add_option("--defense", defense, "AKM, AKM-churn, AKM-general, KTACA or KTCA")->required();
  pred->add_option("--params", params, "Comma separated k=v pairs, lists joined with ';'");
  pred->add_option("--format", format, "Output format")->check(CLI::IsMember({"json", "text"}));

  auto* acc = app.add_subcommand("account", "Traffic accounting report for a scenario");
  acc->add_option("scenario", scenario_name, "Scenario file or bundled name")->required();
  acc->add_option("--trials", trials, "Number of trials");
  acc->add_option("--format", format, "Output format")->check(CLI::IsMember({"json", "text"}));
  acc->add_option("--threads", threads, "Worker threads (0: all cores)");

  auto* list = app.add_subcommand("list-scenarios", "List bundled scenarios");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (*list) {
      for (const auto& name : scenario::bundled()) {
        std::string desc;
        try {
          desc = scenario::load(scenario::resolve(name)).description;
        } catch (const Error& e) {
          desc = std::string("(invalid: ") + e.what() + ")";
        }
        std::cout << name << (desc.empty() ? "" : "  " + desc) << "\n";
      }
      return kOk;
    }
    if (*pred) {
      const auto p = predict::evaluate(defense, predict::parse_params(params));
      if (format == "json") {
        nlohmann::json j{{"defense", defense},
                         {"formula", p.formula},
                         {"exact", p.exact},
                         {"value", p.value},
                         {"probability", p.probability}};
        std::cout << j.dump(2) << "\n";
      } else {
        std::cout << p.formula << " = " << p.exact << " = " << std::setprecision(17) << p.value
                  << "\n";
      }
      return kOk;
    }

    scenario::Overrides o{seed, trials, epochs};
    auto s = scenario::with_overrides(scenario::load(scenario::resolve(scenario_name)), o);
    const auto r = runner::run(s, threads);

    if (*acc) {
      const auto report = runner::account_json(r);
      std::cout << (format == "json" ? report.dump(2) + "\n" : runner::account_text(report));
      return kOk;
    }

    if (!out_dir.empty()) runner::write_outputs(r, out_dir);
    if (format == "json")
      std::cout << runner::metrics_json(r).dump(2) << "\n";
    else if (format == "csv")
      std::cout << metrics::trials_csv(r.trials);
    else
      std::cout << runner::summary_text(r);
    return r.predictions_met ? kOk : kViolated;
  } catch (const ConfigInvalid& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const Unsupported& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  }
}
