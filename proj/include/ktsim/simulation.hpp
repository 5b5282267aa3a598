#pragma once

// Discrete-event simulation of one trial: a server (honest or adversarial),
// N clients running one defense, bounded-delay links, churn and an
// anonymity network that batches requests per epoch.

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "ktsim/client.hpp"
#include "ktsim/messages.hpp"
#include "ktsim/server.hpp"
#include "ktsim/simnet.hpp"

namespace ktsim::sim {

struct Connection {
  Epoch epoch = 0;
  std::string a;
  std::string b;
};

struct SimConfig {
  std::string name;
  std::uint64_t seed = 0;
  client::Defense defense = client::Defense::KTCA;
  Epoch epochs = 1;
  ClockConfig clock;
  Topology topology;
  ChurnModel churn;
  double key_updates_per_epoch = 0.0;  // fraction of online clients
  std::vector<Connection> connections;
  server::AdversaryStrategy adversary;
  client::MonitorPolicy monitor;
  client::PreventionPolicy prevention;
  int app_messages_per_epoch = 0;  // per online client, to random contacts
  msg::WireSizes sizes;

  /// Checks every cross-module invariant. Throws ConfigInvalid.
  void validate() const;
  /// Initial graph plus every scheduled connection.
  Topology final_topology() const;
};

struct TrialResult {
  std::uint64_t trial = 0;

  bool detected = false;  // any core event
  std::optional<double> first_time_ms;
  std::optional<Epoch> first_epoch;
  std::optional<client::Cause> first_cause;
  std::optional<std::int64_t> first_rel_epoch;  // relative to the attack start
  std::vector<std::string> detectors;
  bool pom_present = false;
  bool poms_valid = true;  // every emitted PoM adjudicates
  std::optional<std::int64_t> owner_rel_epoch;
  std::optional<std::int64_t> victim_rel_epoch;
  std::optional<std::int64_t> victim_pom_rel_epoch;
  std::optional<std::int64_t> first_pom_epoch;
  std::array<std::uint64_t, client::kCauses> cause_counts{};

  // PoM spread over the target's component, measured from the start epoch.
  bool pom_coverage_complete = false;
  std::optional<double> pom_coverage_ms;
  double pom_bound_ms = 0.0;

  // Short-lived attack.
  std::optional<double> restore_ms;
  std::optional<double> duplicate_pom_ms;

  // Prevention.
  std::optional<double> oob_detect_latency_ms;
  std::uint64_t app_sent = 0;
  std::uint64_t app_under_fake = 0;

  // Traffic.
  std::array<std::uint64_t, msg::kTrafficClasses> bytes{};
  std::uint64_t client_epochs = 0;      // online client-epochs
  std::uint64_t str_exchange_peers = 0;  // distinct contacts sent an STR, summed
  std::uint64_t lookups = 0;
  std::uint64_t max_stored_bytes = 0;
  std::uint64_t events = 0;
};

class Simulation final : public client::Env {
 public:
  Simulation(const SimConfig& cfg, std::uint64_t trial);
  ~Simulation() override;

  TrialResult run();

  const server::Server& server() const { return *server_; }
  const client::Client& client(std::string_view id) const;
  const std::vector<client::DetectionEvent>& events() const { return events_; }

  // Env
  Time now() const override { return now_; }
  Epoch epoch() const override { return epoch_; }
  const ClockConfig& clock() const override { return cfg_.clock; }
  void to_server(const std::string& from, msg::Message m) override;
  void to_client(const std::string& from, const std::string& to, msg::Message m) override;
  void anonymous(const std::string& from, msg::Message m) override;
  void oob(const std::string& from, const std::string& to, msg::Message m) override;
  void timer(const std::string& owner, Time at, client::TimerKind kind,
             std::uint64_t tag) override;
  void detect(client::DetectionEvent ev) override;
  Rng& rng() override { return client_rng_; }

 private:
  enum class Channel : std::uint8_t { ToServer, FromServer, Relay, Oob, Anonymous };

  struct Deliver {
    Channel channel;
    int from;
    int to;
    msg::Message message;
    std::uint8_t tag = 0;
  };
  struct Timer {
    int owner;
    client::TimerKind kind;
    std::uint64_t tag;
  };
  struct KeyUpdate {
    int client;
  };
  struct AttackPush {
    int victim;
    int subject;
    bool restore;
  };
  struct Connect {
    int a;
    int b;
  };
  struct App {
    int client;
  };
  struct AnonBatch {
    Epoch epoch;
  };
  struct Boundary {
    Epoch epoch;
  };
  using Payload =
      std::variant<Deliver, Timer, KeyUpdate, AttackPush, Connect, App, AnonBatch, Boundary>;

  struct Key {
    Time t;
    int cls;
    std::uint64_t seq;
    bool operator>(const Key& o) const {
      if (t != o.t) return t > o.t;
      if (cls != o.cls) return cls > o.cls;
      return seq > o.seq;
    }
  };

  void schedule(Time t, Payload p);
  void send(Channel ch, int from, int to, msg::Message m, Time bound, std::uint8_t tag = 0);
  void charge(int client, const msg::Message& m);
  int index(std::string_view id) const;
  bool cut(int a, int b) const;
  bool attack_window() const;

  void handle(Deliver& d);
  void handle(const Timer& t);
  void handle(const KeyUpdate& u);
  void handle(const AttackPush& p);
  void handle(const Connect& c);
  void handle(const App& a);
  void handle(const AnonBatch& b);
  void handle(const Boundary& b);
  void server_receive(int from, const msg::Message& m);
  std::vector<std::string> contacts_of(int c) const;
  TrialResult collect();

  const SimConfig& cfg_;
  std::uint64_t trial_;
  std::unique_ptr<server::Server> server_;
  std::vector<std::unique_ptr<client::Client>> clients_;
  std::vector<std::string> ids_;
  std::map<std::string, int, std::less<>> index_;
  Topology graph_;
  std::vector<std::set<int>> adj_;
  std::set<Edge> cut_;

  Rng churn_rng_, delay_rng_, action_rng_, adversary_rng_, anon_rng_, client_rng_;

  std::priority_queue<Key, std::vector<Key>, std::greater<>> queue_;
  std::unordered_map<std::uint64_t, Payload> payloads_;
  std::uint64_t seq_ = 0;
  Time now_ = 0;
  Time end_ = 0;
  Epoch epoch_ = 0;
  std::vector<bool> online_;
  std::map<Epoch, std::vector<bool>> online_history_;
  std::unordered_map<std::uint64_t, Time> last_delivery_;
  std::vector<int> key_versions_;

  struct AnonRequest {
    int from;
    msg::Message message;
  };
  std::map<Epoch, std::vector<AnonRequest>> anon_;

  std::vector<client::DetectionEvent> events_;
  std::vector<std::optional<Time>> pom_time_;
  std::map<int, Time> restore_delivered_;
  std::map<int, Time> fake_delivered_;
  TrialResult result_;
  std::vector<std::set<int>> str_peers_;  // per client, this epoch
};

TrialResult run_trial(const SimConfig& cfg, std::uint64_t trial);

}  // namespace ktsim::sim
