#include "doctest.h"
#include "ktsim/client.hpp"
#include "ktsim/error.hpp"
#include "ktsim/server.hpp"

using namespace ktsim;
using namespace ktsim::client;

namespace {

crypto::Bytes pk(std::uint64_t seed) {
  const auto& b = crypto::KeyPair::from_seed(seed).verifying_key().bytes;
  return {b.begin(), b.end()};
}

struct RecEnv : Env {
  Time t = 0;
  Epoch e = 0;
  sim::ClockConfig clk{20000, 1000, 2000};
  sim::Rng r{1};
  std::vector<msg::Message> to_srv;
  std::vector<std::pair<std::string, msg::Message>> to_peer;
  std::vector<msg::Message> anon;
  std::vector<std::pair<client::TimerKind, std::uint64_t>> timers;
  std::vector<DetectionEvent> events;

  Time now() const override { return t; }
  Epoch epoch() const override { return e; }
  const sim::ClockConfig& clock() const override { return clk; }
  void to_server(const std::string&, msg::Message m) override { to_srv.push_back(std::move(m)); }
  void to_client(const std::string&, const std::string& to, msg::Message m) override {
    to_peer.emplace_back(to, std::move(m));
  }
  void anonymous(const std::string&, msg::Message m) override { anon.push_back(std::move(m)); }
  void oob(const std::string&, const std::string&, msg::Message) override {}
  void timer(const std::string&, Time, TimerKind k, std::uint64_t tag) override {
    timers.emplace_back(k, tag);
  }
  void detect(DetectionEvent ev) override { events.push_back(std::move(ev)); }
  sim::Rng& rng() override { return r; }
};

const crypto::KeyPair& server_key() {
  static const auto k = crypto::KeyPair::from_seed(std::uint64_t{500});
  return k;
}

struct Fixture {
  RecEnv env;
  server::Server srv{server_key(), server::ServerConfig{1, 2, true, 10}};
  Client alice;

  explicit Fixture(Defense d = Defense::KTCA)
      : alice(ClientConfig{"alice", d, {}, {}, server_key().verifying_key(), 2},
              crypto::KeyPair::from_seed(std::uint64_t{1}), env) {
    srv.register_initial("alice", pk(1));
    srv.register_initial("bob", pk(2));
    srv.register_initial("carol", pk(3));
    alice.add_contact("bob", srv.real_response("bob", 0, 0));
    alice.add_contact("carol", srv.real_response("carol", 0, 0));
  }

  msg::AuditReply audit(Epoch e) {
    env.e = e;
    env.t = env.clk.epoch_start(e);
    srv.epoch_commit(e, static_cast<std::uint64_t>(e) * 20);
    env.to_srv.clear();
    alice.on_epoch_start(e);
    REQUIRE(!env.to_srv.empty());
    const auto& req = std::get<msg::AuditRequest>(env.to_srv.front());
    auto reply = srv.handle_audit("alice", req, e);
    REQUIRE(reply);
    env.t += 500;
    return *reply;
  }
};

// Same signing key, different directory: a second branch for epoch 0.
SignedTreeRoot forked_str(Epoch e) {
  server::Server other(server_key(), server::ServerConfig{1, 2, true, 10});
  other.register_initial("alice", pk(1));
  other.register_initial("bob", pk(99));
  other.register_initial("carol", pk(3));
  std::map<int, SignedTreeRoot> strs;
  for (Epoch j = 0; j <= e; ++j) strs = other.epoch_commit(j, j * 20);
  return strs.at(0);
}

}  // namespace

TEST_CASE("honest audit: no events and the STR is gossiped to every contact") {
  Fixture f;
  const auto reply = f.audit(0);
  f.alice.from_server(reply);
  CHECK(f.env.events.empty());
  CHECK(f.alice.last_verified_epoch() == Epoch{0});
  int gossip = 0;
  for (const auto& [to, m] : f.env.to_peer) gossip += std::holds_alternative<msg::StrGossip>(m);
  CHECK(gossip == 2);
  f.alice.on_timer(TimerKind::AuditTimeout, 0);
  CHECK(f.env.events.empty());
}

TEST_CASE("a conflicting STR from a contact yields an adjudicating PoM") {
  Fixture f;
  f.alice.from_server(f.audit(0));
  f.env.to_peer.clear();
  f.alice.from_client("bob", msg::StrGossip{forked_str(0)});
  REQUIRE(f.env.events.size() == 1);
  const auto& ev = f.env.events.front();
  CHECK(ev.cause == Cause::ConflictingSTR);
  REQUIRE(ev.pom);
  CHECK(log::adjudicate(*ev.pom, server_key().verifying_key()));
  CHECK(f.alice.disconnected());
  int floods = 0;
  for (const auto& [to, m] : f.env.to_peer) floods += std::holds_alternative<msg::PomGossip>(m);
  CHECK(floods == 2);
}

TEST_CASE("a PoM that does not adjudicate is ignored") {
  Fixture f;
  f.alice.from_server(f.audit(0));
  auto pom = log::make_pom_conflict(f.srv.str(0, 0), forked_str(0), server_key().verifying_key());
  auto& ev = std::get<log::ConflictEvidence>(pom.evidence);
  ev.b.root_hash = ev.a.root_hash;
  f.alice.from_client("bob", msg::PomGossip{pom});
  CHECK(f.env.events.empty());
  CHECK_FALSE(f.alice.held_pom());
}

TEST_CASE("a relayed valid PoM is held and flooded on") {
  Fixture f;
  f.alice.from_server(f.audit(0));
  f.env.to_peer.clear();
  const auto pom =
      log::make_pom_conflict(f.srv.str(0, 0), forked_str(0), server_key().verifying_key());
  f.alice.from_client("bob", msg::PomGossip{pom});
  REQUIRE(f.env.events.size() == 1);
  CHECK(f.alice.held_pom());
  REQUIRE(f.env.to_peer.size() == 1);
  CHECK(f.env.to_peer.front().first == "carol");
}

TEST_CASE("missing own proof and missing reply are detected") {
  SUBCASE("missing proof") {
    Fixture f;
    auto reply = f.audit(0);
    reply.entries.back().own_poi.reset();
    f.alice.from_server(reply);
    REQUIRE(f.env.events.size() == 1);
    CHECK(f.env.events.front().cause == Cause::MissingPoI);
  }
  SUBCASE("timeout") {
    Fixture f;
    (void)f.audit(0);
    f.alice.on_timer(TimerKind::AuditTimeout, 0);
    REQUIRE(f.env.events.size() == 1);
    CHECK(f.env.events.front().cause == Cause::MissingSTR);
  }
  SUBCASE("broken chain") {
    Fixture f;
    f.alice.from_server(f.audit(0));
    auto reply = f.audit(1);
    reply.entries.back().str = forked_str(1);
    f.alice.from_server(reply);
    REQUIRE_FALSE(f.env.events.empty());
  }
}

TEST_CASE("fake key then restore: the restoring push completes a DuplicateKey PoM") {
  Fixture f;
  f.alice.from_server(f.audit(0));
  f.env.e = 1;
  f.env.t = 21000;
  server::AdversaryStrategy a;
  a.kind = server::AttackKind::PairImpersonation;
  a.target = "bob";
  a.peer = "alice";
  a.scope = server::Scope::ExistingConnections;
  a.short_lived_restore_after = 2000;
  const auto g = sim::Topology::explicit_graph({"alice", "bob", "carol"},
                                               {{"alice", "bob"}, {"alice", "carol"}});
  f.srv.set_strategy(a, g, {{1, 2}, {0}, {0}});
  const auto fake = f.srv.fake_response("alice", "bob", 1, 21000);
  f.alice.from_server(msg::KeyPush{fake});
  CHECK(f.env.events.empty());
  f.alice.from_server(msg::KeyPush{fake});  // re-delivery
  CHECK(f.env.events.empty());
  f.env.t = 23000;
  const auto restore = f.srv.real_response("bob", 1, 23000);
  f.alice.from_server(msg::KeyPush{restore});
  REQUIRE(f.env.events.size() == 1);
  const auto& ev = f.env.events.front();
  CHECK(ev.cause == Cause::DuplicateKey);
  CHECK(ev.time_us == 23000);
  REQUIRE(ev.pom);
  CHECK(ev.pom->kind() == log::PomKind::DuplicateKey);
  CHECK(log::adjudicate(*ev.pom, server_key().verifying_key()));
}

TEST_CASE("responses for strangers or with bad signatures are dropped") {
  Fixture f;
  f.alice.from_server(f.audit(0));
  auto r = f.srv.real_response("bob", 0, 100);
  r.public_key = pk(77);
  f.alice.from_server(msg::KeyPush{r});
  CHECK(f.alice.contact_key("bob")->public_key == pk(2));
  f.srv.register_initial("dave", pk(4));
  f.alice.from_server(msg::KeyPush{f.srv.real_response("dave", 0, 100)});
  CHECK(f.alice.contact_key("dave") == nullptr);
  CHECK(f.env.events.empty());
}

TEST_CASE("cause classification") {
  CHECK(is_core(Cause::ConflictingSTR));
  CHECK(is_core(Cause::DuplicateKey));
  CHECK(is_core(Cause::AKRMismatch));
  CHECK_FALSE(is_core(Cause::MassKeyUpdate));
  CHECK(is_heuristic(Cause::Isolation));
  CHECK(parse_defense("KTACA") == Defense::KTACA);
  CHECK_THROWS_AS(parse_defense("XYZ"), ConfigInvalid);
}
