#include "ktsim/simulation.hpp"

#include <algorithm>

#include "ktsim/error.hpp"

namespace ktsim::sim {

namespace {

constexpr int kDeliver = 0;
constexpr int kTimer = 1;
constexpr int kAction = 2;
constexpr int kBoundary = 3;

constexpr std::uint8_t kPlain = 0;
constexpr std::uint8_t kFake = 1;
constexpr std::uint8_t kRestore = 2;

crypto::KeyPair client_key(std::uint64_t seed, const std::string& id, int version) {
  return crypto::KeyPair::from_seed(
      crypto::derive_seed(seed, "client-key:" + id, static_cast<std::uint64_t>(version)));
}

double ms(Time us) { return us_to_ms(us); }

}  // namespace

void SimConfig::validate() const {
  if (topology.size() < 2) throw ConfigInvalid("topology", "need at least 2 clients");
  if (epochs < 1) throw ConfigInvalid("epochs", "must be at least 1");
  const int diam = graph_diameter(topology);
  // Only KTCA's gossip has to cross the graph within an epoch.
  clock.validate(defense == client::Defense::KTCA ? diam : std::min(diam, 0));
  if (churn.offline_prob < 0.0 || churn.offline_prob >= 1.0)
    throw ConfigInvalid("churn.offline_prob", "must be in [0, 1)");
  if (churn.min_online_fraction < 0.5 || churn.min_online_fraction > 1.0)
    throw ConfigInvalid("churn.min_online_fraction", "must be in [0.5, 1]");
  for (const auto& [idx, eps] : churn.scripted)
    if (idx < 0 || static_cast<std::size_t>(idx) >= topology.size())
      throw ConfigInvalid("churn.offline", "unknown client index");
  if (key_updates_per_epoch < 0.0 || key_updates_per_epoch > 1.0)
    throw ConfigInvalid("key_updates.per_epoch", "must be in [0, 1]");
  for (const auto& c : connections) {
    if (c.epoch >= epochs) throw ConfigInvalid("connections.epoch", "beyond the last epoch");
    const int a = topology.index_of(c.a), b = topology.index_of(c.b);
    if (a < 0 || b < 0) throw ConfigInvalid("connections", "unknown client " + c.a + "/" + c.b);
    if (a == b) throw ConfigInvalid("connections", "self connection " + c.a);
  }
  adversary.validate(final_topology());
  if (adversary.short_lived()) {
    if (adversary.scope == server::Scope::NewConnections)
      throw ConfigInvalid("adversary.scope", "short-lived attacks push to existing contacts");
    if (*adversary.short_lived_restore_after >= clock.epoch_len / 2)
      throw ConfigInvalid("adversary.short_lived.restore_after_ms",
                          "must be below half an epoch");
  }
  monitor.validate();
  if (app_messages_per_epoch < 0)
    throw ConfigInvalid("app_messages.per_epoch", "must be non-negative");
}

Topology SimConfig::final_topology() const {
  Topology t = topology;
  for (const auto& c : connections) {
    const int a = t.index_of(c.a), b = t.index_of(c.b);
    if (a >= 0 && b >= 0 && a != b) t.add_edge(a, b);
  }
  return t;
}

Simulation::Simulation(const SimConfig& cfg, std::uint64_t trial)
    : cfg_(cfg), trial_(trial), graph_(cfg.topology) {
  const std::size_t n = graph_.size();
  ids_ = graph_.clients;
  for (std::size_t i = 0; i < n; ++i) index_[ids_[i]] = static_cast<int>(i);
  adj_.assign(n, {});
  for (const auto& [a, b] : graph_.edges) {
    adj_[a].insert(b);
    adj_[b].insert(a);
  }

  const auto ts = crypto::derive_seed(cfg.seed, "trial", trial);
  churn_rng_.seed(crypto::derive_seed(ts, "churn"));
  delay_rng_.seed(crypto::derive_seed(ts, "delays"));
  action_rng_.seed(crypto::derive_seed(ts, "actions"));
  adversary_rng_.seed(crypto::derive_seed(ts, "adversary"));
  anon_rng_.seed(crypto::derive_seed(ts, "anonymity"));
  client_rng_.seed(crypto::derive_seed(ts, "clients"));

  server::ServerConfig scfg;
  scfg.tree_seed = crypto::derive_seed(cfg.seed, "tree");
  scfg.fake_seed = crypto::derive_seed(cfg.seed, "fake");
  scfg.transparency = cfg.defense != client::Defense::AKM;
  scfg.monitor_epochs = cfg.monitor.m;
  server_ = std::make_unique<server::Server>(
      crypto::KeyPair::from_seed(crypto::derive_seed(cfg.seed, "server-key")), scfg);

  std::vector<crypto::KeyPair> keys;
  for (const auto& id : ids_) {
    keys.push_back(client_key(cfg.seed, id, 0));
    const auto& vk = keys.back().verifying_key();
    server_->register_initial(id, crypto::Bytes(vk.bytes.begin(), vk.bytes.end()));
  }
  key_versions_.assign(n, 0);

  std::vector<std::vector<int>> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i].assign(adj_[i].begin(), adj_[i].end());
  for (const auto& c : cfg.connections) {
    const int a = index(c.a), b = index(c.b);
    if (std::find(order[a].begin(), order[a].end(), b) == order[a].end()) order[a].push_back(b);
    if (std::find(order[b].begin(), order[b].end(), a) == order[b].end()) order[b].push_back(a);
  }
  server_->set_strategy(cfg.adversary, graph_, order);
  if (cfg.adversary.partition)
    for (const auto& [a, b] : cfg.adversary.partition->cut) cut_.insert(make_edge(index(a), index(b)));

  const int diam = graph_diameter(graph_);
  std::vector<log::KeyResponse> boot;
  for (const auto& id : ids_) boot.push_back(server_->real_response(id, 0, 0));
  for (std::size_t i = 0; i < n; ++i) {
    client::ClientConfig cc;
    cc.id = ids_[i];
    cc.defense = cfg.defense;
    cc.monitor = cfg.monitor;
    cc.prevention = cfg.prevention;
    cc.server_pub = server_->public_key();
    cc.diameter = diam;
    clients_.push_back(std::make_unique<client::Client>(cc, std::move(keys[i]), *this));
  }
  for (const auto& [a, b] : graph_.edges) {
    clients_[a]->add_contact(ids_[b], boot[b]);
    clients_[b]->add_contact(ids_[a], boot[a]);
    if (cfg.prevention.enabled && cfg.prevention.oob) {
      crypto::MacKey k{};
      const auto d = crypto::hash(crypto::Domain::SeedDerivation,
                                  crypto::Encoder().u64(cfg.seed).var("oob").var(ids_[a]).var(ids_[b]).bytes());
      std::copy(d.bytes.begin(), d.bytes.end(), k.begin());
      clients_[a]->set_oob_key(ids_[b], k);
      clients_[b]->set_oob_key(ids_[a], k);
    }
  }

  online_.assign(n, true);
  pom_time_.assign(n, std::nullopt);
  str_peers_.assign(n, {});
  result_.trial = trial;
  end_ = cfg.clock.epoch_start(cfg.epochs);
  schedule(0, Boundary{0});
}

Simulation::~Simulation() = default;

const client::Client& Simulation::client(std::string_view id) const {
  return *clients_.at(static_cast<std::size_t>(index(id)));
}

int Simulation::index(std::string_view id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw UnknownSubject(std::string(id));
  return it->second;
}

void Simulation::schedule(Time t, Payload p) {
  int cls = kAction;
  if (std::holds_alternative<Deliver>(p))
    cls = kDeliver;
  else if (std::holds_alternative<Timer>(p))
    cls = kTimer;
  else if (std::holds_alternative<Boundary>(p))
    cls = kBoundary;
  const std::uint64_t s = seq_++;
  queue_.push({t, cls, s});
  payloads_.emplace(s, std::move(p));
}

void Simulation::charge(int client, const msg::Message& m) {
  if (client < 0) return;
  for (const auto& [cls, n] : msg::wire_bytes(m, cfg_.sizes))
    result_.bytes[static_cast<std::size_t>(cls)] += n;
}

void Simulation::send(Channel ch, int from, int to, msg::Message m, Time bound,
                      std::uint8_t tag) {
  charge(ch == Channel::FromServer ? to : from, m);
  Time t = now_ + sample_delay(delay_rng_, bound);
  if (ch != Channel::Anonymous) {
    const auto n = static_cast<std::uint64_t>(ids_.size()) + 1;
    const std::uint64_t link =
        (static_cast<std::uint64_t>(ch) * n + static_cast<std::uint64_t>(from + 1)) * n +
        static_cast<std::uint64_t>(to + 1);
    auto& last = last_delivery_[link];
    t = std::max(t, last);
    last = t;
  }
  schedule(t, Deliver{ch, from, to, std::move(m), tag});
}

bool Simulation::cut(int a, int b) const { return cut_.count(make_edge(a, b)) != 0; }

bool Simulation::attack_window() const {
  return !cfg_.adversary.honest() && epoch_ + 1 >= cfg_.adversary.start_epoch;
}

std::vector<std::string> Simulation::contacts_of(int c) const {
  std::vector<std::string> out;
  for (int o : adj_[c]) out.push_back(ids_[o]);
  return out;
}

// ---------------------------------------------------------------------------
// Env

void Simulation::to_server(const std::string& from, msg::Message m) {
  send(Channel::ToServer, index(from), -1, std::move(m), cfg_.clock.delta);
}

void Simulation::to_client(const std::string& from, const std::string& to, msg::Message m) {
  const int a = index(from), b = index(to);
  if (std::holds_alternative<msg::StrGossip>(m)) str_peers_[a].insert(b);
  if (const auto* app = std::get_if<msg::AppMessage>(&m)) {
    ++result_.app_sent;
    if (!cfg_.adversary.honest() && app->recipient_key == server_->fake_key_for(to))
      ++result_.app_under_fake;
  }
  const auto& s = cfg_.adversary;
  const bool isolated = s.isolate && attack_window() && (from == s.target || to == s.target);
  if (cut(a, b) || isolated) {
    charge(a, m);
    return;
  }
  send(Channel::Relay, a, b, std::move(m), 2 * cfg_.clock.delta);
}

void Simulation::anonymous(const std::string& from, msg::Message m) {
  const int a = index(from);
  charge(a, m);
  anon_[epoch_].push_back({a, std::move(m)});
}

void Simulation::oob(const std::string& from, const std::string& to, msg::Message m) {
  const int a = index(from), b = index(to);
  const auto& v = server_->victims();
  const auto& o = server_->owners();
  const bool touched = v.count(from) || v.count(to) || o.count(from) || o.count(to);
  if (cfg_.adversary.drop_oob && attack_window() && touched) {
    charge(a, m);
    return;
  }
  send(Channel::Oob, a, b, std::move(m), cfg_.clock.delta);
}

void Simulation::timer(const std::string& owner, Time at, client::TimerKind kind,
                       std::uint64_t tag) {
  schedule(std::max(at, now_), Timer{index(owner), kind, tag});
}

void Simulation::detect(client::DetectionEvent ev) {
  ev.attack_tag = cfg_.name;
  const int c = index(ev.detector);
  if (ev.pom) {
    if (!log::adjudicate(*ev.pom, server_->public_key())) result_.poms_valid = false;
    if (!pom_time_[c]) pom_time_[c] = ev.time_us;
  }
  events_.push_back(std::move(ev));
}

// ---------------------------------------------------------------------------
// Event handlers

TrialResult Simulation::run() {
  while (!queue_.empty()) {
    const Key k = queue_.top();
    if (k.t > end_) break;
    queue_.pop();
    auto node = payloads_.extract(k.seq);
    now_ = k.t;
    std::visit([this](auto& p) { handle(p); }, node.mapped());
  }
  now_ = end_;
  return collect();
}

void Simulation::handle(Deliver& d) {
  if (d.channel == Channel::ToServer) {
    server_receive(d.from, d.message);
    return;
  }
  if (!online_[d.to]) return;
  auto& c = *clients_[d.to];
  if (d.tag == kRestore && !restore_delivered_.count(d.to)) restore_delivered_[d.to] = now_;
  if (d.tag == kFake && !fake_delivered_.count(d.to)) fake_delivered_[d.to] = now_;
  switch (d.channel) {
    case Channel::FromServer: c.from_server(d.message); break;
    case Channel::Relay: c.from_client(ids_[d.from], d.message); break;
    case Channel::Oob: c.from_oob(ids_[d.from], d.message); break;
    case Channel::Anonymous: c.from_anonymous(d.message); break;
    case Channel::ToServer: break;
  }
}

void Simulation::server_receive(int from, const msg::Message& m) {
  const std::string& id = ids_[from];
  const Time bound = cfg_.clock.delta;
  const auto now = static_cast<std::uint64_t>(now_);
  if (const auto* a = std::get_if<msg::AuditRequest>(&m)) {
    if (auto reply = server_->handle_audit(id, *a, epoch_))
      send(Channel::FromServer, -1, from, std::move(*reply), bound);
  } else if (const auto* l = std::get_if<msg::LookupRequest>(&m)) {
    if (!server_->registered(l->subject)) return;
    ++result_.lookups;
    send(Channel::FromServer, -1, from,
         msg::LookupReply{server_->lookup_key(id, l->subject, epoch_, now)}, bound);
  } else if (const auto* r = std::get_if<msg::RegisterKey>(&m)) {
    try {
      server_->register_key(id, r->public_key, epoch_);
    } catch (const RateLimited&) {
      return;
    }
    for (auto& [contact, resp] : server_->push_update(id, contacts_of(from), epoch_, now)) {
      const int c = index(contact);
      if (online_[c])
        send(Channel::FromServer, -1, c, msg::KeyPush{std::move(resp)}, bound);
      else
        server_->queue_push(contact, std::move(resp));
    }
  }
}

void Simulation::handle(const Timer& t) {
  if (online_[t.owner]) clients_[t.owner]->on_timer(t.kind, t.tag);
}

void Simulation::handle(const KeyUpdate& u) {
  if (!online_[u.client]) return;
  const int v = ++key_versions_[u.client];
  clients_[u.client]->update_key(client_key(cfg_.seed, ids_[u.client], v));
}

void Simulation::handle(const AttackPush& p) {
  const auto now = static_cast<std::uint64_t>(now_);
  auto r = p.restore ? server_->real_response(ids_[p.subject], epoch_, now)
                     : server_->fake_response(ids_[p.victim], ids_[p.subject], epoch_, now);
  if (online_[p.victim])
    send(Channel::FromServer, -1, p.victim, msg::KeyPush{std::move(r)}, cfg_.clock.delta,
         p.restore ? kRestore : kFake);
  else
    server_->queue_push(ids_[p.victim], std::move(r));
  if (!p.restore && cfg_.adversary.short_lived())
    schedule(now_ + *cfg_.adversary.short_lived_restore_after,
             AttackPush{p.victim, p.subject, true});
}

void Simulation::handle(const Connect& c) {
  clients_[c.a]->connect(ids_[c.b]);
  clients_[c.b]->connect(ids_[c.a]);
}

void Simulation::handle(const App& a) {
  if (!online_[a.client]) return;
  const auto& contacts = clients_[a.client]->contacts();
  if (contacts.empty()) return;
  const auto i = uniform(action_rng_, 0, static_cast<std::int64_t>(contacts.size()) - 1);
  clients_[a.client]->send_app(contacts[static_cast<std::size_t>(i)]);
}

void Simulation::handle(const AnonBatch& b) {
  auto it = anon_.find(b.epoch);
  if (it == anon_.end()) return;
  auto requests = std::move(it->second);
  anon_.erase(it);

  // The server sees only (subject, count) per batch.
  std::map<std::string, std::vector<int>> akr;
  std::vector<int> asr;
  for (const auto& r : requests) {
    if (const auto* a = std::get_if<msg::AkrRequest>(&r.message))
      akr[a->subject].push_back(r.from);
    else if (std::holds_alternative<msg::AsrRequest>(r.message))
      asr.push_back(r.from);
  }
  const auto now = static_cast<std::uint64_t>(now_);
  const Time bound = cfg_.clock.big_delta;
  for (auto& [subject, senders] : akr) {
    if (!server_->registered(subject)) continue;
    std::shuffle(senders.begin(), senders.end(), anon_rng_);
    const auto fake =
        server_->decide_anonymous_response(subject, senders.size(), b.epoch, adversary_rng_);
    for (std::size_t i = 0; i < senders.size(); ++i)
      send(Channel::Anonymous, -1, senders[i],
           msg::AkrReply{server_->anonymous_response(subject, fake[i], b.epoch, now)}, bound);
  }
  if (!asr.empty()) {
    std::shuffle(asr.begin(), asr.end(), anon_rng_);
    auto strs = server_->serve_asr(asr.size(), b.epoch, adversary_rng_);
    for (std::size_t i = 0; i < asr.size(); ++i)
      send(Channel::Anonymous, -1, asr[i], msg::AsrReply{strs[i]}, bound);
  }
}

void Simulation::handle(const Boundary& b) {
  const Epoch e = b.epoch;
  epoch_ = e;
  const auto& clk = cfg_.clock;
  const Time t0 = clk.epoch_start(e);
  const Time half = clk.epoch_len / 2;
  const std::size_t n = ids_.size();

  for (std::size_t i = 0; i < n; ++i) {
    result_.str_exchange_peers += str_peers_[i].size();
    str_peers_[i].clear();
    result_.max_stored_bytes =
        std::max<std::uint64_t>(result_.max_stored_bytes, clients_[i]->stored_bytes());
  }

  online_ = cfg_.churn.draw(e, n, churn_rng_);
  std::vector<std::string> up;
  for (std::size_t i = 0; i < n; ++i) {
    clients_[i]->set_online(online_[i]);
    if (online_[i]) up.push_back(ids_[i]);
  }
  result_.client_epochs += up.size();
  server_->set_online(up);
  online_history_[e] = online_;

  server_->epoch_commit(e, static_cast<std::uint64_t>(t0 / kUsPerMs));

  for (const auto& c : cfg_.connections) {
    if (c.epoch != e) continue;
    const int a = index(c.a), bb = index(c.b);
    graph_.add_edge(a, bb);
    adj_[a].insert(bb);
    adj_[bb].insert(a);
    schedule(t0 + uniform(action_rng_, 0, half - 1), Connect{a, bb});
  }
  if (cfg_.key_updates_per_epoch > 0.0) {
    for (std::size_t i = 0; i < n; ++i)
      if (online_[i] && uniform01(action_rng_) < cfg_.key_updates_per_epoch)
        schedule(t0 + uniform(action_rng_, 0, half - 1), KeyUpdate{static_cast<int>(i)});
  }
  for (const auto& p : server_->planned_pushes()) {
    if (p.epoch != e) continue;
    schedule(t0 + uniform(action_rng_, 0, half - 1),
             AttackPush{index(p.victim), index(p.subject), false});
  }
  for (int k = 0; k < cfg_.app_messages_per_epoch; ++k)
    for (std::size_t i = 0; i < n; ++i)
      if (online_[i])
        schedule(t0 + uniform(action_rng_, 1, clk.epoch_len - 1), App{static_cast<int>(i)});
  if (cfg_.defense != client::Defense::KTCA) schedule(t0 + clk.big_delta, AnonBatch{e});

  for (std::size_t i = 0; i < n; ++i)
    if (online_[i]) clients_[i]->on_epoch_start(e);

  if (e + 1 < cfg_.epochs) schedule(clk.epoch_start(e + 1), Boundary{e + 1});
}

// ---------------------------------------------------------------------------
// Metrics

TrialResult Simulation::collect() {
  TrialResult& r = result_;
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    r.str_exchange_peers += str_peers_[i].size();
    r.max_stored_bytes = std::max<std::uint64_t>(r.max_stored_bytes, clients_[i]->stored_bytes());
  }
  r.events = events_.size();
  const auto& s = cfg_.adversary;
  const auto start = static_cast<std::int64_t>(s.honest() ? 0 : s.start_epoch);
  const auto& owners = server_->owners();
  const auto& victims = server_->victims();
  std::set<std::string> detectors;

  for (const auto& ev : events_) {
    ++r.cause_counts[static_cast<std::size_t>(ev.cause)];
    const auto rel = static_cast<std::int64_t>(ev.epoch) - start;
    if (ev.pom) {
      r.pom_present = true;
      if (!r.first_pom_epoch) r.first_pom_epoch = static_cast<std::int64_t>(ev.epoch);
      if (victims.count(ev.detector) && !r.victim_pom_rel_epoch) r.victim_pom_rel_epoch = rel;
      if (ev.cause == client::Cause::DuplicateKey && !r.duplicate_pom_ms)
        r.duplicate_pom_ms = ms(ev.time_us);
    }
    if (ev.cause == client::Cause::OOBMismatch || ev.cause == client::Cause::OOBTimeout) {
      if (!r.oob_detect_latency_ms) {
        auto f = fake_delivered_.find(index(ev.detector));
        if (f != fake_delivered_.end()) r.oob_detect_latency_ms = ms(ev.time_us - f->second);
      }
    }
    if (!client::is_core(ev.cause)) continue;
    if (!r.detected) {
      r.detected = true;
      r.first_time_ms = ms(ev.time_us);
      r.first_epoch = ev.epoch;
      r.first_cause = ev.cause;
      r.first_rel_epoch = rel;
    }
    detectors.insert(ev.detector);
    if (owners.count(ev.detector) && !r.owner_rel_epoch) r.owner_rel_epoch = rel;
    if (victims.count(ev.detector) && !r.victim_rel_epoch) r.victim_rel_epoch = rel;
  }
  r.detectors.assign(detectors.begin(), detectors.end());
  if (!restore_delivered_.empty()) {
    Time first = restore_delivered_.begin()->second;
    for (const auto& [c, t] : restore_delivered_) first = std::min(first, t);
    r.restore_ms = ms(first);
  }

  // PoM spread over the online component of the target during the start epoch.
  if (!s.honest() && static_cast<Epoch>(start) < cfg_.epochs) {
    const auto e = static_cast<Epoch>(start);
    Topology g = cfg_.topology;
    for (const auto& c : cfg_.connections)
      if (c.epoch <= e) g.add_edge(index(c.a), index(c.b));
    const auto& online = online_history_.at(e);
    const auto comp = components(g, online, cut_);
    const int t = index(s.target);
    if (online[t]) {
      std::vector<bool> members(ids_.size(), false);
      for (std::size_t i = 0; i < ids_.size(); ++i) members[i] = online[i] && comp[i] == comp[t];
      const int diam = graph_diameter(g, members, cut_);
      r.pom_bound_ms = ms(2 * (static_cast<Time>(diam) + 1) * cfg_.clock.delta);
      const Time t0 = cfg_.clock.epoch_start(e);
      bool complete = true;
      Time worst = 0;
      for (std::size_t i = 0; i < ids_.size(); ++i) {
        if (!members[i]) continue;
        if (!pom_time_[i] || *pom_time_[i] >= cfg_.clock.epoch_start(e + 1)) {
          complete = false;
          continue;
        }
        worst = std::max(worst, *pom_time_[i] - t0);
      }
      r.pom_coverage_complete = complete;
      if (complete) r.pom_coverage_ms = ms(worst);
    }
  }
  return r;
}

TrialResult run_trial(const SimConfig& cfg, std::uint64_t trial) {
  Simulation sim(cfg, trial);
  return sim.run();
}

}  // namespace ktsim::sim
