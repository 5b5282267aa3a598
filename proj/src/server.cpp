#include "ktsim/server.hpp"

#include <algorithm>
#include <list>
#include <unordered_map>

#include "ktsim/error.hpp"

namespace ktsim::server {

namespace {

struct DigestHash {
  std::size_t operator()(const crypto::Digest& d) const noexcept {
    return static_cast<std::size_t>(d.prefix_u64());
  }
};

// Trees are pure functions of (records, seed, epoch), so Monte-Carlo trials
// that share a seed can reuse them.
class TreeCache {
 public:
  std::shared_ptr<const log::MerkleTree> get(std::vector<log::PublicKeyRecord> records,
                                             std::uint64_t seed, Epoch epoch) {
    crypto::Encoder enc;
    enc.u64(seed).u64(epoch);
    for (const auto& r : records) enc.var(r.client_id).var(r.public_key);
    const auto key = crypto::hash(crypto::Domain::SeedDerivation, enc.bytes());
    if (auto it = index_.find(key); it != index_.end()) {
      lru_.splice(lru_.begin(), lru_, it->second);
      return it->second->second;
    }
    auto tree = std::make_shared<const log::MerkleTree>(
        log::build_tree(std::move(records), seed, epoch));
    lru_.emplace_front(key, tree);
    index_[key] = lru_.begin();
    if (lru_.size() > kCapacity) {
      index_.erase(lru_.back().first);
      lru_.pop_back();
    }
    return tree;
  }

 private:
  static constexpr std::size_t kCapacity = 48;
  using Item = std::pair<crypto::Digest, std::shared_ptr<const log::MerkleTree>>;
  std::list<Item> lru_;
  std::unordered_map<crypto::Digest, std::list<Item>::iterator, DigestHash> index_;
};

TreeCache& tree_cache() {
  thread_local TreeCache cache;
  return cache;
}

}  // namespace

std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::Honest: return "Honest";
    case AttackKind::PairMITM: return "PairMITM";
    case AttackKind::ClientMITM: return "ClientMITM";
    case AttackKind::PairImpersonation: return "PairImpersonation";
    case AttackKind::ClientImpersonation: return "ClientImpersonation";
  }
  return "?";
}

std::string to_string(Scope s) {
  switch (s) {
    case Scope::NewConnections: return "NewConnections";
    case Scope::ExistingConnections: return "ExistingConnections";
    case Scope::Both: return "Both";
  }
  return "?";
}

AttackKind parse_attack_kind(std::string_view s) {
  for (auto k : {AttackKind::Honest, AttackKind::PairMITM, AttackKind::ClientMITM,
                 AttackKind::PairImpersonation, AttackKind::ClientImpersonation})
    if (to_string(k) == s) return k;
  throw ConfigInvalid("adversary.kind", "unknown attack kind '" + std::string(s) + "'");
}

Scope parse_scope(std::string_view s) {
  for (auto k : {Scope::NewConnections, Scope::ExistingConnections, Scope::Both})
    if (to_string(k) == s) return k;
  throw ConfigInvalid("adversary.scope", "unknown scope '" + std::string(s) + "'");
}

void AdversaryStrategy::validate(const sim::Topology& g) const {
  if (honest()) return;
  const int t = g.index_of(target);
  if (t < 0) throw ConfigInvalid("adversary.target", "unknown client '" + target + "'");
  const bool pair = kind == AttackKind::PairMITM || kind == AttackKind::PairImpersonation;
  if (pair) {
    const int p = g.index_of(peer);
    if (p < 0) throw ConfigInvalid("adversary.peer", "unknown client '" + peer + "'");
    if (p == t) throw ConfigInvalid("adversary.peer", "pair attacks need two distinct targets");
  }
  if (start_epoch < 1) throw ConfigInvalid("adversary.start_epoch", "must be at least 1");
  if (coverage && (coverage->f < 0 || coverage->r < 0))
    throw ConfigInvalid("adversary.coverage", "f and r must be non-negative");
  if (partition) {
    for (const auto& [a, b] : partition->cut) {
      const int ia = g.index_of(a), ib = g.index_of(b);
      if (ia < 0 || ib < 0 || !g.has_edge(ia, ib))
        throw ConfigInvalid("adversary.partition.cut", "no edge " + a + "-" + b);
    }
  }
  if (short_lived_restore_after && *short_lived_restore_after < 0)
    throw ConfigInvalid("adversary.short_lived.restore_after_ms", "must be non-negative");
  if (stealthy_update_rate && !(*stealthy_update_rate > 0))
    throw ConfigInvalid("adversary.stealthy_update_rate", "must be positive");
}

Server::Server(crypto::KeyPair key, ServerConfig cfg)
    : key_(std::move(key)), cfg_(cfg), chains_(1) {}

void Server::register_initial(const std::string& id, crypto::Bytes public_key) {
  if (id.empty()) throw Error("empty client id");
  auto& rec = directory_[id];
  if (!rec.versions.empty()) throw DuplicateClient(id);
  rec.versions.push_back({std::move(public_key), 0, true});
}

void Server::register_key(const std::string& id, crypto::Bytes public_key, Epoch epoch) {
  auto it = directory_.find(id);
  if (it == directory_.end()) throw UnknownSubject(id);
  auto& rec = it->second;
  if (rec.last_change && *rec.last_change == epoch) throw RateLimited(id);
  rec.versions.push_back({std::move(public_key), epoch, false});
  rec.last_change = epoch;
}

bool Server::registered(std::string_view id) const {
  return directory_.find(id) != directory_.end();
}

const KeyVersion& Server::current(std::string_view id) const {
  auto it = directory_.find(id);
  if (it == directory_.end()) throw UnknownSubject(std::string(id));
  return it->second.versions.back();
}

const KeyVersion* Server::effective_at(std::string_view id, Epoch e) const {
  auto it = directory_.find(id);
  if (it == directory_.end()) return nullptr;
  const auto& v = it->second.versions;
  for (auto r = v.rbegin(); r != v.rend(); ++r)
    if (r->effective() <= e) return &*r;
  return nullptr;
}

crypto::Bytes Server::fake_key_for(std::string_view subject) const {
  const auto seed = crypto::derive_seed(cfg_.fake_seed, "fake-key:" + std::string(subject));
  const auto& vk = crypto::KeyPair::from_seed(seed).verifying_key();
  return {vk.bytes.begin(), vk.bytes.end()};
}

void Server::set_strategy(const AdversaryStrategy& s, const sim::Topology& graph,
                          const std::vector<std::vector<int>>& contact_order) {
  s.validate(graph);
  strategy_ = s;
  views_.assign(1, View{});
  audience_.clear();
  planned_.clear();
  victims_.clear();
  owners_.clear();
  commit_fakes_ = !s.short_lived();
  for (const auto& c : graph.clients) audience_[c] = 0;
  if (s.honest()) {
    chains_.assign(1, {});
    return;
  }

  const int t = graph.index_of(s.target);
  const int p = graph.index_of(s.peer);
  const Epoch up = s.start_epoch - 1;
  auto fake = [&](int subject, Epoch upload) {
    return FakeKey{fake_key_for(graph.clients[subject]), upload};
  };
  auto add_view = [&](View v) {
    views_.push_back(std::move(v));
    return static_cast<int>(views_.size() - 1);
  };
  // Under NewConnections only contacts made after setup can be shown anything.
  std::vector<int> t_contacts;
  for (int c : contact_order[t])
    if (s.scope != Scope::NewConnections || !graph.has_edge(t, c)) t_contacts.push_back(c);
  if (s.coverage && static_cast<std::size_t>(s.coverage->f + s.coverage->r) > t_contacts.size())
    throw ConfigInvalid("adversary.coverage", "f + r exceeds the target's eligible contacts");

  std::set<int> fake_audience;  // for coverage-limited client attacks
  if (s.coverage)
    for (int i = 0; i < s.coverage->f && i < static_cast<int>(t_contacts.size()); ++i)
      fake_audience.insert(t_contacts[i]);
  auto in_fake_audience = [&](int c) { return !s.coverage || fake_audience.count(c) != 0; };

  switch (s.kind) {
    case AttackKind::ClientImpersonation: {
      const int v = add_view({{{graph.clients[t], fake(t, up)}}});
      for (std::size_t c = 0; c < graph.size(); ++c)
        if (static_cast<int>(c) != t && in_fake_audience(static_cast<int>(c)))
          audience_[graph.clients[c]] = v;
      owners_.insert(s.target);
      break;
    }
    case AttackKind::ClientMITM: {
      View vt;
      const double rate = s.stealthy_update_rate.value_or(0.0);
      for (std::size_t k = 0; k < t_contacts.size(); ++k) {
        const Epoch stagger = rate > 0 ? static_cast<Epoch>(static_cast<double>(k) / rate) : 0;
        vt.substitutions[graph.clients[t_contacts[k]]] = fake(t_contacts[k], up + stagger);
      }
      const int v_t = add_view(std::move(vt));
      const int v_o = add_view({{{graph.clients[t], fake(t, up)}}});
      for (std::size_t c = 0; c < graph.size(); ++c) {
        if (static_cast<int>(c) == t)
          audience_[graph.clients[c]] = v_t;
        else if (in_fake_audience(static_cast<int>(c)))
          audience_[graph.clients[c]] = v_o;
      }
      owners_.insert(s.target);
      break;
    }
    case AttackKind::PairImpersonation: {
      const int v = add_view({{{graph.clients[t], fake(t, up)}}});
      audience_[s.peer] = v;
      owners_.insert(s.target);
      break;
    }
    case AttackKind::PairMITM: {
      const int v_a = add_view({{{graph.clients[p], fake(p, up)}}});
      const int v_b = add_view({{{graph.clients[t], fake(t, up)}}});
      audience_[s.target] = v_a;
      audience_[s.peer] = v_b;
      owners_.insert(s.target);
      owners_.insert(s.peer);
      break;
    }
    case AttackKind::Honest:
      break;
  }

  if (s.partition && s.partition->views_follow_partition) {
    std::set<sim::Edge> cut;
    for (const auto& [a, b] : s.partition->cut)
      cut.insert(sim::make_edge(graph.index_of(a), graph.index_of(b)));
    const auto comp = sim::components(graph, {}, cut);
    const bool pair = s.kind == AttackKind::PairMITM || s.kind == AttackKind::PairImpersonation;
    const int va = audience_[s.target];
    const int vb = pair ? audience_[s.peer] : 0;
    for (std::size_t c = 0; c < graph.size(); ++c) {
      const int ci = static_cast<int>(c);
      if (ci == t || ci == p) continue;
      const bool with_a = comp[c] == comp[t];
      const bool with_b = pair && comp[c] == comp[p];
      if (with_a && !with_b)
        audience_[graph.clients[c]] = va;
      else if (with_b && !with_a)
        audience_[graph.clients[c]] = vb;
    }
  }

  shown_ = audience_;
  if (!s.equivocate) {
    View all;
    for (const auto& v : views_)
      for (const auto& [id, f] : v.substitutions) all.substitutions.emplace(id, f);
    const int u = add_view(std::move(all));
    for (auto& [id, v] : audience_) v = u;
  }

  for (const auto& [id, v] : shown_)
    for (const auto& [subject, f] : views_[v].substitutions)
      if (subject != id) victims_.insert(id);

  // Existing connections learn the fake key through a pushed "update".
  if (s.scope != Scope::NewConnections) {
    for (const auto& e : graph.edges) {
      for (int dir = 0; dir < 2; ++dir) {
        const int victim = dir == 0 ? e.first : e.second;
        const int subject = dir == 0 ? e.second : e.first;
        const auto& vs = views_[shown_[graph.clients[victim]]].substitutions;
        auto f = vs.find(graph.clients[subject]);
        if (f == vs.end()) continue;
        planned_.push_back({graph.clients[victim], graph.clients[subject], f->second.upload_epoch});
      }
    }
    std::stable_sort(planned_.begin(), planned_.end(),
                     [](const PlannedPush& a, const PlannedPush& b) { return a.epoch < b.epoch; });
  }

  chains_.assign(views_.size(), {});
}

int Server::view_of(std::string_view client) const {
  auto it = audience_.find(client);
  return it == audience_.end() ? 0 : it->second;
}

int Server::shown_view(std::string_view client) const {
  auto it = shown_.find(client);
  return it == shown_.end() ? 0 : it->second;
}

bool Server::live(int view) const {
  if (audience_.empty()) return view == 0;
  for (const auto& [id, v] : audience_)
    if (v == view) return true;
  return false;
}

const FakeKey* Server::active_fake(int view, std::string_view subject, Epoch e) const {
  const auto& subs = views_[view].substitutions;
  auto it = subs.find(subject);
  if (it == subs.end() || it->second.upload_epoch > e) return nullptr;
  return &it->second;
}

std::vector<log::PublicKeyRecord> Server::records_for(int view, Epoch e) const {
  std::vector<log::PublicKeyRecord> out;
  out.reserve(directory_.size());
  for (const auto& [id, rec] : directory_) {
    const KeyVersion* kv = nullptr;
    for (auto r = rec.versions.rbegin(); r != rec.versions.rend(); ++r)
      if (r->effective() <= e) {
        kv = &*r;
        break;
      }
    if (kv == nullptr) continue;
    log::PublicKeyRecord r{id, kv->public_key, kv->upload_epoch};
    if (commit_fakes_) {
      const auto& subs = views_[view].substitutions;
      if (auto f = subs.find(id); f != subs.end() && f->second.effective() <= e) {
        r.public_key = f->second.public_key;
        r.upload_epoch = f->second.upload_epoch;
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::shared_ptr<const log::MerkleTree> Server::tree_for(int view, Epoch e) {
  if (last_committed_ && e == *last_committed_) {
    if (auto it = current_trees_.find(view); it != current_trees_.end()) return it->second;
  }
  return tree_cache().get(records_for(view, e), cfg_.tree_seed, e);
}

std::map<int, SignedTreeRoot> Server::epoch_commit(Epoch e, std::uint64_t timestamp_ms) {
  const Epoch expect = last_committed_ ? *last_committed_ + 1 : 0;
  if (e != expect)
    throw EpochGap("commit of epoch " + std::to_string(e) + ", expected " + std::to_string(expect));
  std::map<int, SignedTreeRoot> out;
  std::map<int, std::shared_ptr<const log::MerkleTree>> trees;
  for (int v = 0; v < static_cast<int>(views_.size()); ++v) {
    if (!live(v)) continue;
    auto tree = tree_cache().get(records_for(v, e), cfg_.tree_seed, e);
    std::optional<SignedTreeRoot> prev;
    if (e > 0) prev = chains_[v].back();
    auto s = log::generate_str(*tree, prev, key_, static_cast<std::uint64_t>(timestamp_ms));
    chains_[v].push_back(s);
    out.emplace(v, s);
    trees.emplace(v, std::move(tree));
  }
  current_trees_ = std::move(trees);
  last_committed_ = e;
  direct_requests_.erase(direct_requests_.begin(), direct_requests_.lower_bound(e));
  return out;
}

const SignedTreeRoot& Server::str(int view, Epoch e) const {
  if (view < 0 || static_cast<std::size_t>(view) >= chains_.size() || e >= chains_[view].size())
    throw Error("no STR for view " + std::to_string(view) + " epoch " + std::to_string(e));
  return chains_[view][e];
}

std::optional<ProofOfInclusion> Server::prove_at(int view, std::string_view subject, Epoch e) {
  if (!last_committed_ || e > *last_committed_) return std::nullopt;
  auto tree = tree_for(view, e);
  if (!tree->contains(subject)) return std::nullopt;
  return log::prove_inclusion(*tree, subject);
}

KeyResponse Server::lookup_key(std::string_view requester, std::string_view subject, Epoch e,
                               std::uint64_t now_us) {
  if (!registered(subject)) throw UnknownSubject(std::string(subject));
  const int v = view_of(requester);
  KeyResponse r;
  r.client_id = std::string(subject);
  r.served_epoch = e;
  r.served_at_us = now_us;
  bool in_tree = false;
  const FakeKey* committed = commit_fakes_ ? active_fake(v, subject, e) : nullptr;
  if (const FakeKey* f =
          commit_fakes_ ? active_fake(shown_view(requester), subject, e) : nullptr) {
    r.public_key = f->public_key;
    r.upload_epoch = f->upload_epoch;
    in_tree = f->effective() <= e && committed && committed->public_key == f->public_key;
    fake_holders_[r.client_id][std::string(requester)] = e;
  } else {
    const auto& cur = current(subject);
    r.public_key = cur.public_key;
    r.upload_epoch = cur.upload_epoch;
    in_tree = cur.effective() <= e && committed == nullptr;
  }
  if (cfg_.transparency && in_tree && last_committed_ && *last_committed_ == e) {
    r.str = str(v, e);
    r.poi = prove_at(v, subject, e);
  }
  log::sign_key_response(r, key_);
  return r;
}

KeyResponse Server::real_response(std::string_view subject, Epoch e, std::uint64_t now_us) {
  const auto& cur = current(subject);
  KeyResponse r;
  r.client_id = std::string(subject);
  r.public_key = cur.public_key;
  r.upload_epoch = cur.upload_epoch;
  r.served_epoch = e;
  r.served_at_us = now_us;
  log::sign_key_response(r, key_);
  return r;
}

KeyResponse Server::fake_response(std::string_view victim, std::string_view subject, Epoch e,
                                  std::uint64_t now_us) {
  KeyResponse r;
  r.client_id = std::string(subject);
  r.served_epoch = e;
  r.served_at_us = now_us;
  const auto& subs = views_[shown_view(victim)].substitutions;
  if (auto f = subs.find(subject); f != subs.end()) {
    r.public_key = f->second.public_key;
    r.upload_epoch = f->second.upload_epoch;
  } else {
    r.public_key = fake_key_for(subject);
    r.upload_epoch = e;
  }
  fake_holders_[r.client_id][std::string(victim)] = e;
  log::sign_key_response(r, key_);
  return r;
}

std::vector<std::pair<std::string, KeyResponse>> Server::push_update(
    std::string_view subject, const std::vector<std::string>& contacts, Epoch e,
    std::uint64_t now_us) {
  std::vector<std::pair<std::string, KeyResponse>> out;
  std::optional<KeyResponse> real;
  for (const auto& c : contacts) {
    if (commit_fakes_ && active_fake(shown_view(c), subject, e)) continue;
    if (!real) real = real_response(subject, e, now_us);
    out.emplace_back(c, *real);
  }
  return out;
}

void Server::queue_push(const std::string& client, KeyResponse r) {
  queued_[client].push_back(std::move(r));
}

std::optional<msg::AuditReply> Server::handle_audit(const std::string& requester,
                                                    const msg::AuditRequest& req, Epoch e) {
  if (strategy_.withhold && e >= strategy_.start_epoch && victims_.count(requester))
    return std::nullopt;
  const int v = view_of(requester);
  msg::AuditReply reply;
  if (req.from_epoch <= req.to_epoch && last_committed_ && req.to_epoch <= *last_committed_) {
    for (Epoch j = req.from_epoch; j <= req.to_epoch; ++j) {
      msg::AuditEntry entry{str(v, j), std::nullopt};
      if (cfg_.transparency) entry.own_poi = prove_at(v, requester, j);
      reply.entries.push_back(std::move(entry));
    }
    if (req.to_epoch == e) direct_requests_[e].push_back(v);
  }
  if (auto q = queued_.find(requester); q != queued_.end()) {
    reply.pushes = std::move(q->second);
    queued_.erase(q);
  }
  if (cfg_.transparency) {
    std::set<std::pair<std::string, Epoch>> wanted(req.checks.begin(), req.checks.end());
    for (const auto& p : reply.pushes)
      if (p.effective_epoch() <= e) wanted.emplace(p.client_id, p.effective_epoch());
    for (const auto& [subject, j] : wanted)
      reply.checks.push_back({subject, j, prove_at(v, subject, j)});
  }
  return reply;
}

void Server::set_online(const std::vector<std::string>& online) {
  online_.clear();
  online_.insert(online.begin(), online.end());
}

std::vector<bool> Server::decide_anonymous_response(std::string_view subject, std::size_t k,
                                                    Epoch e, sim::Rng& rng) {
  std::vector<bool> fake(k, false);
  if (strategy_.honest()) return fake;
  std::size_t holders = 0;
  if (auto it = fake_holders_.find(subject); it != fake_holders_.end()) {
    const auto m = static_cast<Epoch>(cfg_.monitor_epochs);
    for (const auto& [holder, got] : it->second)
      if (online_.count(holder) && got < e && e <= got + m) ++holders;
  }
  holders = std::min(holders, k);
  std::vector<std::size_t> idx(k);
  for (std::size_t i = 0; i < k; ++i) idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), rng);
  for (std::size_t i = 0; i < holders; ++i) fake[idx[i]] = true;
  return fake;
}

KeyResponse Server::anonymous_response(std::string_view subject, bool fake, Epoch e,
                                       std::uint64_t now_us) {
  KeyResponse r;
  r.client_id = std::string(subject);
  r.served_epoch = e;
  r.served_at_us = now_us;
  bool done = false;
  if (fake) {
    for (const auto& v : views_) {
      if (auto f = v.substitutions.find(subject); f != v.substitutions.end()) {
        r.public_key = f->second.public_key;
        r.upload_epoch = f->second.upload_epoch;
        done = true;
        break;
      }
    }
  }
  if (!done) {
    const KeyVersion* kv = effective_at(subject, e);
    if (kv == nullptr) kv = &current(subject);
    r.public_key = kv->public_key;
    r.upload_epoch = kv->upload_epoch;
  }
  log::sign_key_response(r, key_);
  return r;
}

std::vector<SignedTreeRoot> Server::serve_asr(std::size_t k, Epoch e, sim::Rng& rng) {
  std::vector<SignedTreeRoot> out;
  const auto& views = direct_requests_[e];
  for (int v : views) out.push_back(str(v, e));
  std::shuffle(out.begin(), out.end(), rng);
  if (out.size() > k) out.resize(k);
  while (out.size() < k) out.push_back(str(views.empty() ? view_of("") : views.front(), e));
  return out;
}

}  // namespace ktsim::server
