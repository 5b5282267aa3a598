#include "ktsim/client.hpp"

#include <algorithm>

#include "ktsim/error.hpp"

namespace ktsim::client {

std::string to_string(Defense d) {
  switch (d) {
    case Defense::KTCA: return "KTCA";
    case Defense::AKM: return "AKM";
    case Defense::KTACA: return "KTACA";
  }
  return "?";
}

Defense parse_defense(std::string_view s) {
  for (auto d : {Defense::KTCA, Defense::AKM, Defense::KTACA})
    if (to_string(d) == s) return d;
  throw ConfigInvalid("defense", "expected KTCA, AKM or KTACA, got '" + std::string(s) + "'");
}

std::string to_string(Cause c) {
  switch (c) {
    case Cause::ConflictingSTR: return "ConflictingSTR";
    case Cause::InvalidPoI: return "InvalidPoI";
    case Cause::MissingSTR: return "MissingSTR";
    case Cause::MissingPoI: return "MissingPoI";
    case Cause::AKRMismatch: return "AKRMismatch";
    case Cause::AKRTimeout: return "AKRTimeout";
    case Cause::ASRMismatch: return "ASRMismatch";
    case Cause::DuplicateKey: return "DuplicateKey";
    case Cause::MassKeyUpdate: return "MassKeyUpdate";
    case Cause::Isolation: return "Isolation";
    case Cause::OOBTimeout: return "OOBTimeout";
    case Cause::OOBMismatch: return "OOBMismatch";
    case Cause::kCount: break;
  }
  return "?";
}

bool is_core(Cause c) {
  switch (c) {
    case Cause::ConflictingSTR:
    case Cause::InvalidPoI:
    case Cause::MissingSTR:
    case Cause::MissingPoI:
    case Cause::AKRMismatch:
    case Cause::AKRTimeout:
    case Cause::ASRMismatch:
    case Cause::DuplicateKey:
      return true;
    default:
      return false;
  }
}

bool is_heuristic(Cause c) { return c == Cause::MassKeyUpdate || c == Cause::Isolation; }

void MonitorPolicy::validate() const {
  if (m < 1) throw ConfigInvalid("monitor.m", "must be at least 1");
  if (!(mass_update_fraction > 0.0 && mass_update_fraction <= 1.0))
    throw ConfigInvalid("monitor.mass_update.fraction", "must be in (0, 1]");
  if (mass_update_window < 1)
    throw ConfigInvalid("monitor.mass_update.window_epochs", "must be at least 1");
  if (mass_update_min_count < 0)
    throw ConfigInvalid("monitor.mass_update.min_count", "must be non-negative");
  if (isolation_subintervals < 0)
    throw ConfigInvalid("monitor.isolation.subintervals", "must be non-negative");
}

namespace {

crypto::MacTag oob_tag(const crypto::MacKey& key, std::uint8_t kind, const crypto::Bytes& pk) {
  crypto::Encoder enc;
  enc.u8(kind).var(pk);
  return crypto::mac(key, enc.bytes());
}

constexpr std::uint8_t kOobConfirm = 1;
constexpr std::uint8_t kOobReply = 2;

}  // namespace

Client::Client(ClientConfig cfg, crypto::KeyPair key, Env& env)
    : cfg_(std::move(cfg)), env_(env) {
  const auto& vk = key.verifying_key();
  own_.push_back({crypto::Bytes(vk.bytes.begin(), vk.bytes.end()), 0, true});
  keys_.push_back(std::move(key));
}

void Client::add_contact(const std::string& peer, const KeyResponse& bootstrap) {
  if (!has_contact(peer)) contacts_.push_back(peer);
  if (!log::verify_key_response(bootstrap, cfg_.server_pub) || bootstrap.client_id != peer) return;
  history_[peer].push_back(bootstrap);
  beliefs_[peer].push_back(
      {bootstrap.public_key, bootstrap.upload_epoch, true, bootstrap.served_at_us});
}

void Client::set_oob_key(const std::string& peer, const crypto::MacKey& key) {
  oob_keys_[peer] = key;
}

bool Client::has_contact(const std::string& peer) const {
  return std::find(contacts_.begin(), contacts_.end(), peer) != contacts_.end();
}

const Belief* Client::contact_key(const std::string& peer) const {
  auto it = beliefs_.find(peer);
  return it == beliefs_.end() || it->second.empty() ? nullptr : &it->second.back();
}

const std::vector<KeyResponse>& Client::history(const std::string& peer) const {
  static const std::vector<KeyResponse> empty;
  auto it = history_.find(peer);
  return it == history_.end() ? empty : it->second;
}

std::size_t Client::stored_bytes() const {
  std::size_t n = chain_.empty() ? 0 : SignedTreeRoot::kStoredBytes;
  for (const auto& [peer, h] : history_) n += h.size() * (crypto::kDigestSize + 2 * sizeof(Epoch));
  n += oob_keys_.size() * (crypto::kMacKeySize + 16);
  return n;
}

std::size_t Client::apps_held() const {
  std::size_t n = 0;
  for (const auto& [peer, c] : queued_apps_) n += c;
  return n;
}

const crypto::Bytes* Client::own_key_at(Epoch e) const {
  for (auto it = own_.rbegin(); it != own_.rend(); ++it)
    if (it->effective() <= e) return &it->public_key;
  return nullptr;
}

const Belief* Client::belief_at(const std::string& peer, Epoch e) const {
  auto it = beliefs_.find(peer);
  if (it == beliefs_.end()) return nullptr;
  for (auto b = it->second.rbegin(); b != it->second.rend(); ++b)
    if (b->effective() <= e) return &*b;
  return nullptr;
}

Time Client::audit_timeout() const {
  const auto& c = env_.clock();
  return cfg_.defense == Defense::KTACA ? 2 * c.big_delta : 2 * c.delta;
}

Time Client::hold_horizon(Epoch e) const {
  const auto& c = env_.clock();
  switch (cfg_.defense) {
    case Defense::KTCA:
      return c.epoch_start(e + 1) + 2 * (static_cast<Time>(cfg_.diameter) + 1) * c.delta;
    case Defense::AKM:
      return c.epoch_start(e + static_cast<Epoch>(cfg_.monitor.m) + 1);
    case Defense::KTACA:
      return c.epoch_start(e + 1) + 2 * c.big_delta;
  }
  return c.epoch_start(e + 1);
}

void Client::detect(Cause c, std::optional<ProofOfMisbehavior> pom, const std::string& subject) {
  DetectionEvent ev;
  ev.detector = cfg_.id;
  ev.epoch = env_.epoch();
  ev.time_us = env_.now();
  ev.cause = c;
  ev.pom = pom;
  ev.subject = subject;
  env_.detect(std::move(ev));
  detected_ = true;
  if (is_core(c) && cfg_.defense != Defense::AKM) disconnected_ = true;
  if (pom && !held_pom_) {
    held_pom_ = pom;
    if (cfg_.defense == Defense::KTCA) flood_pom(*pom, {});
  }
}

void Client::on_epoch_start(Epoch e) {
  epoch_ = e;
  for (auto it = seen_.begin(); it != seen_.end() && it->first + 2 < e;) it = seen_.erase(it);
  for (auto it = sent_.begin(); it != sent_.end() && it->first + 2 < e;) it = sent_.erase(it);
  for (auto it = received_.begin(); it != received_.end() && it->first + 2 < e;)
    it = received_.erase(it);
  for (auto it = asr_.begin(); it != asr_.end() && it->first + 2 < e;) it = asr_.erase(it);
  for (auto it = audit_answered_.begin(); it != audit_answered_.end() && it->first + 2 < e;)
    it = audit_answered_.erase(it);
  relayed_.erase(relayed_.begin(), relayed_.lower_bound(e));
  asr_received_.erase(asr_received_.begin(), asr_received_.lower_bound(e));

  for (auto pending = std::exchange(pending_connect_, {}); const auto& p : pending) connect(p);

  if (cfg_.defense == Defense::AKM)
    akm_start(e);
  else if (!disconnected_)
    audit_start(e);
  if (cfg_.monitor.isolation) isolation_start(e);
}

void Client::audit_start(Epoch e) {
  msg::AuditRequest req;
  req.from_epoch = last_verified_ ? *last_verified_ + 1 : 0;
  req.to_epoch = e;
  std::set<std::pair<std::string, Epoch>> checks;
  for (const auto& p : promises_)
    if (p.epoch <= e) checks.emplace(p.subject, p.epoch);
  req.checks.assign(checks.begin(), checks.end());
  audit_answered_[e] = false;
  env_.to_server(cfg_.id, std::move(req));
  env_.timer(cfg_.id, env_.now() + audit_timeout(), TimerKind::AuditTimeout, e);
  if (cfg_.defense == Defense::KTACA) {
    env_.anonymous(cfg_.id, msg::AsrRequest{});
    env_.timer(cfg_.id, env_.clock().epoch_start(e) + 2 * env_.clock().big_delta,
               TimerKind::AsrTimeout, e);
  }
}

void Client::akm_start(Epoch e) {
  // Pushes queued while offline must be known before AKR replies are judged.
  synced_ = false;
  env_.to_server(cfg_.id, msg::AuditRequest{1, 0, {}});
  akr_pending_.clear();
  akr_buffer_.clear();
  akr_pending_.insert(cfg_.id);
  const auto m = static_cast<Epoch>(cfg_.monitor.m);
  for (auto it = monitor_.begin(); it != monitor_.end();) {
    if (e > it->second + m) {
      it = monitor_.erase(it);
      continue;
    }
    if (it->second < e) akr_pending_.insert(it->first);
    ++it;
  }
  for (const auto& s : akr_pending_) env_.anonymous(cfg_.id, msg::AkrRequest{s});
  env_.timer(cfg_.id, env_.clock().epoch_start(e) + 2 * env_.clock().big_delta,
             TimerKind::AkrTimeout, e);
}

void Client::isolation_start(Epoch e) {
  if (contacts_.empty()) return;
  confirmed_ = false;
  probes_.clear();
  const auto& c = env_.clock();
  const int x = cfg_.monitor.isolation_subintervals > 0 ? cfg_.monitor.isolation_subintervals
                                                        : static_cast<int>(contacts_.size());
  for (int i = 0; i < x; ++i)
    env_.timer(cfg_.id, c.epoch_start(e) + c.epoch_len * i / x, TimerKind::IsolationProbe, e);
  env_.timer(cfg_.id, c.epoch_start(e + 1), TimerKind::IsolationCheck, e);
}

void Client::connect(const std::string& peer) {
  if (peer == cfg_.id) return;
  if (!has_contact(peer)) contacts_.push_back(peer);
  if (!online_) {
    pending_connect_.insert(peer);
    return;
  }
  env_.to_server(cfg_.id, msg::LookupRequest{peer});
  if (cfg_.prevention.enabled) hold(peer, hold_horizon(env_.epoch()));
}

void Client::update_key(crypto::KeyPair next) {
  const auto& vk = next.verifying_key();
  crypto::Bytes pk(vk.bytes.begin(), vk.bytes.end());
  own_.push_back({pk, env_.epoch(), false});
  keys_.push_back(std::move(next));
  env_.to_server(cfg_.id, msg::RegisterKey{std::move(pk)});
}

bool Client::app_allowed(const std::string& peer) const {
  if (oob_pending_.count(peer)) return false;
  auto it = held_until_.find(peer);
  return it == held_until_.end() || it->second <= env_.now();
}

void Client::send_app(const std::string& peer) {
  if (blocked_.count(peer) || !has_contact(peer)) return;
  const Belief* b = contact_key(peer);
  if (b == nullptr || !app_allowed(peer)) {
    ++queued_apps_[peer];
    return;
  }
  env_.to_client(cfg_.id, peer, msg::AppMessage{b->public_key});
}

void Client::hold(const std::string& peer, Time until) {
  auto& h = held_until_[peer];
  if (until > h) {
    h = until;
    env_.timer(cfg_.id, until, TimerKind::HoldRelease, static_cast<std::uint64_t>(until));
  }
}

void Client::release(const std::string& peer) {
  if (!app_allowed(peer) || blocked_.count(peer)) return;
  auto it = queued_apps_.find(peer);
  if (it == queued_apps_.end()) return;
  const std::size_t n = it->second;
  queued_apps_.erase(it);
  for (std::size_t i = 0; i < n; ++i) send_app(peer);
}

// ---------------------------------------------------------------------------
// Server traffic

void Client::from_server(const msg::Message& m) {
  if (const auto* r = std::get_if<msg::AuditReply>(&m)) {
    handle_audit_reply(*r);
  } else if (const auto* l = std::get_if<msg::LookupReply>(&m)) {
    handle_key_response(l->response, Source::Lookup);
  } else if (const auto* p = std::get_if<msg::KeyPush>(&m)) {
    handle_key_response(p->response, Source::Push);
  }
}

void Client::handle_audit_reply(const msg::AuditReply& r) {
  const Epoch e = env_.epoch();
  if (cfg_.defense == Defense::AKM) {
    for (const auto& p : r.pushes) handle_key_response(p, Source::Push);
    synced_ = true;
    for (const auto& a : std::exchange(akr_buffer_, {})) evaluate_akr(a);
    return;
  }
  if (disconnected_) return;
  auto answered = audit_answered_.find(e);
  if (answered == audit_answered_.end() || answered->second) return;
  answered->second = true;

  for (const auto& entry : r.entries) {
    const auto& s = entry.str;
    if (!log::verify_str(s, cfg_.server_pub)) {
      detect(Cause::MissingSTR, std::nullopt, {});
      return;
    }
    if (s.epoch > 0) {
      auto prev = chain_.find(s.epoch - 1);
      if (prev != chain_.end() && !log::verify_str_chain(prev->second, s, cfg_.server_pub)) {
        detect(Cause::MissingSTR, std::nullopt, {});
        return;
      }
    } else if (!s.prev_str_hash.is_zero()) {
      detect(Cause::MissingSTR, std::nullopt, {});
      return;
    }
    chain_[s.epoch] = s;
    roots_[s.epoch] = s.root_hash;
    note_str(s);
    const crypto::Bytes* mine = own_key_at(s.epoch);
    if (!entry.own_poi) {
      detect(Cause::MissingPoI, std::nullopt, cfg_.id);
      return;
    }
    if (mine == nullptr || !log::verify_poi(s, *entry.own_poi, cfg_.id, *mine, cfg_.server_pub)) {
      detect(Cause::InvalidPoI, std::nullopt, cfg_.id);
      return;
    }
  }
  if (r.entries.empty() || r.entries.back().str.epoch != e) {
    detect(Cause::MissingSTR, std::nullopt, {});
    return;
  }
  last_verified_ = e;
  for (auto it = chain_.begin(); it != chain_.end() && it->first + 1 < e;) it = chain_.erase(it);

  for (const auto& p : r.pushes) handle_key_response(p, Source::Push);

  for (const auto& c : r.checks) {
    bool failed = false;
    for (auto it = promises_.begin(); it != promises_.end();) {
      if (it->subject != c.subject || it->epoch != c.epoch) {
        ++it;
        continue;
      }
      auto root = roots_.find(c.epoch);
      const auto implied =
          c.poi ? log::poi_root(*c.poi, c.subject, it->public_key) : std::nullopt;
      if (root == roots_.end() || !implied || *implied != root->second) failed = true;
      it = promises_.erase(it);
    }
    if (failed) {
      detect(Cause::InvalidPoI, std::nullopt, c.subject);
      if (disconnected_) return;
    }
  }
  Epoch keep = e;
  for (const auto& p : promises_) keep = std::min(keep, p.epoch);
  roots_.erase(roots_.begin(), roots_.lower_bound(keep));
  if (cfg_.defense == Defense::KTCA) gossip(chain_.at(e));
  if (cfg_.defense == Defense::KTACA) evaluate_asr();
}

void Client::handle_key_response(const KeyResponse& r, Source src) {
  if (!log::verify_key_response(r, cfg_.server_pub)) return;
  const std::string& subject = r.client_id;
  if (subject == cfg_.id || !has_contact(subject)) return;
  if (!short_lived_check(r)) return;

  auto& beliefs = beliefs_[subject];
  Belief b{r.public_key, r.upload_epoch, false, r.served_at_us};
  bool changed = beliefs.empty() || beliefs.back().public_key != r.public_key;
  if (changed && !beliefs.empty() && beliefs.back().upload_epoch > r.upload_epoch &&
      beliefs.back().served_at_us > r.served_at_us) {
    // Older update overtaken by a newer one (queued while offline).
    changed = false;
    auto pos = std::find_if(beliefs.begin(), beliefs.end(), [&](const Belief& x) {
      return x.upload_epoch > r.upload_epoch;
    });
    if (std::none_of(beliefs.begin(), beliefs.end(),
                     [&](const Belief& x) { return x.public_key == r.public_key; }))
      beliefs.insert(pos, std::move(b));
  } else if (changed) {
    beliefs.push_back(std::move(b));
  }

  if (cfg_.defense != Defense::AKM) check_transparency(r);
  if (cfg_.defense == Defense::AKM && src != Source::Bootstrap) monitor_[subject] = r.served_epoch;

  if (src == Source::Push && changed) {
    key_changed_[subject] = env_.epoch();
    updates_.emplace_back(env_.epoch(), subject);
    mass_update_check(subject);
    if (cfg_.prevention.enabled) prevention_on_update(subject, r.public_key);
  }
  if (src == Source::Lookup) release(subject);
}

bool Client::short_lived_check(const KeyResponse& r) {
  auto& h = history_[r.client_id];
  for (const auto& old : h)
    if (old == r) return false;  // re-delivery
  if (!held_pom_ || held_pom_->kind() != log::PomKind::DuplicateKey) {
    for (std::size_t i = 0; i < h.size(); ++i) {
      if (h[i].public_key != r.public_key || h[i].served_at_us >= r.served_at_us) continue;
      for (std::size_t j = i + 1; j < h.size(); ++j) {
        if (h[j].public_key == r.public_key) continue;
        if (!(h[i].served_at_us < h[j].served_at_us && h[j].served_at_us < r.served_at_us))
          continue;
        try {
          auto pom = log::make_pom_duplicate(h[i], h[j], r, cfg_.server_pub);
          h.push_back(r);
          detect(Cause::DuplicateKey, std::move(pom), r.client_id);
          return true;
        } catch (const NotConflicting&) {
        }
      }
    }
  }
  h.push_back(r);
  return true;
}

void Client::check_transparency(const KeyResponse& r) {
  if (r.has_proof()) {
    if (!log::verify_str(*r.str, cfg_.server_pub)) {
      detect(Cause::InvalidPoI, std::nullopt, r.client_id);
      return;
    }
    note_str(*r.str);
    if (!log::verify_poi(*r.str, *r.poi, r.client_id, r.public_key, cfg_.server_pub))
      detect(Cause::InvalidPoI, std::nullopt, r.client_id);
    return;
  }
  // Checked at the effective epoch while that root is still at hand; older
  // keys are checked against the current epoch's tree.
  const Epoch eff = r.effective_epoch();
  const bool reachable = roots_.count(eff) != 0 || !last_verified_ || eff > *last_verified_;
  promises_.push_back({r.client_id, reachable ? eff : env_.epoch(), r.public_key});
}

// ---------------------------------------------------------------------------
// Contact traffic

void Client::note_str(const SignedTreeRoot& s) {
  auto& seen = seen_[s.epoch];
  for (const auto& t : seen) {
    if (t == s) return;
    if (t.root_hash != s.root_hash && !held_pom_) {
      try {
        auto pom = log::make_pom_conflict(t, s, cfg_.server_pub);
        seen.push_back(s);
        detect(Cause::ConflictingSTR, std::move(pom), {});
        return;
      } catch (const NotConflicting&) {
      }
    }
  }
  seen.push_back(s);
}

void Client::gossip(const SignedTreeRoot& s) {
  const auto d = s.digest();
  auto& sent = sent_[s.epoch][d];
  const auto& recv = received_[s.epoch][d];
  for (const auto& c : contacts_) {
    if (sent.count(c)) continue;
    if (cfg_.monitor.gossip_dedup && recv.count(c)) continue;
    sent.insert(c);
    env_.to_client(cfg_.id, c, msg::StrGossip{s});
  }
}

void Client::flood_pom(const ProofOfMisbehavior& pom, const std::string& skip) {
  for (const auto& c : contacts_)
    if (c != skip) env_.to_client(cfg_.id, c, msg::PomGossip{pom});
}

void Client::from_client(const std::string& peer, const msg::Message& m) {
  if (const auto* g = std::get_if<msg::StrGossip>(&m)) {
    if (cfg_.defense != Defense::KTCA) return;
    const auto& s = g->str;
    if (!log::verify_str(s, cfg_.server_pub)) return;
    received_[s.epoch][s.digest()].insert(peer);
    note_str(s);
    const Epoch e = env_.epoch();
    const bool have_server = chain_.count(e) && last_verified_ == e;
    if (s.epoch == e && !have_server && !relayed_.count(e)) {
      relayed_.insert(e);
      gossip(s);
    }
  } else if (const auto* p = std::get_if<msg::PomGossip>(&m)) {
    if (held_pom_ || !log::adjudicate(p->pom, cfg_.server_pub)) return;
    held_pom_ = p->pom;
    const Cause c = p->pom.kind() == log::PomKind::ConflictingSTRs ? Cause::ConflictingSTR
                                                                    : Cause::DuplicateKey;
    DetectionEvent ev;
    ev.detector = cfg_.id;
    ev.epoch = env_.epoch();
    ev.time_us = env_.now();
    ev.cause = c;
    ev.pom = p->pom;
    ev.subject = peer;
    env_.detect(std::move(ev));
    detected_ = true;
    disconnected_ = true;
    flood_pom(p->pom, peer);
  } else if (const auto* pr = std::get_if<msg::Probe>(&m)) {
    env_.to_client(cfg_.id, peer, msg::ProbeReply{pr->nonce});
  } else if (const auto* rep = std::get_if<msg::ProbeReply>(&m)) {
    auto it = probes_.find(rep->nonce);
    if (it == probes_.end() || it->second != peer) return;
    probes_.erase(it);
    auto changed = key_changed_.find(peer);
    if (changed == key_changed_.end() || changed->second != env_.epoch()) confirmed_ = true;
  }
}

// ---------------------------------------------------------------------------
// Anonymous traffic

void Client::from_anonymous(const msg::Message& m) {
  if (const auto* a = std::get_if<msg::AkrReply>(&m)) {
    if (!synced_)
      akr_buffer_.push_back(a->response);
    else
      evaluate_akr(a->response);
  } else if (const auto* s = std::get_if<msg::AsrReply>(&m)) {
    if (disconnected_ || !log::verify_str(s->str, cfg_.server_pub)) return;
    asr_[s->str.epoch] = s->str;
    asr_received_.insert(s->str.epoch);
    evaluate_asr();
  }
}

void Client::evaluate_akr(const KeyResponse& r) {
  if (!log::verify_key_response(r, cfg_.server_pub)) return;
  if (!akr_pending_.erase(r.client_id)) return;
  const Epoch e = r.served_epoch;
  if (r.client_id == cfg_.id) {
    const crypto::Bytes* mine = own_key_at(e);
    if (mine != nullptr && *mine != r.public_key) detect(Cause::AKRMismatch, std::nullopt, cfg_.id);
    return;
  }
  const Belief* b = belief_at(r.client_id, e);
  if (b != nullptr && b->public_key != r.public_key)
    detect(Cause::AKRMismatch, std::nullopt, r.client_id);
}

void Client::evaluate_asr() {
  const Epoch e = env_.epoch();
  auto a = asr_.find(e);
  auto d = chain_.find(e);
  if (a == asr_.end() || d == chain_.end() || last_verified_ != e) return;
  const auto anon = a->second;
  asr_.erase(a);
  if (anon.root_hash == d->second.root_hash) return;
  try {
    auto pom = log::make_pom_conflict(d->second, anon, cfg_.server_pub);
    detect(Cause::ASRMismatch, std::move(pom), {});
  } catch (const NotConflicting&) {
  }
}

// ---------------------------------------------------------------------------
// Heuristics and prevention

void Client::mass_update_check(const std::string&) {
  if (!cfg_.monitor.mass_update) return;
  const Epoch e = env_.epoch();
  const auto w = static_cast<Epoch>(cfg_.monitor.mass_update_window);
  while (!updates_.empty() && updates_.front().first + w <= e) updates_.pop_front();
  if (mass_flagged_ == e) return;
  std::set<std::string> distinct;
  for (const auto& [ep, s] : updates_) distinct.insert(s);
  const double threshold =
      std::max(static_cast<double>(cfg_.monitor.mass_update_min_count),
               cfg_.monitor.mass_update_fraction * static_cast<double>(contacts_.size()));
  if (static_cast<double>(distinct.size()) > threshold) {
    mass_flagged_ = e;
    detect(Cause::MassKeyUpdate, std::nullopt, {});
  }
}

void Client::prevention_on_update(const std::string& subject, const crypto::Bytes& pk) {
  auto k = oob_keys_.find(subject);
  if (!cfg_.prevention.oob || k == oob_keys_.end()) {
    hold(subject, hold_horizon(env_.epoch()));
    return;
  }
  const std::uint64_t nonce = env_.rng()();
  oob_pending_[subject] = {pk, nonce};
  env_.oob(cfg_.id, subject, msg::OobConfirm{pk, oob_tag(k->second, kOobConfirm, pk)});
  env_.timer(cfg_.id, env_.now() + 2 * env_.clock().delta, TimerKind::OobTimeout, nonce);
}

void Client::from_oob(const std::string& peer, const msg::Message& m) {
  auto k = oob_keys_.find(peer);
  if (k == oob_keys_.end()) return;
  if (const auto* c = std::get_if<msg::OobConfirm>(&m)) {
    if (!crypto::mac_verify(k->second, crypto::Encoder().u8(kOobConfirm).var(c->public_key).bytes(),
                            c->tag))
      return;
    const auto& mine = public_key();
    env_.oob(cfg_.id, peer, msg::OobReply{mine, oob_tag(k->second, kOobReply, mine)});
  } else if (const auto* r = std::get_if<msg::OobReply>(&m)) {
    if (!crypto::mac_verify(k->second, crypto::Encoder().u8(kOobReply).var(r->public_key).bytes(),
                            r->tag))
      return;
    auto p = oob_pending_.find(peer);
    if (p == oob_pending_.end()) return;
    const bool match = p->second.public_key == r->public_key;
    oob_pending_.erase(p);
    if (match) {
      release(peer);
    } else {
      blocked_.insert(peer);
      queued_apps_.erase(peer);
      detect(Cause::OOBMismatch, std::nullopt, peer);
    }
  }
}

void Client::on_timer(TimerKind kind, std::uint64_t tag) {
  const Epoch e = env_.epoch();
  switch (kind) {
    case TimerKind::AuditTimeout: {
      auto it = audit_answered_.find(tag);
      if (!disconnected_ && it != audit_answered_.end() && !it->second)
        detect(Cause::MissingSTR, std::nullopt, {});
      break;
    }
    case TimerKind::AsrTimeout:
      if (!disconnected_ && tag == e && !asr_received_.count(e))
        detect(Cause::MissingSTR, std::nullopt, {});
      break;
    case TimerKind::AkrTimeout:
      if (tag == e && !akr_pending_.empty()) {
        const std::string subject = *akr_pending_.begin();
        akr_pending_.clear();
        detect(Cause::AKRTimeout, std::nullopt, subject);
      }
      break;
    case TimerKind::OobTimeout:
      for (auto it = oob_pending_.begin(); it != oob_pending_.end(); ++it) {
        if (it->second.nonce != tag) continue;
        const std::string peer = it->first;
        oob_pending_.erase(it);
        blocked_.insert(peer);
        queued_apps_.erase(peer);
        detect(Cause::OOBTimeout, std::nullopt, peer);
        break;
      }
      break;
    case TimerKind::HoldRelease: {
      std::vector<std::string> due;
      for (const auto& [peer, until] : held_until_)
        if (until <= env_.now()) due.push_back(peer);
      for (const auto& p : due) {
        held_until_.erase(p);
        release(p);
      }
      break;
    }
    case TimerKind::IsolationProbe:
      if (tag == e && !confirmed_ && !contacts_.empty()) {
        const auto i = static_cast<std::size_t>(
            sim::uniform(env_.rng(), 0, static_cast<std::int64_t>(contacts_.size()) - 1));
        const std::uint64_t nonce = env_.rng()();
        probes_[nonce] = contacts_[i];
        env_.to_client(cfg_.id, contacts_[i], msg::Probe{nonce});
      }
      break;
    case TimerKind::IsolationCheck:
      if (tag == e && !confirmed_) detect(Cause::Isolation, std::nullopt, {});
      break;
  }
}

}  // namespace ktsim::client
