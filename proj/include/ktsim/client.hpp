#pragma once

// Client-side defenses. One Client object per simulated user; all clients of
// a run share one Defense. The simulation loop owns the clients and feeds
// them messages and timers through the Env interface.

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ktsim/messages.hpp"
#include "ktsim/simnet.hpp"
#include "ktsim/transparency_log.hpp"

namespace ktsim::client {

using log::Epoch;
using log::KeyResponse;
using log::ProofOfMisbehavior;
using log::SignedTreeRoot;
using sim::Time;

enum class Defense { KTCA, AKM, KTACA };

std::string to_string(Defense d);
Defense parse_defense(std::string_view s);

enum class Cause : std::uint8_t {
  ConflictingSTR,
  InvalidPoI,
  MissingSTR,
  MissingPoI,
  AKRMismatch,
  AKRTimeout,
  ASRMismatch,
  DuplicateKey,
  MassKeyUpdate,
  Isolation,
  OOBTimeout,
  OOBMismatch,
  kCount
};

inline constexpr std::size_t kCauses = static_cast<std::size_t>(Cause::kCount);

std::string to_string(Cause c);
/// Protocol checks; these never fire against an honest server.
bool is_core(Cause c);
/// MassKeyUpdate and Isolation.
bool is_heuristic(Cause c);

struct DetectionEvent {
  std::string detector;
  Epoch epoch = 0;
  Time time_us = 0;
  Cause cause = Cause::ConflictingSTR;
  std::optional<ProofOfMisbehavior> pom;
  std::string subject;  // key or peer the event is about, if any
  std::string attack_tag;
};

struct MonitorPolicy {
  int m = 10;  // AKM epochs monitored after a key is received
  bool mass_update = true;
  double mass_update_fraction = 0.2;
  int mass_update_window = 1;  // epochs
  int mass_update_min_count = 3;
  bool isolation = false;
  int isolation_subintervals = 0;  // 0: one per contact
  bool gossip_dedup = true;

  /// Throws ConfigInvalid.
  void validate() const;
};

struct PreventionPolicy {
  bool enabled = false;
  bool oob = true;  // confirm key updates over established oob channels
};

enum class TimerKind : std::uint8_t {
  AuditTimeout,
  AsrTimeout,
  AkrTimeout,
  OobTimeout,
  HoldRelease,
  IsolationProbe,
  IsolationCheck,
};

class Env {
 public:
  virtual ~Env() = default;
  virtual Time now() const = 0;
  virtual Epoch epoch() const = 0;
  virtual const sim::ClockConfig& clock() const = 0;
  virtual void to_server(const std::string& from, msg::Message m) = 0;
  /// Relayed through the server; bound 2 delta.
  virtual void to_client(const std::string& from, const std::string& to, msg::Message m) = 0;
  virtual void anonymous(const std::string& from, msg::Message m) = 0;
  virtual void oob(const std::string& from, const std::string& to, msg::Message m) = 0;
  virtual void timer(const std::string& owner, Time at, TimerKind kind, std::uint64_t tag) = 0;
  virtual void detect(DetectionEvent ev) = 0;
  virtual sim::Rng& rng() = 0;
};

struct ClientConfig {
  std::string id;
  Defense defense = Defense::KTCA;
  MonitorPolicy monitor;
  PreventionPolicy prevention;
  crypto::VerifyingKey server_pub;
  int diameter = 0;  // contact graph diameter, for the KTCA hold horizon
};

/// A key held for a contact (or for oneself).
struct Belief {
  crypto::Bytes public_key;
  Epoch upload_epoch = 0;
  bool initial = false;
  std::uint64_t served_at_us = 0;

  Epoch effective() const { return initial ? 0 : upload_epoch + 1; }
};

class Client {
 public:
  Client(ClientConfig cfg, crypto::KeyPair key, Env& env);

  const std::string& id() const { return cfg_.id; }
  Defense defense() const { return cfg_.defense; }
  const crypto::Bytes& public_key() const { return own_.back().public_key; }

  /// Initial contact with a server-signed bootstrap response.
  void add_contact(const std::string& peer, const KeyResponse& bootstrap);
  void set_oob_key(const std::string& peer, const crypto::MacKey& key);
  void set_online(bool online) { online_ = online; }
  bool online() const { return online_; }

  void on_epoch_start(Epoch e);
  /// New connection: looks the peer up and adds it as a contact.
  void connect(const std::string& peer);
  /// Registers a fresh key with the server.
  void update_key(crypto::KeyPair next);
  /// Sends (or holds) one application message to `peer`.
  void send_app(const std::string& peer);

  void from_server(const msg::Message& m);
  void from_client(const std::string& peer, const msg::Message& m);
  void from_oob(const std::string& peer, const msg::Message& m);
  void from_anonymous(const msg::Message& m);
  void on_timer(TimerKind kind, std::uint64_t tag);

  bool detected() const { return detected_; }
  bool disconnected() const { return disconnected_; }
  const std::optional<ProofOfMisbehavior>& held_pom() const { return held_pom_; }
  const std::vector<std::string>& contacts() const { return contacts_; }
  bool has_contact(const std::string& peer) const;
  /// Latest key held for `peer`, or nullptr.
  const Belief* contact_key(const std::string& peer) const;
  const std::vector<KeyResponse>& history(const std::string& peer) const;
  std::optional<Epoch> last_verified_epoch() const { return last_verified_; }
  /// Bytes of client-side state counted by the accounting report.
  std::size_t stored_bytes() const;
  std::size_t apps_held() const;

 private:
  enum class Source { Bootstrap, Lookup, Push };

  struct Promise {
    std::string subject;
    Epoch epoch = 0;
    crypto::Bytes public_key;
  };

  struct OobPending {
    crypto::Bytes public_key;
    std::uint64_t nonce = 0;
  };

  void detect(Cause c, std::optional<ProofOfMisbehavior> pom, const std::string& subject);
  void audit_start(Epoch e);
  void akm_start(Epoch e);
  void isolation_start(Epoch e);
  void handle_audit_reply(const msg::AuditReply& r);
  void handle_key_response(const KeyResponse& r, Source src);
  bool short_lived_check(const KeyResponse& r);
  void check_transparency(const KeyResponse& r);
  void evaluate_akr(const KeyResponse& r);
  void evaluate_asr();
  void note_str(const SignedTreeRoot& s);
  void gossip(const SignedTreeRoot& s);
  void flood_pom(const ProofOfMisbehavior& pom, const std::string& skip);
  void mass_update_check(const std::string& subject);
  void prevention_on_update(const std::string& subject, const crypto::Bytes& pk);
  void hold(const std::string& peer, Time until);
  void release(const std::string& peer);
  bool app_allowed(const std::string& peer) const;
  const crypto::Bytes* own_key_at(Epoch e) const;
  const Belief* belief_at(const std::string& peer, Epoch e) const;
  Time hold_horizon(Epoch e) const;
  Time audit_timeout() const;

  ClientConfig cfg_;
  Env& env_;
  std::vector<crypto::KeyPair> keys_;
  std::vector<Belief> own_;
  bool online_ = true;
  Epoch epoch_ = 0;

  std::vector<std::string> contacts_;
  std::map<std::string, std::vector<Belief>> beliefs_;
  std::map<std::string, std::vector<KeyResponse>> history_;
  std::map<std::string, Epoch> key_changed_;  // epoch of the last pushed change
  std::set<std::string> pending_connect_;

  // Transparency state.
  std::map<Epoch, SignedTreeRoot> chain_;
  std::optional<Epoch> last_verified_;
  std::vector<Promise> promises_;
  std::map<Epoch, bool> audit_answered_;
  std::map<Epoch, std::vector<SignedTreeRoot>> seen_;
  std::map<Epoch, std::map<crypto::Digest, std::set<std::string>>> sent_;
  std::map<Epoch, std::map<crypto::Digest, std::set<std::string>>> received_;
  std::set<Epoch> relayed_;
  std::map<Epoch, SignedTreeRoot> asr_;
  std::set<Epoch> asr_received_;
  std::map<Epoch, crypto::Digest> roots_;  // verified roots still needed for checks

  // AKM state.
  std::map<std::string, Epoch> monitor_;  // subject -> receipt epoch
  std::set<std::string> akr_pending_;
  std::vector<KeyResponse> akr_buffer_;
  bool synced_ = true;

  // Heuristics.
  std::deque<std::pair<Epoch, std::string>> updates_;
  std::optional<Epoch> mass_flagged_;
  std::map<std::uint64_t, std::string> probes_;
  bool confirmed_ = true;

  // Prevention.
  std::map<std::string, crypto::MacKey> oob_keys_;
  std::map<std::string, OobPending> oob_pending_;
  std::map<std::string, Time> held_until_;
  std::map<std::string, std::size_t> queued_apps_;
  std::set<std::string> blocked_;

  bool detected_ = false;
  bool disconnected_ = false;
  std::optional<ProofOfMisbehavior> held_pom_;
};

}  // namespace ktsim::client
