#pragma once

// The key server. Honest behaviour is the default; an AdversaryStrategy
// turns it into the attacker of the simulation, handing out fake keys and
// (optionally) equivocating with one STR branch per audience.
//
// Adversarial state is expressed as views. A view is a set of key
// substitutions; view 0 is the real directory. Every client is assigned the
// view it is shown, and each live view gets its own linear STR chain.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "ktsim/messages.hpp"
#include "ktsim/simnet.hpp"
#include "ktsim/transparency_log.hpp"

namespace ktsim::server {

using log::Epoch;
using log::KeyResponse;
using log::ProofOfInclusion;
using log::SignedTreeRoot;

enum class AttackKind { Honest, PairMITM, ClientMITM, PairImpersonation, ClientImpersonation };
enum class Scope { NewConnections, ExistingConnections, Both };

std::string to_string(AttackKind k);
std::string to_string(Scope s);
AttackKind parse_attack_kind(std::string_view s);
Scope parse_scope(std::string_view s);

struct Coverage {
  int f = 0;  // contacts handed the fake key
  int r = 0;  // contacts handed the real key
};

struct Partition {
  std::vector<std::pair<std::string, std::string>> cut;
  bool views_follow_partition = true;
};

struct AdversaryStrategy {
  AttackKind kind = AttackKind::Honest;
  std::string target;
  std::string peer;  // pair attacks: the other end
  Scope scope = Scope::Both;
  bool equivocate = false;
  /// First epoch whose trees carry the fake keys. Fakes are handed out
  /// during start_epoch - 1.
  Epoch start_epoch = 1;
  std::optional<Partition> partition;
  /// Fake key pushed and the real one restored this long after, inside one
  /// epoch. Nothing fake is ever committed to a tree.
  std::optional<sim::Time> short_lived_restore_after;
  /// ClientMITM: fake updates pushed to the target per epoch.
  std::optional<double> stealthy_update_rate;
  std::optional<Coverage> coverage;
  bool withhold = false;  // drop audit replies to victims
  bool isolate = false;   // drop relayed traffic to and from the target
  bool drop_oob = false;  // drop out-of-band traffic touching victims

  bool honest() const { return kind == AttackKind::Honest; }
  bool short_lived() const { return short_lived_restore_after.has_value(); }
  /// Throws ConfigInvalid.
  void validate(const sim::Topology& g) const;
};

struct KeyVersion {
  crypto::Bytes public_key;
  Epoch upload_epoch = 0;
  bool initial = false;

  Epoch effective() const { return initial ? 0 : upload_epoch + 1; }
};

struct FakeKey {
  crypto::Bytes public_key;
  Epoch upload_epoch = 0;

  Epoch effective() const { return upload_epoch + 1; }
};

struct View {
  std::map<std::string, FakeKey, std::less<>> substitutions;
};

/// A fake key the adversary pushes to `victim` during `epoch`.
struct PlannedPush {
  std::string victim;
  std::string subject;
  Epoch epoch = 0;
};

struct ServerConfig {
  std::uint64_t tree_seed = 0;
  std::uint64_t fake_seed = 0;
  bool transparency = true;  // attach STR + PoI to responses
  int monitor_epochs = 10;   // AKM m, known to the adversary
};

class Server {
 public:
  Server(crypto::KeyPair key, ServerConfig cfg);

  const crypto::VerifyingKey& public_key() const { return key_.verifying_key(); }
  const ServerConfig& config() const { return cfg_; }

  /// Registration before the genesis tree; effective from epoch 0.
  void register_initial(const std::string& id, crypto::Bytes public_key);
  /// Stages a key for the tree of epoch + 1. Throws RateLimited on a second
  /// change in one epoch, UnknownSubject for ids never registered.
  void register_key(const std::string& id, crypto::Bytes public_key, Epoch epoch);
  bool registered(std::string_view id) const;
  /// Latest key, staged or committed. Throws UnknownSubject.
  const KeyVersion& current(std::string_view id) const;
  /// Key committed to the tree of epoch e, or nullptr.
  const KeyVersion* effective_at(std::string_view id, Epoch e) const;

  /// Installs the adversary. `contact_order` lists each client's contacts
  /// in the order they were made (initial edges first), indexed like
  /// `graph.clients`.
  void set_strategy(const AdversaryStrategy& s, const sim::Topology& graph,
                    const std::vector<std::vector<int>>& contact_order);
  const AdversaryStrategy& strategy() const { return strategy_; }
  int view_of(std::string_view client) const;
  const std::vector<View>& views() const { return views_; }
  const std::vector<PlannedPush>& planned_pushes() const { return planned_; }
  /// Clients shown a fake key for someone else.
  const std::set<std::string>& victims() const { return victims_; }
  /// Clients whose own key is faked to others.
  const std::set<std::string>& owners() const { return owners_; }
  crypto::Bytes fake_key_for(std::string_view subject) const;

  /// Commits every live view for epoch e; must be called for 0, 1, 2, ...
  /// Returns one STR per live view, keyed by view id.
  std::map<int, SignedTreeRoot> epoch_commit(Epoch e, std::uint64_t timestamp_ms);
  std::optional<Epoch> last_committed() const { return last_committed_; }
  const SignedTreeRoot& str(int view, Epoch e) const;
  std::optional<ProofOfInclusion> prove_at(int view, std::string_view subject, Epoch e);

  /// Identified key lookup. Throws UnknownSubject.
  KeyResponse lookup_key(std::string_view requester, std::string_view subject,
                         Epoch e, std::uint64_t now_us);
  /// Signed bare response for the real current key.
  KeyResponse real_response(std::string_view subject, Epoch e, std::uint64_t now_us);
  /// Signed bare response for the fake key; remembers `victim` as a holder.
  KeyResponse fake_response(std::string_view victim, std::string_view subject,
                            Epoch e, std::uint64_t now_us);
  /// Responses to push to `contacts` after `subject` staged a new key.
  /// Victims kept on a fake key for `subject` get nothing.
  std::vector<std::pair<std::string, KeyResponse>> push_update(
      std::string_view subject, const std::vector<std::string>& contacts, Epoch e,
      std::uint64_t now_us);

  void queue_push(const std::string& client, KeyResponse r);
  /// Answers an epoch-start audit; empty when the adversary withholds it.
  std::optional<msg::AuditReply> handle_audit(const std::string& requester,
                                              const msg::AuditRequest& req, Epoch e);

  void set_online(const std::vector<std::string>& online);

  /// Anonymous AKR batch of k requests for `subject`. Entry i is true when
  /// request i gets the fake key. The adversary sees only the subject and
  /// the count.
  std::vector<bool> decide_anonymous_response(std::string_view subject, std::size_t k,
                                              Epoch e, sim::Rng& rng);
  KeyResponse anonymous_response(std::string_view subject, bool fake, Epoch e,
                                 std::uint64_t now_us);
  /// Anonymous STR batch of k requests: the multiset of STRs owed to this
  /// epoch's direct requesters, in random order.
  std::vector<SignedTreeRoot> serve_asr(std::size_t k, Epoch e, sim::Rng& rng);

 private:
  struct Record {
    std::vector<KeyVersion> versions;
    std::optional<Epoch> last_change;
  };

  std::shared_ptr<const log::MerkleTree> tree_for(int view, Epoch e);
  std::vector<log::PublicKeyRecord> records_for(int view, Epoch e) const;
  const FakeKey* active_fake(int view, std::string_view subject, Epoch e) const;
  bool live(int view) const;
  int shown_view(std::string_view client) const;

  crypto::KeyPair key_;
  ServerConfig cfg_;
  std::map<std::string, Record, std::less<>> directory_;

  AdversaryStrategy strategy_;
  std::vector<View> views_{View{}};
  std::map<std::string, int, std::less<>> audience_;  // chain each client is shown
  std::map<std::string, int, std::less<>> shown_;     // keys each client is handed
  std::vector<PlannedPush> planned_;
  std::set<std::string> victims_;
  std::set<std::string> owners_;
  bool commit_fakes_ = true;

  std::vector<std::vector<SignedTreeRoot>> chains_;
  std::optional<Epoch> last_committed_;
  std::map<int, std::shared_ptr<const log::MerkleTree>> current_trees_;

  std::map<std::string, std::vector<KeyResponse>, std::less<>> queued_;
  std::set<std::string, std::less<>> online_;
  // subject -> (holder -> epoch the fake was handed out)
  std::map<std::string, std::map<std::string, Epoch>, std::less<>> fake_holders_;
  std::map<Epoch, std::vector<int>> direct_requests_;  // epoch -> views
};

}  // namespace ktsim::server
