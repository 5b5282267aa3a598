#pragma once

// Merkle binary prefix tree, signed tree roots, inclusion proofs and proofs
// of misbehavior.
//
// Every registered identity sits at a leaf whose depth is its unique-prefix
// length plus a random extra 1..max(l,1) bits, so the sibling of a non-empty
// leaf is always an empty leaf filled with server randomness. Node hashes:
//
//   leaf     = H(k_leaf || index || depth || H(id, key))
//   interior = H(k_interior || left || right || prefix || depth)
//
// Nonces and empty-leaf fills are derived from the server's tree seed, the
// node prefix and the epoch, so a tree is a pure function of its inputs.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ktsim/crypto.hpp"

namespace ktsim::log {

using crypto::ByteView;
using crypto::Bytes;
using crypto::Digest;
using crypto::Signature;
using crypto::VerifyingKey;
using Epoch = std::uint64_t;

inline constexpr std::uint32_t kMaxDepth = 256;

struct PublicKeyRecord {
  std::string client_id;
  Bytes public_key;
  Epoch upload_epoch = 0;

  bool operator==(const PublicKeyRecord&) const = default;
};

Digest identity_index(std::string_view client_id);
Digest key_binding(std::string_view client_id, ByteView public_key);

/// The first `length` bits of an identity index. Bits past `length` are zero.
struct Prefix {
  Digest bits;
  std::uint32_t length = 0;

  static Prefix of(const Digest& index, std::uint32_t length);
  Prefix child(bool bit) const;
  void encode(crypto::Encoder& enc) const;
  std::string to_string() const;

  bool operator==(const Prefix&) const = default;
};

struct LeafNode {
  Digest nonce;  // k_leaf; zero for empty leaves
  Digest index;
  std::uint32_t depth = 0;
  Digest binding;
  bool is_empty = false;
  Digest random_fill;  // only meaningful when is_empty

  Digest hash() const;
  bool operator==(const LeafNode&) const = default;
};

struct InteriorNode {
  Digest nonce;  // k_interior
  Prefix prefix;
  std::uint32_t depth = 0;
  Digest left_hash;
  Digest right_hash;

  Digest hash() const;
};

Digest leaf_hash(const Digest& nonce, const Digest& index, std::uint32_t depth,
                 const Digest& binding);
Digest interior_hash(const Digest& nonce, const Digest& left,
                     const Digest& right, const Prefix& prefix,
                     std::uint32_t depth);

class MerkleTree {
 public:
  struct Node {
    std::variant<LeafNode, InteriorNode> body;
    Prefix prefix;
    std::int32_t left = -1;
    std::int32_t right = -1;
    Digest hash;

    bool is_leaf() const { return std::holds_alternative<LeafNode>(body); }
    const LeafNode& leaf() const { return std::get<LeafNode>(body); }
    const InteriorNode& interior() const { return std::get<InteriorNode>(body); }
  };

  struct Entry {
    PublicKeyRecord record;
    std::uint32_t unique_prefix = 0;  // l
    std::uint32_t depth = 0;          // l + r
    std::size_t leaf = 0;             // node id
  };

  Epoch epoch() const { return epoch_; }
  std::uint64_t seed() const { return seed_; }
  const Digest& root_hash() const { return nodes_[root_].hash; }
  std::size_t root() const { return root_; }
  const std::vector<Node>& nodes() const { return nodes_; }
  const std::map<std::string, Entry, std::less<>>& entries() const {
    return entries_;
  }
  std::size_t size() const { return entries_.size(); }
  bool contains(std::string_view client_id) const;
  /// Throws NotRegistered.
  const Entry& entry(std::string_view client_id) const;

 private:
  friend MerkleTree build_tree(std::vector<PublicKeyRecord>, std::uint64_t,
                               Epoch);
  Epoch epoch_ = 0;
  std::uint64_t seed_ = 0;
  std::size_t root_ = 0;
  std::vector<Node> nodes_;
  std::map<std::string, Entry, std::less<>> entries_;
};

/// Throws DuplicateClient if two records share an id, ktsim::Error on an
/// empty id.
MerkleTree build_tree(std::vector<PublicKeyRecord> records, std::uint64_t seed,
                      Epoch epoch = 0);

struct SignedTreeRoot {
  Epoch epoch = 0;
  Digest root_hash;
  Digest prev_str_hash;
  std::uint64_t timestamp_ms = 0;
  Signature signature;

  /// Size counted for client-side storage and for one STR on the wire.
  static constexpr std::size_t kStoredBytes = 104;
  static constexpr std::size_t kWireBytes = 64;

  Bytes signed_payload() const;
  Bytes serialize() const;
  static SignedTreeRoot deserialize(ByteView data);
  /// H(str-tag, serialize(*this)); the next STR chains to this value.
  Digest digest() const;

  bool operator==(const SignedTreeRoot&) const = default;
};

/// `prev` empty means genesis: the tree must be epoch 0 and the chain hash is
/// all-zero. Throws EpochGap when tree.epoch() != prev->epoch + 1.
SignedTreeRoot generate_str(const MerkleTree& tree,
                            const std::optional<SignedTreeRoot>& prev,
                            const crypto::KeyPair& server_key,
                            std::uint64_t timestamp_ms);
bool verify_str(const SignedTreeRoot& str, const VerifyingKey& server_pub);
bool verify_str_chain(const SignedTreeRoot& prev, const SignedTreeRoot& curr,
                      const VerifyingKey& server_pub);

struct PathStep {
  Digest sibling;
  bool side = false;  // bit of the proven node at this level; 1 = right child

  bool operator==(const PathStep&) const = default;
};

struct ProofOfInclusion {
  LeafNode leaf;
  std::vector<PathStep> siblings;  // leaf level first
  std::vector<Digest> nonces;      // interior nonces, parent of leaf first
  std::uint32_t depth = 0;

  /// Hashes moved when the proof is transported: leaf plus one per level.
  std::size_t hash_count() const { return siblings.size() + 1; }
  Bytes serialize() const;
  static ProofOfInclusion deserialize(ByteView data);

  bool operator==(const ProofOfInclusion&) const = default;
};

/// Throws NotRegistered.
ProofOfInclusion prove_inclusion(const MerkleTree& tree,
                                 std::string_view client_id);

/// Recomputes the root implied by the proof for (client_id, public_key).
/// Empty when the proof is malformed for that identity.
std::optional<Digest> poi_root(const ProofOfInclusion& poi,
                               std::string_view client_id,
                               ByteView public_key);

bool verify_poi(const SignedTreeRoot& str, const ProofOfInclusion& poi,
                std::string_view client_id, ByteView public_key,
                const VerifyingKey& server_pub);

/// A server-signed statement that `client_id` currently uses `public_key`.
/// Responses without a proof announce a key that will appear in the tree of
/// epoch upload_epoch + 1.
struct KeyResponse {
  std::string client_id;
  Bytes public_key;
  Epoch upload_epoch = 0;
  Epoch served_epoch = 0;
  std::uint64_t served_at_us = 0;
  std::optional<SignedTreeRoot> str;
  std::optional<ProofOfInclusion> poi;
  Signature signature;

  bool has_proof() const { return str.has_value() && poi.has_value(); }
  Epoch effective_epoch() const { return upload_epoch + 1; }
  Bytes signed_payload() const;
  Bytes serialize() const;
  static KeyResponse deserialize(ByteView data);
  Digest digest() const;

  bool operator==(const KeyResponse&) const = default;
};

void sign_key_response(KeyResponse& response, const crypto::KeyPair& key);
bool verify_key_response(const KeyResponse& response,
                         const VerifyingKey& server_pub);

enum class PomKind : std::uint8_t { ConflictingSTRs = 1, DuplicateKey = 2 };

struct ConflictEvidence {
  SignedTreeRoot a;
  SignedTreeRoot b;
  bool operator==(const ConflictEvidence&) const = default;
};

/// first and repeat bind the same key; intervening, served strictly between
/// them, binds a different one.
struct DuplicateKeyEvidence {
  KeyResponse first;
  KeyResponse intervening;
  KeyResponse repeat;
  bool operator==(const DuplicateKeyEvidence&) const = default;
};

struct ProofOfMisbehavior {
  std::variant<ConflictEvidence, DuplicateKeyEvidence> evidence;

  PomKind kind() const {
    return std::holds_alternative<ConflictEvidence>(evidence)
               ? PomKind::ConflictingSTRs
               : PomKind::DuplicateKey;
  }
  Bytes serialize() const;
  static ProofOfMisbehavior deserialize(ByteView data);
  bool operator==(const ProofOfMisbehavior&) const = default;
};

/// Throws NotConflicting unless both STRs verify, share an epoch and commit
/// to different roots.
ProofOfMisbehavior make_pom_conflict(const SignedTreeRoot& a,
                                     const SignedTreeRoot& b,
                                     const VerifyingKey& server_pub);

/// Throws NotConflicting unless the three responses form a duplicate-key
/// pattern (see DuplicateKeyEvidence) and all signatures verify.
ProofOfMisbehavior make_pom_duplicate(const KeyResponse& first,
                                      const KeyResponse& intervening,
                                      const KeyResponse& repeat,
                                      const VerifyingKey& server_pub);

bool adjudicate(const ProofOfMisbehavior& pom, const VerifyingKey& server_pub);

std::string to_string(PomKind kind);

}  // namespace ktsim::log
