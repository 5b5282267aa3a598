#include "ktsim/transparency_log.hpp"

#include <algorithm>
#include <set>

#include "ktsim/error.hpp"

namespace ktsim::log {

using crypto::Domain;
using crypto::Encoder;

namespace {

Digest node_nonce(Domain domain, std::uint64_t seed, const Prefix& prefix,
                  Epoch epoch) {
  Encoder enc;
  enc.u64(seed);
  prefix.encode(enc);
  enc.u64(epoch);
  return crypto::hash(domain, enc.bytes());
}

std::uint32_t common_prefix_bits(const Digest& a, const Digest& b) {
  for (std::size_t i = 0; i < a.bytes.size(); ++i) {
    const std::uint8_t x = a.bytes[i] ^ b.bytes[i];
    if (x != 0) {
      std::uint32_t n = 0;
      for (std::uint8_t m = 0x80; (x & m) == 0; m >>= 1) ++n;
      return static_cast<std::uint32_t>(i * 8) + n;
    }
  }
  return kMaxDepth;
}

std::uint32_t extra_depth(std::uint64_t seed, const Digest& index, Epoch epoch,
                          std::uint32_t unique_prefix) {
  const std::uint32_t span = std::max<std::uint32_t>(unique_prefix, 1);
  const Digest draw = crypto::hash(
      Domain::DepthDraw, Encoder().u64(seed).digest(index).u64(epoch).bytes());
  return 1 + static_cast<std::uint32_t>(draw.prefix_u64() % span);
}

struct Placement {
  Digest index;
  std::uint32_t depth;
  const PublicKeyRecord* record;
};

class TreeBuilder {
 public:
  TreeBuilder(std::uint64_t seed, Epoch epoch, std::vector<MerkleTree::Node>& out)
      : seed_(seed), epoch_(epoch), nodes_(out) {}

  std::size_t build(const Prefix& prefix, std::span<const Placement> range,
                    std::map<std::string, MerkleTree::Entry, std::less<>>& entries) {
    const std::uint32_t d = prefix.length;
    if (range.empty()) return empty_leaf(prefix);
    if (range.size() == 1 && range[0].depth == d) {
      const auto& p = range[0];
      LeafNode leaf;
      leaf.nonce = node_nonce(Domain::LeafNonce, seed_, prefix, epoch_);
      leaf.index = p.index;
      leaf.depth = d;
      leaf.binding = key_binding(p.record->client_id, p.record->public_key);
      const std::size_t id = push(prefix, leaf, -1, -1);
      entries.at(p.record->client_id).leaf = id;
      return id;
    }
    if (d >= kMaxDepth) throw Error("tree depth overflow");
    auto split = std::find_if(range.begin(), range.end(),
                              [d](const Placement& p) { return p.index.bit(d); });
    const auto mid = static_cast<std::size_t>(split - range.begin());
    const std::size_t left = build(prefix.child(false), range.first(mid), entries);
    const std::size_t right = build(prefix.child(true), range.subspan(mid), entries);

    InteriorNode node;
    node.nonce = node_nonce(Domain::InteriorNonce, seed_, prefix, epoch_);
    node.prefix = prefix;
    node.depth = d;
    node.left_hash = nodes_[left].hash;
    node.right_hash = nodes_[right].hash;
    return push(prefix, node, static_cast<std::int32_t>(left),
                static_cast<std::int32_t>(right));
  }

  std::size_t empty_leaf(const Prefix& prefix) {
    LeafNode leaf;
    leaf.is_empty = true;
    leaf.depth = prefix.length;
    leaf.random_fill = node_nonce(Domain::EmptyLeaf, seed_, prefix, epoch_);
    return push(prefix, leaf, -1, -1);
  }

 private:
  template <class Body>
  std::size_t push(const Prefix& prefix, const Body& body, std::int32_t l,
                   std::int32_t r) {
    MerkleTree::Node n;
    n.hash = body.hash();
    n.body = body;
    n.prefix = prefix;
    n.left = l;
    n.right = r;
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  std::uint64_t seed_;
  Epoch epoch_;
  std::vector<MerkleTree::Node>& nodes_;
};

void encode_leaf(Encoder& enc, const LeafNode& leaf) {
  enc.digest(leaf.nonce).digest(leaf.index).u64(leaf.depth).digest(leaf.binding);
  enc.u8(leaf.is_empty ? 1 : 0).digest(leaf.random_fill);
}

LeafNode decode_leaf(crypto::Decoder& dec) {
  LeafNode leaf;
  leaf.nonce = dec.digest();
  leaf.index = dec.digest();
  leaf.depth = static_cast<std::uint32_t>(dec.u64());
  leaf.binding = dec.digest();
  leaf.is_empty = dec.u8() != 0;
  leaf.random_fill = dec.digest();
  return leaf;
}

void require_done(const crypto::Decoder& dec) {
  if (!dec.done()) throw DecodeError("trailing bytes");
}

}  // namespace

Digest identity_index(std::string_view client_id) {
  return crypto::hash(Domain::IdentityIndex, Encoder().var(client_id).bytes());
}

Digest key_binding(std::string_view client_id, ByteView public_key) {
  return crypto::hash(Domain::KeyBinding,
                      Encoder().var(client_id).var(public_key).bytes());
}

Prefix Prefix::of(const Digest& index, std::uint32_t length) {
  Prefix p;
  p.length = std::min(length, kMaxDepth);
  const std::uint32_t full = p.length / 8;
  for (std::uint32_t i = 0; i < full; ++i) p.bits.bytes[i] = index.bytes[i];
  if (const std::uint32_t rem = p.length % 8; rem != 0)
    p.bits.bytes[full] =
        index.bytes[full] & static_cast<std::uint8_t>(0xff << (8 - rem));
  return p;
}

Prefix Prefix::child(bool bit) const {
  if (length >= kMaxDepth) throw Error("prefix longer than index");
  Prefix p = *this;
  if (bit) p.bits.bytes[length / 8] |= static_cast<std::uint8_t>(0x80 >> (length % 8));
  ++p.length;
  return p;
}

void Prefix::encode(Encoder& enc) const {
  enc.u64(length);
  enc.var(ByteView(bits.bytes).first((length + 7) / 8));
}

std::string Prefix::to_string() const {
  std::string s;
  for (std::uint32_t i = 0; i < length; ++i) s.push_back(bits.bit(i) ? '1' : '0');
  return s;
}

Digest leaf_hash(const Digest& nonce, const Digest& index, std::uint32_t depth,
                 const Digest& binding) {
  return crypto::hash(
      Domain::LeafNode,
      Encoder().digest(nonce).digest(index).u64(depth).digest(binding).bytes());
}

Digest interior_hash(const Digest& nonce, const Digest& left,
                     const Digest& right, const Prefix& prefix,
                     std::uint32_t depth) {
  Encoder enc;
  enc.digest(nonce).digest(left).digest(right);
  prefix.encode(enc);
  enc.u64(depth);
  return crypto::hash(Domain::InteriorNode, enc.bytes());
}

Digest LeafNode::hash() const {
  return is_empty ? random_fill : leaf_hash(nonce, index, depth, binding);
}

Digest InteriorNode::hash() const {
  return interior_hash(nonce, left_hash, right_hash, prefix, depth);
}

bool MerkleTree::contains(std::string_view client_id) const {
  return entries_.find(client_id) != entries_.end();
}

const MerkleTree::Entry& MerkleTree::entry(std::string_view client_id) const {
  auto it = entries_.find(client_id);
  if (it == entries_.end()) throw NotRegistered(std::string(client_id));
  return it->second;
}

MerkleTree build_tree(std::vector<PublicKeyRecord> records, std::uint64_t seed,
                      Epoch epoch) {
  MerkleTree tree;
  tree.epoch_ = epoch;
  tree.seed_ = seed;

  for (const auto& r : records) {
    if (r.client_id.empty()) throw Error("record with empty client id");
    MerkleTree::Entry e;
    e.record = r;
    if (!tree.entries_.emplace(r.client_id, std::move(e)).second)
      throw DuplicateClient(r.client_id);
  }

  std::vector<Placement> placements;
  placements.reserve(tree.entries_.size());
  for (const auto& [id, e] : tree.entries_)
    placements.push_back({identity_index(id), 0, &e.record});
  std::sort(placements.begin(), placements.end(),
            [](const Placement& a, const Placement& b) { return a.index < b.index; });

  const std::size_t n = placements.size();
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t ell = 0;
    if (n > 1) {
      std::uint32_t lcp = 0;
      if (i > 0) lcp = std::max(lcp, common_prefix_bits(placements[i].index, placements[i - 1].index));
      if (i + 1 < n) lcp = std::max(lcp, common_prefix_bits(placements[i].index, placements[i + 1].index));
      if (lcp >= kMaxDepth) throw Error("identity index collision");
      ell = lcp + 1;
    }
    const std::uint32_t depth =
        std::min(ell + extra_depth(seed, placements[i].index, epoch, ell), kMaxDepth);
    placements[i].depth = depth;
    auto& e = tree.entries_.at(placements[i].record->client_id);
    e.unique_prefix = ell;
    e.depth = depth;
  }

  tree.nodes_.reserve(n * 4 + 1);
  TreeBuilder builder(seed, epoch, tree.nodes_);
  tree.root_ = builder.build(Prefix{}, placements, tree.entries_);
  return tree;
}

Bytes SignedTreeRoot::signed_payload() const {
  return Encoder()
      .u8(static_cast<std::uint8_t>(Domain::TreeRootPayload))
      .u64(epoch)
      .digest(root_hash)
      .digest(prev_str_hash)
      .u64(timestamp_ms)
      .bytes();
}

Bytes SignedTreeRoot::serialize() const {
  return Encoder()
      .u64(epoch)
      .digest(root_hash)
      .digest(prev_str_hash)
      .u64(timestamp_ms)
      .raw(signature.view())
      .bytes();
}

SignedTreeRoot SignedTreeRoot::deserialize(ByteView data) {
  crypto::Decoder dec(data);
  SignedTreeRoot s;
  s.epoch = dec.u64();
  s.root_hash = dec.digest();
  s.prev_str_hash = dec.digest();
  s.timestamp_ms = dec.u64();
  s.signature = dec.signature();
  require_done(dec);
  return s;
}

Digest SignedTreeRoot::digest() const {
  return crypto::hash(Domain::TreeRootDigest, serialize());
}

SignedTreeRoot generate_str(const MerkleTree& tree,
                            const std::optional<SignedTreeRoot>& prev,
                            const crypto::KeyPair& server_key,
                            std::uint64_t timestamp_ms) {
  SignedTreeRoot str;
  str.epoch = tree.epoch();
  str.root_hash = tree.root_hash();
  str.timestamp_ms = timestamp_ms;
  if (prev) {
    if (tree.epoch() != prev->epoch + 1)
      throw EpochGap("tree epoch " + std::to_string(tree.epoch()) +
                     " does not follow " + std::to_string(prev->epoch));
    str.prev_str_hash = prev->digest();
  } else if (tree.epoch() != 0) {
    throw EpochGap("genesis STR requires an epoch-0 tree");
  }
  str.signature = server_key.sign(str.signed_payload());
  return str;
}

bool verify_str(const SignedTreeRoot& str, const VerifyingKey& server_pub) {
  return crypto::verify(server_pub, str.signed_payload(), str.signature);
}

bool verify_str_chain(const SignedTreeRoot& prev, const SignedTreeRoot& curr,
                      const VerifyingKey& server_pub) {
  return curr.epoch == prev.epoch + 1 && curr.prev_str_hash == prev.digest() &&
         verify_str(prev, server_pub) && verify_str(curr, server_pub);
}

Bytes ProofOfInclusion::serialize() const {
  Encoder enc;
  encode_leaf(enc, leaf);
  enc.u32(static_cast<std::uint32_t>(siblings.size()));
  for (const auto& s : siblings) enc.digest(s.sibling).u8(s.side ? 1 : 0);
  enc.u32(static_cast<std::uint32_t>(nonces.size()));
  for (const auto& n : nonces) enc.digest(n);
  enc.u64(depth);
  return std::move(enc).bytes();
}

ProofOfInclusion ProofOfInclusion::deserialize(ByteView data) {
  crypto::Decoder dec(data);
  ProofOfInclusion p;
  p.leaf = decode_leaf(dec);
  const auto ns = dec.u32();
  if (ns > kMaxDepth) throw DecodeError("proof too long");
  for (std::uint32_t i = 0; i < ns; ++i) {
    PathStep s;
    s.sibling = dec.digest();
    s.side = dec.u8() != 0;
    p.siblings.push_back(s);
  }
  const auto nn = dec.u32();
  if (nn > kMaxDepth) throw DecodeError("proof too long");
  for (std::uint32_t i = 0; i < nn; ++i) p.nonces.push_back(dec.digest());
  p.depth = static_cast<std::uint32_t>(dec.u64());
  require_done(dec);
  return p;
}

ProofOfInclusion prove_inclusion(const MerkleTree& tree,
                                 std::string_view client_id) {
  const auto& e = tree.entry(client_id);
  const auto& nodes = tree.nodes();
  const Digest index = identity_index(client_id);

  ProofOfInclusion poi;
  poi.depth = e.depth;
  std::size_t cur = tree.root();
  for (std::uint32_t level = 0; level < e.depth; ++level) {
    const auto& n = nodes[cur];
    const bool bit = index.bit(level);
    const auto sib = static_cast<std::size_t>(bit ? n.left : n.right);
    poi.siblings.push_back({nodes[sib].hash, bit});
    poi.nonces.push_back(n.interior().nonce);
    cur = static_cast<std::size_t>(bit ? n.right : n.left);
  }
  poi.leaf = nodes[cur].leaf();
  std::reverse(poi.siblings.begin(), poi.siblings.end());
  std::reverse(poi.nonces.begin(), poi.nonces.end());
  return poi;
}

std::optional<Digest> poi_root(const ProofOfInclusion& poi,
                               std::string_view client_id,
                               ByteView public_key) {
  const auto& leaf = poi.leaf;
  const std::uint32_t depth = poi.depth;
  if (leaf.is_empty || depth == 0 || depth > kMaxDepth || leaf.depth != depth ||
      poi.siblings.size() != depth || poi.nonces.size() != depth)
    return std::nullopt;
  const Digest index = identity_index(client_id);
  if (leaf.index != index || leaf.binding != key_binding(client_id, public_key))
    return std::nullopt;

  Digest h = leaf_hash(leaf.nonce, index, depth, leaf.binding);
  for (std::uint32_t k = 0; k < depth; ++k) {
    const std::uint32_t level = depth - 1 - k;
    const bool bit = index.bit(level);
    if (poi.siblings[k].side != bit) return std::nullopt;
    const Prefix prefix = Prefix::of(index, level);
    const Digest& sib = poi.siblings[k].sibling;
    h = bit ? interior_hash(poi.nonces[k], sib, h, prefix, level)
            : interior_hash(poi.nonces[k], h, sib, prefix, level);
  }
  return h;
}

bool verify_poi(const SignedTreeRoot& str, const ProofOfInclusion& poi,
                std::string_view client_id, ByteView public_key,
                const VerifyingKey& server_pub) {
  const auto root = poi_root(poi, client_id, public_key);
  return root && *root == str.root_hash && verify_str(str, server_pub);
}

Bytes KeyResponse::signed_payload() const {
  Encoder enc;
  enc.u8(static_cast<std::uint8_t>(Domain::KeyResponsePayload))
      .var(client_id)
      .var(public_key)
      .u64(upload_epoch)
      .u64(served_epoch)
      .u64(served_at_us);
  enc.u8(str ? 1 : 0);
  if (str) enc.digest(str->digest());
  return std::move(enc).bytes();
}

Bytes KeyResponse::serialize() const {
  Encoder enc;
  enc.var(client_id).var(public_key).u64(upload_epoch).u64(served_epoch).u64(served_at_us);
  enc.u8(str ? 1 : 0);
  if (str) enc.var(str->serialize());
  enc.u8(poi ? 1 : 0);
  if (poi) enc.var(poi->serialize());
  enc.raw(signature.view());
  return std::move(enc).bytes();
}

KeyResponse KeyResponse::deserialize(ByteView data) {
  crypto::Decoder dec(data);
  KeyResponse r;
  r.client_id = dec.var_string();
  r.public_key = dec.var();
  r.upload_epoch = dec.u64();
  r.served_epoch = dec.u64();
  r.served_at_us = dec.u64();
  if (dec.u8() != 0) r.str = SignedTreeRoot::deserialize(dec.var());
  if (dec.u8() != 0) r.poi = ProofOfInclusion::deserialize(dec.var());
  r.signature = dec.signature();
  require_done(dec);
  return r;
}

Digest KeyResponse::digest() const {
  return crypto::hash(Domain::KeyResponsePayload, serialize());
}

void sign_key_response(KeyResponse& response, const crypto::KeyPair& key) {
  response.signature = key.sign(response.signed_payload());
}

bool verify_key_response(const KeyResponse& response,
                         const VerifyingKey& server_pub) {
  return crypto::verify(server_pub, response.signed_payload(), response.signature);
}

Bytes ProofOfMisbehavior::serialize() const {
  Encoder enc;
  enc.u8(static_cast<std::uint8_t>(kind()));
  if (const auto* c = std::get_if<ConflictEvidence>(&evidence)) {
    enc.var(c->a.serialize()).var(c->b.serialize());
  } else {
    const auto& d = std::get<DuplicateKeyEvidence>(evidence);
    enc.var(d.first.serialize()).var(d.intervening.serialize()).var(d.repeat.serialize());
  }
  return std::move(enc).bytes();
}

ProofOfMisbehavior ProofOfMisbehavior::deserialize(ByteView data) {
  crypto::Decoder dec(data);
  ProofOfMisbehavior pom;
  switch (static_cast<PomKind>(dec.u8())) {
    case PomKind::ConflictingSTRs: {
      ConflictEvidence c;
      c.a = SignedTreeRoot::deserialize(dec.var());
      c.b = SignedTreeRoot::deserialize(dec.var());
      pom.evidence = c;
      break;
    }
    case PomKind::DuplicateKey: {
      DuplicateKeyEvidence d;
      d.first = KeyResponse::deserialize(dec.var());
      d.intervening = KeyResponse::deserialize(dec.var());
      d.repeat = KeyResponse::deserialize(dec.var());
      pom.evidence = d;
      break;
    }
    default:
      throw DecodeError("unknown PoM kind");
  }
  require_done(dec);
  return pom;
}

namespace {

bool conflict_holds(const ConflictEvidence& c, const VerifyingKey& pub) {
  return c.a.epoch == c.b.epoch && c.a.root_hash != c.b.root_hash &&
         verify_str(c.a, pub) && verify_str(c.b, pub);
}

bool duplicate_holds(const DuplicateKeyEvidence& d, const VerifyingKey& pub) {
  return d.first.client_id == d.intervening.client_id &&
         d.first.client_id == d.repeat.client_id &&
         d.first.public_key == d.repeat.public_key &&
         d.intervening.public_key != d.first.public_key &&
         d.first.served_at_us < d.intervening.served_at_us &&
         d.intervening.served_at_us < d.repeat.served_at_us &&
         verify_key_response(d.first, pub) &&
         verify_key_response(d.intervening, pub) &&
         verify_key_response(d.repeat, pub);
}

}  // namespace

ProofOfMisbehavior make_pom_conflict(const SignedTreeRoot& a,
                                     const SignedTreeRoot& b,
                                     const VerifyingKey& server_pub) {
  ConflictEvidence c{a, b};
  if (!conflict_holds(c, server_pub))
    throw NotConflicting("STRs are not a signed same-epoch conflict");
  return {c};
}

ProofOfMisbehavior make_pom_duplicate(const KeyResponse& first,
                                      const KeyResponse& intervening,
                                      const KeyResponse& repeat,
                                      const VerifyingKey& server_pub) {
  DuplicateKeyEvidence d{first, intervening, repeat};
  if (!duplicate_holds(d, server_pub))
    throw NotConflicting("responses do not show a re-served key");
  return {d};
}

bool adjudicate(const ProofOfMisbehavior& pom, const VerifyingKey& server_pub) {
  if (const auto* c = std::get_if<ConflictEvidence>(&pom.evidence))
    return conflict_holds(*c, server_pub);
  return duplicate_holds(std::get<DuplicateKeyEvidence>(pom.evidence), server_pub);
}

std::string to_string(PomKind kind) {
  return kind == PomKind::ConflictingSTRs ? "ConflictingSTRs" : "DuplicateKey";
}

}  // namespace ktsim::log
