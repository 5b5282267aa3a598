#include <random>

#include "doctest.h"
#include "ktsim/error.hpp"
#include "ktsim/transparency_log.hpp"
#include "naive_tree.hpp"

using namespace ktsim;
using namespace ktsim::log;

namespace {

crypto::Bytes key_bytes(const std::string& s) { return {s.begin(), s.end()}; }

std::vector<PublicKeyRecord> make_records(int n, const std::string& tag = "pk") {
  std::vector<PublicKeyRecord> v;
  for (int i = 0; i < n; ++i)
    v.push_back({"user-" + std::to_string(i), key_bytes(tag + std::to_string(i)), 0});
  return v;
}

const crypto::KeyPair& server_key() {
  static const auto k = crypto::KeyPair::from_seed(std::uint64_t{1000});
  return k;
}

// Walks every node; checks depth and sibling rules.
void check_shape(const MerkleTree& t) {
  const auto& nodes = t.nodes();
  for (const auto& n : nodes) {
    if (n.is_leaf()) continue;
    const auto& l = nodes[n.left];
    const auto& r = nodes[n.right];
    CHECK(l.prefix == n.prefix.child(false));
    CHECK(r.prefix == n.prefix.child(true));
    const bool l_full = l.is_leaf() && !l.leaf().is_empty;
    const bool r_full = r.is_leaf() && !r.leaf().is_empty;
    CHECK_FALSE((l_full && r_full));
  }
  for (const auto& [id, e] : t.entries()) {
    const std::uint32_t r = e.depth - e.unique_prefix;
    CHECK(r >= 1);
    CHECK(r <= std::max<std::uint32_t>(e.unique_prefix, 1));
    const auto& leaf = nodes[e.leaf].leaf();
    CHECK(leaf.depth == e.depth);
    CHECK(leaf.index == identity_index(id));
  }
}

}  // namespace

TEST_CASE("empty tree is a single random leaf") {
  const auto t = build_tree({}, 5);
  REQUIRE(t.nodes().size() == 1);
  const auto& root = t.nodes()[t.root()];
  REQUIRE(root.is_leaf());
  CHECK(root.leaf().is_empty);
  CHECK(t.root_hash() == root.leaf().random_fill);
  CHECK_FALSE(t.root_hash().is_zero());
  CHECK(t.root_hash() == naive::root({}, 5));
}

TEST_CASE("singleton tree") {
  const auto t = build_tree(make_records(1), 5);
  const auto& e = t.entry("user-0");
  CHECK(e.unique_prefix == 0);
  CHECK(e.depth == 1);
  const auto poi = prove_inclusion(t, "user-0");
  CHECK(poi.depth == 1);
  CHECK(poi.siblings.size() == 1);
  CHECK(poi.hash_count() == 2);
  const auto& root = t.nodes()[t.root()];
  const auto& sib = t.nodes()[poi.siblings[0].side ? root.left : root.right];
  CHECK(sib.leaf().is_empty);
}

TEST_CASE("8-record tree matches the naive builder") {
  std::vector<naive::Rec> recs;
  for (int i = 0; i < 8; ++i)
    recs.push_back({"user-" + std::to_string(i), "pk" + std::to_string(i), {}, 0});
  for (std::uint64_t seed : {1ull, 42ull, 0xdeadbeefull}) {
    for (std::uint64_t epoch : {0ull, 7ull}) {
      const auto t = build_tree(make_records(8), seed, epoch);
      CHECK(t.root_hash() == naive::root(recs, seed, epoch));
    }
  }
}

TEST_CASE("naive builder agrees across sizes") {
  for (int n : {2, 3, 17, 64}) {
    std::vector<naive::Rec> recs;
    for (int i = 0; i < n; ++i)
      recs.push_back({"user-" + std::to_string(i), "pk" + std::to_string(i), {}, 0});
    CHECK(build_tree(make_records(n), 9, 3).root_hash() == naive::root(recs, 9, 3));
  }
}

TEST_CASE("tree shape invariants") {
  for (int n : {1, 2, 5, 8, 33, 200, 1024}) {
    const auto t = build_tree(make_records(n), static_cast<std::uint64_t>(n) * 31);
    CHECK(t.size() == static_cast<std::size_t>(n));
    check_shape(t);
  }
}

TEST_CASE("build is deterministic and seed sensitive") {
  const auto a = build_tree(make_records(20), 3);
  const auto b = build_tree(make_records(20), 3);
  CHECK(a.root_hash() == b.root_hash());
  CHECK(build_tree(make_records(20), 4).root_hash() != a.root_hash());
  CHECK(build_tree(make_records(20), 3, 1).root_hash() != a.root_hash());
  auto shuffled = make_records(20);
  std::reverse(shuffled.begin(), shuffled.end());
  CHECK(build_tree(shuffled, 3).root_hash() == a.root_hash());
}

TEST_CASE("build rejects bad records") {
  auto recs = make_records(3);
  recs.push_back(recs[1]);
  CHECK_THROWS_AS(build_tree(recs, 1), DuplicateClient);
  CHECK_THROWS_AS(build_tree({{"", key_bytes("x"), 0}}, 1), Error);
}

TEST_CASE("STR chain") {
  const auto& sk = server_key();
  const auto pub = sk.verifying_key();
  const auto g = generate_str(build_tree({}, 1, 0), std::nullopt, sk, 0);
  CHECK(g.prev_str_hash.is_zero());
  CHECK(verify_str(g, pub));

  std::vector<SignedTreeRoot> chain{g};
  for (Epoch e = 1; e <= 3; ++e)
    chain.push_back(generate_str(build_tree(make_records(4), 1, e), chain.back(), sk, e * 20));
  for (std::size_t i = 1; i < chain.size(); ++i) {
    CHECK(verify_str_chain(chain[i - 1], chain[i], pub));
    CHECK(chain[i].prev_str_hash == chain[i - 1].digest());
  }
  CHECK_FALSE(verify_str_chain(chain[0], chain[2], pub));

  auto tampered = chain[2];
  tampered.epoch = 9;
  CHECK_FALSE(verify_str(tampered, pub));

  auto forged = chain[2];
  forged.prev_str_hash.bytes[0] ^= 1;
  CHECK_FALSE(verify_str_chain(chain[1], forged, pub));

  CHECK_FALSE(verify_str(chain[1], crypto::KeyPair::from_seed(std::uint64_t{5}).verifying_key()));

  CHECK_THROWS_AS(generate_str(build_tree({}, 1, 5), chain.back(), sk, 0), EpochGap);
  CHECK_THROWS_AS(generate_str(build_tree({}, 1, 2), std::nullopt, sk, 0), EpochGap);

  CHECK(SignedTreeRoot::deserialize(chain[2].serialize()) == chain[2]);
  CHECK(chain[2].serialize().size() == 8 + 32 + 32 + 8 + 64);
}

TEST_CASE("mutating one STR breaks only its own links") {
  const auto& sk = server_key();
  std::vector<SignedTreeRoot> chain{generate_str(build_tree({}, 1, 0), std::nullopt, sk, 0)};
  for (Epoch e = 1; e < 6; ++e)
    chain.push_back(generate_str(build_tree(make_records(3), 1, e), chain.back(), sk, e));
  for (std::size_t m = 0; m < chain.size(); ++m) {
    auto copy = chain;
    copy[m].timestamp_ms += 1;
    for (std::size_t i = 1; i < copy.size(); ++i) {
      const bool touches = (i == m || i - 1 == m);
      CHECK(verify_str_chain(copy[i - 1], copy[i], sk.verifying_key()) == !touches);
    }
  }
}

TEST_CASE("inclusion proofs") {
  const auto& sk = server_key();
  const auto recs = make_records(8);
  const auto tree = build_tree(recs, 77, 0);
  const auto str = generate_str(tree, std::nullopt, sk, 0);

  for (const auto& r : recs) {
    const auto poi = prove_inclusion(tree, r.client_id);
    CHECK(verify_poi(str, poi, r.client_id, r.public_key, sk.verifying_key()));
    CHECK(ProofOfInclusion::deserialize(poi.serialize()) == poi);
    CHECK_FALSE(verify_poi(str, poi, r.client_id, key_bytes("other"), sk.verifying_key()));
    for (const auto& o : recs)
      if (o.client_id != r.client_id)
        CHECK_FALSE(verify_poi(str, poi, o.client_id, o.public_key, sk.verifying_key()));

    auto truncated = poi;
    truncated.siblings.erase(truncated.siblings.begin());
    truncated.nonces.erase(truncated.nonces.begin());
    truncated.depth -= 1;
    truncated.leaf.depth -= 1;
    CHECK_FALSE(verify_poi(str, truncated, r.client_id, r.public_key, sk.verifying_key()));
  }
  CHECK_THROWS_AS(prove_inclusion(tree, "nobody"), NotRegistered);
}

TEST_CASE("interior node cannot pose as a leaf") {
  const auto& sk = server_key();
  const auto tree = build_tree(make_records(64), 5, 0);
  const auto str = generate_str(tree, std::nullopt, sk, 0);
  const auto poi = prove_inclusion(tree, "user-3");
  // Drop the leaf level and present the parent interior as the leaf.
  ProofOfInclusion fake;
  fake.depth = poi.depth - 1;
  fake.leaf = poi.leaf;
  fake.leaf.depth = fake.depth;
  fake.siblings.assign(poi.siblings.begin() + 1, poi.siblings.end());
  fake.nonces.assign(poi.nonces.begin() + 1, poi.nonces.end());
  CHECK_FALSE(verify_poi(str, fake, "user-3", key_bytes("pk3"), sk.verifying_key()));
}

TEST_CASE("proof size for a 2^32 directory") {
  ProofOfInclusion p;
  p.depth = 32;
  p.siblings.resize(32);
  CHECK(p.hash_count() * crypto::kDigestSize == 1056);
}

TEST_CASE("key responses") {
  const auto& sk = server_key();
  const auto tree = build_tree(make_records(4), 2, 1);
  const auto g = generate_str(build_tree({}, 2, 0), std::nullopt, sk, 0);
  const auto str = generate_str(tree, g, sk, 20);

  KeyResponse r;
  r.client_id = "user-1";
  r.public_key = key_bytes("pk1");
  r.served_epoch = 1;
  r.served_at_us = 1234;
  r.str = str;
  r.poi = prove_inclusion(tree, "user-1");
  sign_key_response(r, sk);
  CHECK(verify_key_response(r, sk.verifying_key()));
  CHECK(r.has_proof());
  CHECK(KeyResponse::deserialize(r.serialize()) == r);

  auto bad = r;
  bad.public_key = key_bytes("pk2");
  CHECK_FALSE(verify_key_response(bad, sk.verifying_key()));
  bad = r;
  bad.served_at_us += 1;
  CHECK_FALSE(verify_key_response(bad, sk.verifying_key()));

  KeyResponse bare;
  bare.client_id = "user-1";
  bare.public_key = key_bytes("pk1");
  sign_key_response(bare, sk);
  CHECK(verify_key_response(bare, sk.verifying_key()));
  CHECK(KeyResponse::deserialize(bare.serialize()) == bare);
  CHECK_THROWS_AS(KeyResponse::deserialize(crypto::Bytes{1, 2}), DecodeError);
}

TEST_CASE("conflicting STR PoM") {
  const auto& sk = server_key();
  const auto pub = sk.verifying_key();
  const auto g = generate_str(build_tree({}, 1, 0), std::nullopt, sk, 0);
  const auto real = generate_str(build_tree(make_records(4), 1, 1), g, sk, 20);
  const auto fake = generate_str(build_tree(make_records(4, "fake"), 1, 1), g, sk, 20);

  CHECK_THROWS_AS(make_pom_conflict(real, real, pub), NotConflicting);
  const auto pom = make_pom_conflict(real, fake, pub);
  CHECK(pom.kind() == PomKind::ConflictingSTRs);
  CHECK(adjudicate(pom, pub));
  CHECK_FALSE(adjudicate(pom, crypto::KeyPair::from_seed(std::uint64_t{3}).verifying_key()));
  CHECK(ProofOfMisbehavior::deserialize(pom.serialize()) == pom);

  auto broken = fake;
  broken.signature.bytes[5] ^= 1;
  CHECK_THROWS_AS(make_pom_conflict(real, broken, pub), NotConflicting);

  const auto other_epoch = generate_str(build_tree(make_records(4, "x"), 1, 2), real, sk, 40);
  CHECK_THROWS_AS(make_pom_conflict(fake, other_epoch, pub), NotConflicting);
  ProofOfMisbehavior mismatched{ConflictEvidence{fake, other_epoch}};
  CHECK_FALSE(adjudicate(mismatched, pub));
}

TEST_CASE("duplicate key PoM") {
  const auto& sk = server_key();
  const auto pub = sk.verifying_key();
  auto resp = [&](const std::string& pk, std::uint64_t at) {
    KeyResponse r;
    r.client_id = "bob";
    r.public_key = key_bytes(pk);
    r.served_epoch = at / 1000;
    r.served_at_us = at;
    sign_key_response(r, sk);
    return r;
  };
  const auto k1 = resp("K1", 100);
  const auto kf = resp("Kf", 200);
  const auto k1b = resp("K1", 300);

  const auto pom = make_pom_duplicate(k1, kf, k1b, pub);
  CHECK(pom.kind() == PomKind::DuplicateKey);
  CHECK(adjudicate(pom, pub));
  CHECK(ProofOfMisbehavior::deserialize(pom.serialize()) == pom);

  CHECK_THROWS_AS(make_pom_duplicate(k1, resp("K2", 200), resp("K3", 300), pub), NotConflicting);
  CHECK_THROWS_AS(make_pom_duplicate(k1, kf, k1, pub), NotConflicting);
  CHECK_THROWS_AS(make_pom_duplicate(kf, k1, k1b, pub), NotConflicting);
  auto forged = k1b;
  forged.signature.bytes[0] ^= 1;
  CHECK_THROWS_AS(make_pom_duplicate(k1, kf, forged, pub), NotConflicting);
  auto other = resp("Kf", 200);
  other.client_id = "carol";
  sign_key_response(other, sk);
  CHECK_THROWS_AS(make_pom_duplicate(k1, other, k1b, pub), NotConflicting);
}

TEST_CASE("randomized proof mutations are rejected") {
  const auto& sk = server_key();
  std::mt19937_64 rng(17);
  const auto recs = make_records(64);
  const auto tree = build_tree(recs, 8, 0);
  const auto str = generate_str(tree, std::nullopt, sk, 0);
  int accepted = 0;
  for (int i = 0; i < 2000; ++i) {
    const auto& r = recs[rng() % recs.size()];
    auto poi = prove_inclusion(tree, r.client_id);
    auto pk = r.public_key;
    switch (rng() % 4) {
      case 0: pk.push_back(static_cast<std::uint8_t>(rng())); break;
      case 1: poi.siblings[rng() % poi.siblings.size()].sibling.bytes[rng() % 32] ^= 1; break;
      case 2: poi.nonces[rng() % poi.nonces.size()].bytes[rng() % 32] ^= 0x80; break;
      case 3: poi.leaf.nonce.bytes[rng() % 32] ^= 4; break;
    }
    accepted += verify_poi(str, poi, r.client_id, pk, sk.verifying_key());
  }
  CHECK(accepted == 0);
}

TEST_CASE("golden roots from the hashlib oracle") {
  // tests/oracles/tree_root.py N SEED EPOCH
  CHECK(build_tree(make_records(8), 42, 0).root_hash().hex() ==
        "a613e84ec4db3f8af924645ab284d6d87793d37cb793858b459dd1d6213b3aeb");
  CHECK(build_tree({}, 5, 0).root_hash().hex() ==
        "a7f35ba70277328f5d6c0ce27c8219707538646797f4307d767c4d40dac270fa");
  CHECK(build_tree(make_records(1), 5, 3).root_hash().hex() ==
        "5d86cde3d6f52d37105fe597ed2e27d2b473afdd8d36508ebc95012ae1b3d41a");
}
