#include <random>
#include <set>

#include "doctest.h"
#include "ktsim/crypto.hpp"
#include "ktsim/error.hpp"

using namespace ktsim::crypto;

namespace {

Bytes random_bytes(std::mt19937_64& rng, std::size_t n) {
  Bytes b(n);
  for (auto& x : b) x = static_cast<std::uint8_t>(rng());
  return b;
}

}  // namespace

TEST_CASE("hash is deterministic and domain separated") {
  CHECK(hash(0x00, {}) == hash(0x00, {}));
  CHECK(hash(Domain::LeafNonce, as_bytes("abc")) !=
        hash(Domain::InteriorNonce, as_bytes("abc")));
  // SHA-256("\x00") as a fixed point for the framing.
  CHECK(hash(0x00, {}).hex() ==
        "6e340b9cffb37a989ca544e6bb780a2c78901d3fb33738768511a30617afa01d");
}

TEST_CASE("appending a zero byte changes the digest") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 10000; ++i) {
    Bytes m = random_bytes(rng, rng() % 64);
    Digest a = hash(Domain::LeafNode, m);
    m.push_back(0);
    REQUIRE(a != hash(Domain::LeafNode, m));
  }
}

TEST_CASE("no collisions over random pairs") {
  std::mt19937_64 rng(11);
  std::set<Digest> seen;
  std::set<Bytes> inputs;
  for (int i = 0; i < 200000; ++i) {
    Bytes m = random_bytes(rng, 1 + rng() % 40);
    if (!inputs.insert(m).second) continue;
    REQUIRE(seen.insert(hash(Domain::KeyBinding, m)).second);
  }
}

TEST_CASE("sign and verify") {
  auto k = KeyPair::from_seed(std::uint64_t{1});
  auto other = KeyPair::from_seed(std::uint64_t{2});
  const Bytes msg = {1, 2, 3, 4};
  const Signature sig = k.sign(msg);
  CHECK(verify(k.verifying_key(), msg, sig));
  CHECK_FALSE(verify(other.verifying_key(), msg, sig));
  Bytes flipped = msg;
  flipped[0] ^= 1;
  CHECK_FALSE(verify(k.verifying_key(), flipped, sig));
  CHECK(sign(k, msg) == sig);
  CHECK(KeyPair::from_seed(std::uint64_t{1}).verifying_key() == k.verifying_key());
}

TEST_CASE("single-bit mutations never verify") {
  std::mt19937_64 rng(3);
  auto k = KeyPair::from_seed(std::uint64_t{99});
  for (int i = 0; i < 300; ++i) {
    Bytes msg = random_bytes(rng, 1 + rng() % 100);
    Signature sig = k.sign(msg);
    REQUIRE(verify(k.verifying_key(), msg, sig));
    Bytes m2 = msg;
    m2[rng() % m2.size()] ^= static_cast<std::uint8_t>(1u << (rng() % 8));
    CHECK_FALSE(verify(k.verifying_key(), m2, sig));
    Signature s2 = sig;
    s2.bytes[rng() % s2.bytes.size()] ^= static_cast<std::uint8_t>(1u << (rng() % 8));
    CHECK_FALSE(verify(k.verifying_key(), msg, s2));
  }
}

TEST_CASE("mac round trip") {
  MacKey key{};
  key[0] = 9;
  const auto tag = mac(key, as_bytes("pk"));
  CHECK(mac_verify(key, as_bytes("pk"), tag));
  CHECK_FALSE(mac_verify(key, as_bytes("pk2"), tag));
  MacKey other = key;
  other[1] = 1;
  CHECK_FALSE(mac_verify(other, as_bytes("pk"), tag));
}

TEST_CASE("encoder framing") {
  Encoder e;
  e.u8(1).u32(2).u64(3).var(as_bytes("ab"));
  CHECK(e.size() == 1 + 4 + 8 + 4 + 2);
  const Bytes b = e.bytes();
  CHECK(to_hex(b) == "01000000020000000000000003000000026162");

  Decoder d(b);
  CHECK(d.u8() == 1);
  CHECK(d.u32() == 2);
  CHECK(d.u64() == 3);
  CHECK(d.var_string() == "ab");
  CHECK(d.done());
  CHECK_THROWS_AS(d.u8(), ktsim::DecodeError);

  // "a"+"bc" and "ab"+"c" frame differently.
  CHECK(Encoder().var(std::string_view("a")).var(std::string_view("bc")).bytes() !=
        Encoder().var(std::string_view("ab")).var(std::string_view("c")).bytes());
}

TEST_CASE("hex helpers") {
  CHECK(from_hex("00ff10") == Bytes{0x00, 0xff, 0x10});
  CHECK_THROWS_AS(from_hex("abc"), ktsim::DecodeError);
  CHECK_THROWS_AS(from_hex("zz"), ktsim::DecodeError);
}

TEST_CASE("seed derivation separates streams") {
  CHECK(derive_seed(1, "churn") != derive_seed(1, "delays"));
  CHECK(derive_seed(1, "trial", 0) != derive_seed(1, "trial", 1));
  CHECK(derive_seed(5, "x") == derive_seed(5, "x"));
}
