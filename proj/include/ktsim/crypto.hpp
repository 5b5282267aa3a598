#pragma once

// Hashing, signatures and byte framing shared by every other module.
//
// All hash inputs go through Encoder so that variable-length fields are
// 4-byte big-endian length prefixed and integers are 8-byte big-endian.
// Digest and Signature sizes are fixed at 32 and 64 bytes; the traffic
// accounting relies on those numbers.

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ktsim::crypto {

inline constexpr std::size_t kDigestSize = 32;
inline constexpr std::size_t kSignatureSize = 64;
inline constexpr std::size_t kVerifyingKeySize = 32;
inline constexpr std::size_t kMacKeySize = 32;

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

/// Domain separation tags prepended to every hash input.
enum class Domain : std::uint8_t {
  LeafNonce = 0x00,
  InteriorNonce = 0x01,
  IdentityIndex = 0x02,
  KeyBinding = 0x03,
  LeafNode = 0x04,
  InteriorNode = 0x05,
  EmptyLeaf = 0x06,
  TreeRootPayload = 0x07,
  TreeRootDigest = 0x08,
  KeyResponsePayload = 0x09,
  DepthDraw = 0x0a,
  SeedDerivation = 0x0b,
};

struct Digest {
  std::array<std::uint8_t, kDigestSize> bytes{};

  static Digest zero() { return {}; }
  bool is_zero() const;
  /// Bit `i` counted from the most significant bit of byte 0.
  bool bit(std::size_t i) const {
    return (bytes[i / 8] >> (7 - i % 8)) & 1u;
  }
  /// First 8 bytes read big-endian.
  std::uint64_t prefix_u64() const;
  std::string hex() const;
  ByteView view() const { return bytes; }

  auto operator<=>(const Digest&) const = default;
};

struct Signature {
  std::array<std::uint8_t, kSignatureSize> bytes{};
  ByteView view() const { return bytes; }
  auto operator<=>(const Signature&) const = default;
};

struct VerifyingKey {
  std::array<std::uint8_t, kVerifyingKeySize> bytes{};
  ByteView view() const { return bytes; }
  auto operator<=>(const VerifyingKey&) const = default;
};

/// Ed25519 key pair. Deterministic when built from a seed.
class KeyPair {
 public:
  static KeyPair from_seed(const Digest& seed);
  static KeyPair from_seed(std::uint64_t seed);

  const VerifyingKey& verifying_key() const { return verifying_; }
  Signature sign(ByteView message) const;

 private:
  Digest seed_;
  VerifyingKey verifying_;
};

/// SHA-256 over (tag || payload).
Digest hash(std::uint8_t domain_tag, ByteView payload);
inline Digest hash(Domain domain, ByteView payload) {
  return hash(static_cast<std::uint8_t>(domain), payload);
}

Signature sign(const KeyPair& key, ByteView message);
bool verify(const VerifyingKey& pub, ByteView message, const Signature& sig);

using MacKey = std::array<std::uint8_t, kMacKeySize>;
using MacTag = Digest;

MacTag mac(const MacKey& key, ByteView message);
bool mac_verify(const MacKey& key, ByteView message, const MacTag& tag);

/// Derives a 64-bit seed for a named substream, e.g. derive_seed(s, "churn").
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream);
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream,
                          std::uint64_t index);

/// Length-prefixed big-endian framing for hash and signature inputs.
class Encoder {
 public:
  Encoder& u8(std::uint8_t v);
  Encoder& u32(std::uint32_t v);
  Encoder& u64(std::uint64_t v);
  /// Variable-length field: 4-byte length, then the bytes.
  Encoder& var(ByteView data);
  Encoder& var(std::string_view data);
  /// Fixed-size field written raw.
  Encoder& raw(ByteView data);
  Encoder& digest(const Digest& d) { return raw(d.view()); }

  const Bytes& bytes() const& { return out_; }
  Bytes bytes() && { return std::move(out_); }
  std::size_t size() const { return out_.size(); }

 private:
  Bytes out_;
};

/// Reader for Encoder output. Throws DecodeError on truncated input.
class Decoder {
 public:
  explicit Decoder(ByteView data) : data_(data) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  Bytes var();
  std::string var_string();
  Digest digest();
  Signature signature();
  bool done() const { return pos_ == data_.size(); }

 private:
  ByteView take(std::size_t n);
  ByteView data_;
  std::size_t pos_ = 0;
};

std::string to_hex(ByteView data);
Bytes from_hex(std::string_view hex);

inline ByteView as_bytes(std::string_view s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

}  // namespace ktsim::crypto
