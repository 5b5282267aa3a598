#include "ktsim/crypto.hpp"

#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/hmac.h>

#include <cstring>
#include <memory>
#include <stdexcept>
#include <unordered_map>

#include "ktsim/error.hpp"

namespace ktsim::crypto {
namespace {

struct DigestHasher {
  std::size_t operator()(const Digest& d) const noexcept {
    return static_cast<std::size_t>(d.prefix_u64());
  }
};

struct PkeyDeleter {
  void operator()(EVP_PKEY* p) const noexcept { EVP_PKEY_free(p); }
};
struct MdCtxDeleter {
  void operator()(EVP_MD_CTX* p) const noexcept { EVP_MD_CTX_free(p); }
};
using PkeyPtr = std::unique_ptr<EVP_PKEY, PkeyDeleter>;
using MdCtxPtr = std::unique_ptr<EVP_MD_CTX, MdCtxDeleter>;

// Bounded memo tables. Every entry is the output of a pure function of its
// key, so dropping the whole table when it fills is always safe.
template <class V>
class Memo {
 public:
  explicit Memo(std::size_t cap) : cap_(cap) {}
  const V* find(const Digest& k) const {
    auto it = map_.find(k);
    return it == map_.end() ? nullptr : &it->second;
  }
  const V& put(const Digest& k, V v) {
    if (map_.size() >= cap_) map_.clear();
    return map_.insert_or_assign(k, std::move(v)).first->second;
  }

 private:
  std::size_t cap_;
  std::unordered_map<Digest, V, DigestHasher> map_;
};

EVP_MD_CTX* sha_ctx() {
  thread_local MdCtxPtr ctx{EVP_MD_CTX_new()};
  return ctx.get();
}

const EVP_MD* sha256_md() {
  static const EVP_MD* md = EVP_sha256();
  return md;
}

[[noreturn]] void fail(const char* what) {
  throw Error(std::string("crypto backend failure: ") + what);
}

EVP_PKEY* private_key_for(const Digest& seed) {
  thread_local Memo<std::shared_ptr<EVP_PKEY>> keys(4096);
  if (auto* hit = keys.find(seed)) return hit->get();
  EVP_PKEY* raw = EVP_PKEY_new_raw_private_key(EVP_PKEY_ED25519, nullptr,
                                               seed.bytes.data(),
                                               seed.bytes.size());
  if (raw == nullptr) fail("ed25519 private key");
  return keys.put(seed, std::shared_ptr<EVP_PKEY>(raw, PkeyDeleter{})).get();
}

EVP_PKEY* public_key_for(const VerifyingKey& pub) {
  thread_local Memo<std::shared_ptr<EVP_PKEY>> keys(4096);
  Digest k;
  std::memcpy(k.bytes.data(), pub.bytes.data(), k.bytes.size());
  if (auto* hit = keys.find(k)) return hit->get();
  EVP_PKEY* raw = EVP_PKEY_new_raw_public_key(EVP_PKEY_ED25519, nullptr,
                                              pub.bytes.data(),
                                              pub.bytes.size());
  if (raw == nullptr) return nullptr;
  return keys.put(k, std::shared_ptr<EVP_PKEY>(raw, PkeyDeleter{})).get();
}

}  // namespace

bool Digest::is_zero() const {
  for (auto b : bytes)
    if (b != 0) return false;
  return true;
}

std::uint64_t Digest::prefix_u64() const {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = (v << 8) | bytes[i];
  return v;
}

std::string Digest::hex() const { return to_hex(bytes); }

Digest hash(std::uint8_t domain_tag, ByteView payload) {
  EVP_MD_CTX* ctx = sha_ctx();
  Digest out;
  unsigned int len = 0;
  if (EVP_DigestInit_ex(ctx, sha256_md(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, &domain_tag, 1) != 1 ||
      EVP_DigestUpdate(ctx, payload.data(), payload.size()) != 1 ||
      EVP_DigestFinal_ex(ctx, out.bytes.data(), &len) != 1 ||
      len != kDigestSize)
    fail("sha256");
  return out;
}

KeyPair KeyPair::from_seed(const Digest& seed) {
  thread_local Memo<VerifyingKey> pubs(4096);
  KeyPair kp;
  kp.seed_ = seed;
  if (auto* hit = pubs.find(seed)) {
    kp.verifying_ = *hit;
    return kp;
  }
  std::size_t len = kVerifyingKeySize;
  if (EVP_PKEY_get_raw_public_key(private_key_for(seed),
                                  kp.verifying_.bytes.data(), &len) != 1 ||
      len != kVerifyingKeySize)
    fail("ed25519 public key");
  pubs.put(seed, kp.verifying_);
  return kp;
}

KeyPair KeyPair::from_seed(std::uint64_t seed) {
  return from_seed(hash(Domain::SeedDerivation, Encoder().u64(seed).bytes()));
}

Signature KeyPair::sign(ByteView message) const {
  // Ed25519 is deterministic, so (seed, message) fully determines the output.
  thread_local Memo<Signature> memo(1 << 16);
  const Digest key =
      hash(Domain::SeedDerivation, Encoder().digest(seed_).var(message).bytes());
  if (auto* hit = memo.find(key)) return *hit;

  thread_local MdCtxPtr ctx{EVP_MD_CTX_new()};
  Signature sig;
  std::size_t len = kSignatureSize;
  EVP_MD_CTX_reset(ctx.get());
  if (EVP_DigestSignInit(ctx.get(), nullptr, nullptr, nullptr,
                         private_key_for(seed_)) != 1 ||
      EVP_DigestSign(ctx.get(), sig.bytes.data(), &len, message.data(),
                     message.size()) != 1 ||
      len != kSignatureSize)
    fail("ed25519 sign");
  return memo.put(key, sig);
}

Signature sign(const KeyPair& key, ByteView message) { return key.sign(message); }

bool verify(const VerifyingKey& pub, ByteView message, const Signature& sig) {
  thread_local Memo<bool> memo(1 << 18);
  const Digest key = hash(Domain::SeedDerivation, Encoder()
                                                      .raw(pub.view())
                                                      .raw(sig.view())
                                                      .var(message)
                                                      .bytes());
  if (auto* hit = memo.find(key)) return *hit;

  EVP_PKEY* pkey = public_key_for(pub);
  bool ok = false;
  if (pkey != nullptr) {
    thread_local MdCtxPtr ctx{EVP_MD_CTX_new()};
    EVP_MD_CTX_reset(ctx.get());
    ok = EVP_DigestVerifyInit(ctx.get(), nullptr, nullptr, nullptr, pkey) == 1 &&
         EVP_DigestVerify(ctx.get(), sig.bytes.data(), sig.bytes.size(),
                          message.data(), message.size()) == 1;
  }
  return memo.put(key, ok);
}

MacTag mac(const MacKey& key, ByteView message) {
  MacTag tag;
  unsigned int len = 0;
  if (HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()),
           message.data(), message.size(), tag.bytes.data(), &len) == nullptr ||
      len != kDigestSize)
    fail("hmac");
  return tag;
}

bool mac_verify(const MacKey& key, ByteView message, const MacTag& tag) {
  const MacTag expect = mac(key, message);
  return CRYPTO_memcmp(expect.bytes.data(), tag.bytes.data(), kDigestSize) == 0;
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view stream) {
  return hash(Domain::SeedDerivation, Encoder().u64(master).var(stream).bytes())
      .prefix_u64();
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view stream,
                          std::uint64_t index) {
  return hash(Domain::SeedDerivation,
              Encoder().u64(master).var(stream).u64(index).bytes())
      .prefix_u64();
}

Encoder& Encoder::u8(std::uint8_t v) {
  out_.push_back(v);
  return *this;
}

Encoder& Encoder::u32(std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out_.push_back(static_cast<std::uint8_t>(v >> s));
  return *this;
}

Encoder& Encoder::u64(std::uint64_t v) {
  for (int s = 56; s >= 0; s -= 8) out_.push_back(static_cast<std::uint8_t>(v >> s));
  return *this;
}

Encoder& Encoder::var(ByteView data) {
  u32(static_cast<std::uint32_t>(data.size()));
  return raw(data);
}

Encoder& Encoder::var(std::string_view data) { return var(as_bytes(data)); }

Encoder& Encoder::raw(ByteView data) {
  out_.insert(out_.end(), data.begin(), data.end());
  return *this;
}

ByteView Decoder::take(std::size_t n) {
  if (data_.size() - pos_ < n) throw DecodeError("truncated input");
  auto v = data_.subspan(pos_, n);
  pos_ += n;
  return v;
}

std::uint8_t Decoder::u8() { return take(1)[0]; }

std::uint32_t Decoder::u32() {
  std::uint32_t v = 0;
  for (auto b : take(4)) v = (v << 8) | b;
  return v;
}

std::uint64_t Decoder::u64() {
  std::uint64_t v = 0;
  for (auto b : take(8)) v = (v << 8) | b;
  return v;
}

Bytes Decoder::var() {
  const auto n = u32();
  auto v = take(n);
  return {v.begin(), v.end()};
}

std::string Decoder::var_string() {
  auto b = var();
  return {b.begin(), b.end()};
}

Digest Decoder::digest() {
  Digest d;
  auto v = take(kDigestSize);
  std::copy(v.begin(), v.end(), d.bytes.begin());
  return d;
}

Signature Decoder::signature() {
  Signature s;
  auto v = take(kSignatureSize);
  std::copy(v.begin(), v.end(), s.bytes.begin());
  return s;
}

std::string to_hex(ByteView data) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s;
  s.reserve(data.size() * 2);
  for (auto b : data) {
    s.push_back(kDigits[b >> 4]);
    s.push_back(kDigits[b & 0xf]);
  }
  return s;
}

Bytes from_hex(std::string_view hex) {
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw DecodeError("bad hex digit");
  };
  if (hex.size() % 2 != 0) throw DecodeError("odd-length hex");
  Bytes out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<std::uint8_t>(nibble(hex[2 * i]) << 4 | nibble(hex[2 * i + 1]));
  return out;
}

}  // namespace ktsim::crypto
