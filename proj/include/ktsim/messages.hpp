#pragma once

// Wire messages exchanged in the simulator. Sizes used for traffic
// accounting come from wire_bytes(), not from sizeof.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "ktsim/transparency_log.hpp"

namespace ktsim::msg {

using log::Epoch;
using log::KeyResponse;
using log::ProofOfInclusion;
using log::ProofOfMisbehavior;
using log::SignedTreeRoot;

/// Epoch-start audit: STRs and own-key proofs for [from_epoch, to_epoch]
/// plus historic proofs for promised contact keys. from > to asks only for
/// queued key pushes.
struct AuditRequest {
  Epoch from_epoch = 0;
  Epoch to_epoch = 0;
  std::vector<std::pair<std::string, Epoch>> checks;
};

struct AuditEntry {
  SignedTreeRoot str;
  std::optional<ProofOfInclusion> own_poi;
};

struct HistoricProof {
  std::string subject;
  Epoch epoch = 0;
  std::optional<ProofOfInclusion> poi;
};

struct AuditReply {
  std::vector<AuditEntry> entries;
  std::vector<KeyResponse> pushes;  // updates queued while offline
  std::vector<HistoricProof> checks;
};

struct LookupRequest {
  std::string subject;
};

struct LookupReply {
  KeyResponse response;
};

struct KeyPush {
  KeyResponse response;
};

struct RegisterKey {
  crypto::Bytes public_key;
};

struct StrGossip {
  SignedTreeRoot str;
};

struct PomGossip {
  ProofOfMisbehavior pom;
};

/// Anonymous key request. Carries no sender field by construction.
struct AkrRequest {
  std::string subject;
};

struct AkrReply {
  KeyResponse response;
};

/// Anonymous STR request.
struct AsrRequest {};

struct AsrReply {
  SignedTreeRoot str;
};

/// Out-of-band "is this your key?" and the MAC-authenticated answer.
struct OobConfirm {
  crypto::Bytes public_key;
  crypto::MacTag tag;
};

struct OobReply {
  crypto::Bytes public_key;
  crypto::MacTag tag;
};

struct Probe {
  std::uint64_t nonce = 0;
};

struct ProbeReply {
  std::uint64_t nonce = 0;
};

/// Application traffic, encrypted to `recipient_key`.
struct AppMessage {
  crypto::Bytes recipient_key;
};

using Message =
    std::variant<AuditRequest, AuditReply, LookupRequest, LookupReply, KeyPush,
                 RegisterKey, StrGossip, PomGossip, AkrRequest, AkrReply,
                 AsrRequest, AsrReply, OobConfirm, OobReply, Probe, ProbeReply,
                 AppMessage>;

/// Traffic classes reported per client.
enum class Traffic : std::uint8_t {
  StrFetch,
  OwnPoi,
  HistoricPoi,
  StrExchange,
  Pom,
  Lookup,
  KeyPush,
  Akr,
  Asr,
  Oob,
  Isolation,
  App,
  Control,
  kCount
};

inline constexpr std::size_t kTrafficClasses = static_cast<std::size_t>(Traffic::kCount);

std::string to_string(Traffic t);

/// Byte sizes charged per message; defaults follow the published accounting.
struct WireSizes {
  std::size_t str_wire = 64;
  std::size_t hash = 32;
  std::size_t akr = 32000;
  std::size_t oob = 64;
  std::size_t probe = 16;
  std::size_t app = 256;
  std::size_t control = 16;
};

/// Charges for one message, split by traffic class.
std::vector<std::pair<Traffic, std::size_t>> wire_bytes(const Message& m,
                                                        const WireSizes& sizes);

}  // namespace ktsim::msg
