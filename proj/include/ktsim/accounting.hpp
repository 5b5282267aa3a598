#pragma once

// Closed-form per-client traffic and memory figures for the three defenses.
// All byte counts are integers; KB in reports means 1000 bytes.

#include <cstdint>
#include <string>
#include <vector>

namespace ktsim::accounting {

struct Params {
  std::uint64_t total_users = 4294967296ULL;  // N
  std::uint64_t updates_per_epoch = 2097152;  // n
  std::uint64_t contacts = 100;
  std::uint64_t str_wire_bytes = 64;
  std::uint64_t hash_bytes = 32;
  std::uint64_t sig_bytes = 64;
  std::uint64_t akr_bytes = 32000;
  std::uint64_t ktaca_extra_bytes = 1216;
  std::uint64_t monitor_epochs = 10;  // AKM m
  std::uint64_t epochs_per_month = 30;
  std::uint64_t new_contacts_per_month = 5;
  std::uint64_t updates_per_month = 1;
  std::uint64_t stored_str_bytes = 104;
  std::uint64_t prevention_bytes_per_contact = 48;
};

struct Line {
  std::string defense;
  std::string quantity;
  std::uint64_t bytes = 0;
  std::string formula;
};

struct Report {
  std::vector<Line> lines;
  std::vector<std::string> notes;

  /// Throws std::out_of_range when absent.
  std::uint64_t get(const std::string& defense, const std::string& quantity) const;
};

/// ceil(log2 x) for x >= 1.
std::uint64_t log2_ceil(std::uint64_t x);

Report closed_form(const Params& p);

/// Published KTACA epoch figure, rounded to 33.96 KB.
inline constexpr std::uint64_t kPublishedKtacaEpochBytes = 33960;

}  // namespace ktsim::accounting
