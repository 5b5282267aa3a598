#include "ktsim/accounting.hpp"

#include <stdexcept>

namespace ktsim::accounting {

std::uint64_t log2_ceil(std::uint64_t x) {
  std::uint64_t k = 0;
  while ((std::uint64_t{1} << k) < x && k < 63) ++k;
  return k;
}

std::uint64_t Report::get(const std::string& defense, const std::string& quantity) const {
  for (const auto& l : lines)
    if (l.defense == defense && l.quantity == quantity) return l.bytes;
  throw std::out_of_range(defense + "/" + quantity);
}

Report closed_form(const Params& p) {
  Report r;
  auto add = [&](std::string d, std::string q, std::uint64_t b, std::string f) {
    r.lines.push_back({std::move(d), std::move(q), b, std::move(f)});
  };
  const std::uint64_t log_n = log2_ceil(p.updates_per_epoch);
  const std::uint64_t log_total = log2_ceil(p.total_users);
  const std::uint64_t audit = p.str_wire_bytes + log_n * p.hash_bytes;
  const std::uint64_t exchange = p.str_wire_bytes * p.contacts;
  const std::uint64_t lookup = p.hash_bytes * (log_total + 1);
  const std::uint64_t month_lookups = p.new_contacts_per_month + p.updates_per_month;

  const std::uint64_t ktca_epoch = exchange + audit;
  add("KTCA", "str_and_poi_per_epoch", audit, "str + log2(n)*hash");
  add("KTCA", "str_exchange_per_epoch", exchange, "str * contacts");
  add("KTCA", "per_epoch", ktca_epoch, "str * contacts + str + log2(n)*hash");
  add("KTCA", "poi_lookup", lookup, "hash * (log2(N) + 1)");
  add("KTCA", "per_new_connection", lookup, "hash * (log2(N) + 1)");
  add("KTCA", "monthly", p.epochs_per_month * ktca_epoch + month_lookups * lookup,
      "epochs * per_epoch + (new contacts + updates) * poi_lookup");
  add("KTCA", "memory", p.stored_str_bytes, "one stored STR");
  add("KTCA", "memory_prevention",
      p.stored_str_bytes + p.prevention_bytes_per_contact * p.contacts,
      "stored STR + prevention state per contact");

  const std::uint64_t akm_conn = p.monitor_epochs * p.akr_bytes;
  add("AKM", "per_epoch", p.akr_bytes, "akr");
  add("AKM", "per_new_connection", akm_conn, "m * akr");
  add("AKM", "monthly", p.epochs_per_month * p.akr_bytes + month_lookups * akm_conn,
      "epochs * akr + (new contacts + updates) * m * akr");
  add("AKM", "memory", 0, "none beyond the key history");
  add("AKM", "memory_prevention", p.prevention_bytes_per_contact * p.contacts,
      "prevention state per contact");

  const std::uint64_t ktaca_epoch = p.ktaca_extra_bytes + audit + p.akr_bytes;
  add("KTACA", "per_epoch", ktaca_epoch, "1216 + str + log2(n)*hash + akr");
  add("KTACA", "per_new_connection", lookup, "hash * (log2(N) + 1)");
  add("KTACA", "monthly", p.epochs_per_month * ktaca_epoch + month_lookups * lookup,
      "epochs * per_epoch + (new contacts + updates) * poi_lookup");
  add("KTACA", "monthly_published_rounding",
      p.epochs_per_month * kPublishedKtacaEpochBytes + month_lookups * lookup,
      "as monthly, with the 33.96 KB epoch figure");
  add("KTACA", "memory", p.stored_str_bytes, "one stored STR");
  add("KTACA", "memory_prevention",
      p.stored_str_bytes + p.prevention_bytes_per_contact * p.contacts,
      "stored STR + prevention state per contact");

  if (ktaca_epoch != kPublishedKtacaEpochBytes)
    r.notes.push_back("KTACA per-epoch total is " + std::to_string(ktaca_epoch) +
                      " bytes; the published figure is 33.96 KB (rounded).");
  r.notes.push_back("AKM memory is listed as 0 in the published table; the simulator reports "
                    "the measured key-history bytes instead.");
  return r;
}

}  // namespace ktsim::accounting
