#include "ktsim/messages.hpp"

namespace ktsim::msg {

std::string to_string(Traffic t) {
  switch (t) {
    case Traffic::StrFetch: return "str_fetch";
    case Traffic::OwnPoi: return "own_poi";
    case Traffic::HistoricPoi: return "historic_poi";
    case Traffic::StrExchange: return "str_exchange";
    case Traffic::Pom: return "pom";
    case Traffic::Lookup: return "lookup";
    case Traffic::KeyPush: return "key_push";
    case Traffic::Akr: return "akr";
    case Traffic::Asr: return "asr";
    case Traffic::Oob: return "oob";
    case Traffic::Isolation: return "isolation";
    case Traffic::App: return "app";
    case Traffic::Control: return "control";
    case Traffic::kCount: break;
  }
  return "?";
}

namespace {

struct Charger {
  const WireSizes& s;
  std::vector<std::pair<Traffic, std::size_t>> out;

  void add(Traffic t, std::size_t n) { out.emplace_back(t, n); }
  std::size_t bare_response() const { return s.hash + s.str_wire; }

  void operator()(const AuditRequest&) { add(Traffic::Control, s.control); }
  void operator()(const AuditReply& r) {
    for (const auto& e : r.entries) {
      add(Traffic::StrFetch, s.str_wire);
      if (e.own_poi) add(Traffic::OwnPoi, s.hash * e.own_poi->depth);
    }
    for (std::size_t i = 0; i < r.pushes.size(); ++i) add(Traffic::KeyPush, bare_response());
    for (const auto& c : r.checks)
      if (c.poi) add(Traffic::HistoricPoi, s.hash * c.poi->hash_count());
  }
  void operator()(const LookupRequest&) { add(Traffic::Control, s.control); }
  void operator()(const LookupReply& r) {
    const auto& poi = r.response.poi;
    add(Traffic::Lookup, poi ? s.hash * poi->hash_count() : bare_response());
  }
  void operator()(const KeyPush&) { add(Traffic::KeyPush, bare_response()); }
  void operator()(const RegisterKey&) { add(Traffic::Control, s.control); }
  void operator()(const StrGossip&) { add(Traffic::StrExchange, s.str_wire); }
  void operator()(const PomGossip& p) { add(Traffic::Pom, p.pom.serialize().size()); }
  void operator()(const AkrRequest&) { add(Traffic::Akr, s.akr); }
  void operator()(const AkrReply&) {}
  void operator()(const AsrRequest&) { add(Traffic::Asr, s.akr); }
  void operator()(const AsrReply&) {}
  void operator()(const OobConfirm&) { add(Traffic::Oob, s.oob); }
  void operator()(const OobReply&) { add(Traffic::Oob, s.oob); }
  void operator()(const Probe&) { add(Traffic::Isolation, s.probe); }
  void operator()(const ProbeReply&) { add(Traffic::Isolation, s.probe); }
  void operator()(const AppMessage&) { add(Traffic::App, s.app); }
};

}  // namespace

std::vector<std::pair<Traffic, std::size_t>> wire_bytes(const Message& m,
                                                        const WireSizes& sizes) {
  Charger c{sizes, {}};
  std::visit(c, m);
  return std::move(c.out);
}

}  // namespace ktsim::msg
