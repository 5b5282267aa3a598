#include "ktsim/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "ktsim/crypto.hpp"
#include "ktsim/error.hpp"
#include "ktsim/predict.hpp"

#ifndef KTSIM_SCENARIO_DIR
#define KTSIM_SCENARIO_DIR "scenarios"
#endif

namespace ktsim::scenario {

using nlohmann::json;
using sim::Epoch;

namespace {

json scalar_to_json(const YAML::Node& n) {
  const std::string& s = n.Scalar();
  if (n.Tag() == "!") return s;  // quoted
  if (s == "~" || s == "null" || s == "Null" || s == "NULL") return nullptr;
  if (s == "true" || s == "True" || s == "TRUE") return true;
  if (s == "false" || s == "False" || s == "FALSE") return false;
  if (!s.empty()) {
    std::size_t pos = 0;
    try {
      if (s.find_first_of(".eE") == std::string::npos) {
        if (s[0] == '-') {
          const long long v = std::stoll(s, &pos);
          if (pos == s.size()) return v;
        } else {
          const unsigned long long v = std::stoull(s, &pos);
          if (pos == s.size()) return v;
        }
      }
      pos = 0;
      const double d = std::stod(s, &pos);
      if (pos == s.size()) return d;
    } catch (const std::exception&) {
    }
  }
  return s;
}

json node_to_json(const YAML::Node& n) {
  switch (n.Type()) {
    case YAML::NodeType::Null:
    case YAML::NodeType::Undefined:
      return nullptr;
    case YAML::NodeType::Scalar:
      return scalar_to_json(n);
    case YAML::NodeType::Sequence: {
      json a = json::array();
      for (const auto& c : n) a.push_back(node_to_json(c));
      return a;
    }
    case YAML::NodeType::Map: {
      json o = json::object();
      for (const auto& kv : n) {
        const std::string k = kv.first.as<std::string>();
        if (o.contains(k)) throw ConfigInvalid(k, "duplicate key");
        o[k] = node_to_json(kv.second);
      }
      return o;
    }
  }
  return nullptr;
}

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

// Strict view of one JSON object: every key must be read before done().
class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigInvalid(path_.empty() ? "scenario" : path_, "expected a table");
  }

  bool has(const std::string& k) {
    used_.insert(k);
    return j_.contains(k) && !j_.at(k).is_null();
  }
  const json& raw(const std::string& k) {
    used_.insert(k);
    return j_.at(k);
  }
  std::string field(const std::string& k) const { return join(path_, k); }

  std::string str(const std::string& k, std::optional<std::string> def = std::nullopt) {
    if (!has(k)) return required(k, def);
    const json& v = j_.at(k);
    if (!v.is_string()) throw ConfigInvalid(field(k), "expected a string");
    return v.get<std::string>();
  }
  double num(const std::string& k, std::optional<double> def = std::nullopt) {
    if (!has(k)) return required(k, def);
    const json& v = j_.at(k);
    if (!v.is_number()) throw ConfigInvalid(field(k), "expected a number");
    return v.get<double>();
  }
  std::int64_t integer(const std::string& k, std::optional<std::int64_t> def = std::nullopt) {
    if (!has(k)) return required(k, def);
    return as_int(j_.at(k), field(k));
  }
  std::uint64_t uint(const std::string& k, std::optional<std::uint64_t> def = std::nullopt) {
    if (!has(k)) return required(k, def);
    const json& v = j_.at(k);
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    const auto i = as_int(v, field(k));
    if (i < 0) throw ConfigInvalid(field(k), "must be non-negative");
    return static_cast<std::uint64_t>(i);
  }
  bool boolean(const std::string& k, std::optional<bool> def = std::nullopt) {
    if (!has(k)) return required(k, def);
    const json& v = j_.at(k);
    if (!v.is_boolean()) throw ConfigInvalid(field(k), "expected true or false");
    return v.get<bool>();
  }
  Obj sub(const std::string& k) { return Obj(raw(k), field(k)); }

  void done() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) throw ConfigInvalid(field(it.key()), "unknown key");
  }

  static std::int64_t as_int(const json& v, const std::string& f) {
    if (v.is_number_integer()) return v.get<std::int64_t>();
    if (v.is_number_float()) {
      const double d = v.get<double>();
      if (std::floor(d) == d && std::abs(d) < 9.0e15) return static_cast<std::int64_t>(d);
    }
    throw ConfigInvalid(f, "expected an integer");
  }

 private:
  template <class T>
  T required(const std::string& k, const std::optional<T>& def) const {
    if (!def) throw ConfigInvalid(field(k), "missing");
    return *def;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

std::string param_text(const json& v, const std::string& f) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
  if (v.is_number_float()) {
    std::ostringstream os;
    os.precision(17);
    os << v.get<double>();
    return os.str();
  }
  if (v.is_array()) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) out += ";";
      out += param_text(v[i], f);
    }
    return out;
  }
  throw ConfigInvalid(f, "unsupported parameter value");
}

sim::Topology parse_topology(Obj o, std::uint64_t seed) {
  const std::string kind = o.str("kind");
  sim::Topology t;
  if (kind == "ring" || kind == "star") {
    const auto n = o.integer("n");
    if (n < 2 || n > 100000) throw ConfigInvalid(o.field("n"), "out of range");
    t = kind == "ring" ? sim::Topology::ring(static_cast<int>(n))
                       : sim::Topology::star(static_cast<int>(n));
  } else if (kind == "gnp") {
    const auto n = o.integer("n");
    const double p = o.num("p");
    if (n < 2 || n > 100000) throw ConfigInvalid(o.field("n"), "out of range");
    if (p <= 0.0 || p > 1.0) throw ConfigInvalid(o.field("p"), "must be in (0, 1]");
    t = sim::Topology::gnp(static_cast<int>(n), p, crypto::derive_seed(seed, "topology"));
  } else if (kind == "explicit") {
    std::vector<std::string> nodes;
    const json& jn = o.raw("nodes");
    if (!jn.is_array()) throw ConfigInvalid(o.field("nodes"), "expected a list");
    for (const auto& x : jn) {
      if (!x.is_string()) throw ConfigInvalid(o.field("nodes"), "expected client names");
      nodes.push_back(x.get<std::string>());
    }
    std::vector<std::pair<std::string, std::string>> edges;
    if (o.has("edges")) {
      const json& je = o.raw("edges");
      if (!je.is_array()) throw ConfigInvalid(o.field("edges"), "expected a list of pairs");
      for (const auto& e : je) {
        if (!e.is_array() || e.size() != 2 || !e[0].is_string() || !e[1].is_string())
          throw ConfigInvalid(o.field("edges"), "expected [a, b] pairs");
        edges.emplace_back(e[0].get<std::string>(), e[1].get<std::string>());
      }
    }
    t = sim::Topology::explicit_graph(std::move(nodes), edges);
  } else {
    throw ConfigInvalid(o.field("kind"), "expected ring, star, gnp or explicit");
  }
  o.done();
  return t;
}

std::pair<std::string, std::string> parse_pair(const json& v, const std::string& f) {
  if (!v.is_array() || v.size() != 2 || !v[0].is_string() || !v[1].is_string())
    throw ConfigInvalid(f, "expected [a, b]");
  return {v[0].get<std::string>(), v[1].get<std::string>()};
}

server::AdversaryStrategy parse_adversary(Obj o, const sim::ClockConfig& clock) {
  server::AdversaryStrategy a;
  try {
    a.kind = server::parse_attack_kind(o.str("kind", "Honest"));
  } catch (const Error& e) {
    throw ConfigInvalid(o.field("kind"), e.what());
  }
  a.target = o.str("target", "");
  a.peer = o.str("peer", "");
  if (o.has("scope")) {
    try {
      a.scope = server::parse_scope(o.str("scope"));
    } catch (const Error& e) {
      throw ConfigInvalid(o.field("scope"), e.what());
    }
  }
  a.equivocate = o.boolean("equivocate", false);
  const auto start = o.integer("start_epoch", 1);
  if (start < 1) throw ConfigInvalid(o.field("start_epoch"), "must be at least 1");
  a.start_epoch = static_cast<Epoch>(start);
  if (o.has("partition")) {
    Obj p = o.sub("partition");
    server::Partition part;
    const json& cut = p.raw("cut");
    if (!cut.is_array()) throw ConfigInvalid(p.field("cut"), "expected a list of pairs");
    for (const auto& e : cut) part.cut.push_back(parse_pair(e, p.field("cut")));
    part.views_follow_partition = p.boolean("views_follow_partition", true);
    p.done();
    a.partition = part;
  }
  if (o.has("short_lived")) {
    Obj s = o.sub("short_lived");
    const double ms = s.num("restore_after_ms");
    if (ms <= 0.0) throw ConfigInvalid(s.field("restore_after_ms"), "must be positive");
    a.short_lived_restore_after = sim::ms_to_us(ms);
    s.done();
  }
  if (o.has("stealthy_update_rate")) a.stealthy_update_rate = o.num("stealthy_update_rate");
  if (o.has("coverage")) {
    Obj c = o.sub("coverage");
    server::Coverage cov;
    cov.f = static_cast<int>(c.integer("f"));
    cov.r = static_cast<int>(c.integer("r"));
    c.done();
    a.coverage = cov;
  }
  a.withhold = o.boolean("withhold", false);
  a.isolate = o.boolean("isolate", false);
  a.drop_oob = o.boolean("drop_oob", false);
  o.done();
  (void)clock;
  return a;
}

client::MonitorPolicy parse_monitor(Obj o) {
  client::MonitorPolicy m;
  m.m = static_cast<int>(o.integer("m", m.m));
  m.gossip_dedup = o.boolean("gossip_dedup", m.gossip_dedup);
  if (o.has("mass_update")) {
    Obj u = o.sub("mass_update");
    m.mass_update = u.boolean("enabled", m.mass_update);
    m.mass_update_fraction = u.num("fraction", m.mass_update_fraction);
    m.mass_update_window = static_cast<int>(u.integer("window_epochs", m.mass_update_window));
    m.mass_update_min_count = static_cast<int>(u.integer("min_count", m.mass_update_min_count));
    u.done();
  }
  if (o.has("isolation")) {
    Obj i = o.sub("isolation");
    m.isolation = i.boolean("enabled", m.isolation);
    m.isolation_subintervals = static_cast<int>(i.integer("subintervals", m.isolation_subintervals));
    i.done();
  }
  o.done();
  return m;
}

accounting::Params parse_accounting(Obj o) {
  accounting::Params p;
  p.akr_bytes = o.uint("akr_bytes", p.akr_bytes);
  p.str_wire_bytes = o.uint("str_wire_bytes", p.str_wire_bytes);
  p.hash_bytes = o.uint("hash_bytes", p.hash_bytes);
  p.sig_bytes = o.uint("sig_bytes", p.sig_bytes);
  p.total_users = o.uint("N_total", p.total_users);
  p.updates_per_epoch = o.uint("n_updates_per_epoch", p.updates_per_epoch);
  p.contacts = o.uint("contacts", p.contacts);
  p.ktaca_extra_bytes = o.uint("ktaca_extra_bytes", p.ktaca_extra_bytes);
  p.epochs_per_month = o.uint("epochs_per_month", p.epochs_per_month);
  p.new_contacts_per_month = o.uint("new_contacts_per_month", p.new_contacts_per_month);
  p.updates_per_month = o.uint("updates_per_month", p.updates_per_month);
  p.stored_str_bytes = o.uint("stored_str_bytes", p.stored_str_bytes);
  p.prevention_bytes_per_contact =
      o.uint("prevention_bytes_per_contact", p.prevention_bytes_per_contact);
  o.done();
  if (p.total_users < 1) throw ConfigInvalid(o.field("N_total"), "must be at least 1");
  if (p.updates_per_epoch < 1)
    throw ConfigInvalid(o.field("n_updates_per_epoch"), "must be at least 1");
  if (p.hash_bytes < 1) throw ConfigInvalid(o.field("hash_bytes"), "must be at least 1");
  return p;
}

Expectation parse_expectation(Obj o) {
  Expectation e;
  e.metric = o.str("metric");
  int kinds = 0;
  if (o.has("equals")) {
    e.kind = Expectation::Kind::Equals;
    e.value = o.num("equals");
    e.tolerance = o.num("tolerance", 0.0);
    ++kinds;
  }
  if (o.has("min")) {
    e.kind = Expectation::Kind::Min;
    e.value = o.num("min");
    ++kinds;
  }
  if (o.has("max")) {
    e.kind = Expectation::Kind::Max;
    e.value = o.num("max");
    ++kinds;
  }
  if (o.has("predict")) {
    e.kind = Expectation::Kind::Predict;
    Obj p = o.sub("predict");
    e.defense = p.str("defense");
    const json& all = o.raw("predict");
    for (auto it = all.begin(); it != all.end(); ++it) {
      if (it.key() == "defense") continue;
      e.params[it.key()] = param_text(it.value(), p.field(it.key()));
      p.raw(it.key());
    }
    p.done();
    if (o.has("tolerance")) e.tolerance = o.num("tolerance");
    try {
      e.value = predict::evaluate(e.defense, e.params).value;
    } catch (const ConfigInvalid& ex) {
      throw ConfigInvalid(p.field(ex.field()), ex.what());
    } catch (const Error& ex) {
      throw ConfigInvalid(p.field("defense"), ex.what());
    }
    ++kinds;
  }
  if (kinds != 1)
    throw ConfigInvalid(o.field("metric"), "need exactly one of equals, min, max, predict");
  if (e.tolerance && *e.tolerance < 0.0) throw ConfigInvalid(o.field("tolerance"), "negative");
  o.done();
  return e;
}

}  // namespace

json yaml_to_json(const std::string& text) {
  try {
    return node_to_json(YAML::Load(text));
  } catch (const YAML::Exception& e) {
    throw ConfigInvalid("scenario", std::string("parse error: ") + e.what());
  }
}

Scenario from_json(const json& j) {
  Scenario s;
  s.source = j;
  Obj o(j, "");
  s.name = o.str("name");
  s.description = o.str("description", "");
  auto& c = s.sim;
  c.name = s.name;
  c.seed = o.uint("seed", 1);
  try {
    c.defense = client::parse_defense(o.str("defense"));
  } catch (const ConfigInvalid&) {
    throw;
  } catch (const Error& e) {
    throw ConfigInvalid("defense", e.what());
  }
  const auto epochs = o.integer("epochs");
  if (epochs < 1 || epochs > 1000000) throw ConfigInvalid("epochs", "must be in [1, 10^6]");
  c.epochs = static_cast<Epoch>(epochs);
  s.trials = o.uint("trials", 1);
  if (s.trials < 1) throw ConfigInvalid("trials", "must be at least 1");

  {
    Obj k = o.sub("clock");
    const double len = k.num("epoch_ms"), d = k.num("delta_ms"), bd = k.num("big_delta_ms");
    if (len <= 0.0) throw ConfigInvalid("clock.epoch_ms", "must be positive");
    if (d <= 0.0) throw ConfigInvalid("clock.delta_ms", "must be positive");
    if (bd <= 0.0) throw ConfigInvalid("clock.big_delta_ms", "must be positive");
    c.clock.epoch_len = sim::ms_to_us(len);
    c.clock.delta = sim::ms_to_us(d);
    c.clock.big_delta = sim::ms_to_us(bd);
    k.done();
  }
  c.topology = parse_topology(o.sub("topology"), c.seed);

  if (o.has("churn")) {
    Obj ch = o.sub("churn");
    c.churn.offline_prob = ch.num("offline_prob", 0.0);
    c.churn.min_online_fraction = ch.num("min_online_fraction", 0.5);
    if (ch.has("offline")) {
      Obj off = ch.sub("offline");
      const json& all = ch.raw("offline");
      for (auto it = all.begin(); it != all.end(); ++it) {
        const int idx = c.topology.index_of(it.key());
        if (idx < 0) throw ConfigInvalid(off.field(it.key()), "unknown client");
        const json& eps = off.raw(it.key());
        if (!eps.is_array()) throw ConfigInvalid(off.field(it.key()), "expected a list of epochs");
        for (const auto& e : eps) {
          const auto v = Obj::as_int(e, off.field(it.key()));
          if (v < 0) throw ConfigInvalid(off.field(it.key()), "negative epoch");
          c.churn.scripted[idx].insert(static_cast<Epoch>(v));
        }
      }
      off.done();
    }
    ch.done();
  }
  if (o.has("key_updates")) {
    Obj k = o.sub("key_updates");
    c.key_updates_per_epoch = k.num("per_epoch", 0.0);
    k.done();
  }
  if (o.has("connections")) {
    const json& cs = o.raw("connections");
    if (!cs.is_array()) throw ConfigInvalid("connections", "expected a list");
    for (std::size_t i = 0; i < cs.size(); ++i) {
      Obj x(cs[i], "connections[" + std::to_string(i) + "]");
      sim::Connection conn;
      conn.epoch = x.uint("epoch");
      conn.a = x.str("a");
      conn.b = x.str("b");
      x.done();
      c.connections.push_back(conn);
    }
  }
  if (o.has("adversary")) c.adversary = parse_adversary(o.sub("adversary"), c.clock);
  if (o.has("monitor")) c.monitor = parse_monitor(o.sub("monitor"));
  if (o.has("prevention")) {
    Obj p = o.sub("prevention");
    c.prevention.enabled = p.boolean("enabled", false);
    c.prevention.oob = p.boolean("oob", true);
    p.done();
  }
  if (o.has("app_messages")) {
    Obj a = o.sub("app_messages");
    c.app_messages_per_epoch = static_cast<int>(a.integer("per_epoch", 0));
    a.done();
  }
  if (o.has("accounting")) s.accounting = parse_accounting(o.sub("accounting"));
  s.accounting.monitor_epochs = static_cast<std::uint64_t>(std::max(c.monitor.m, 0));
  c.sizes.akr = s.accounting.akr_bytes;
  c.sizes.str_wire = s.accounting.str_wire_bytes;
  c.sizes.hash = s.accounting.hash_bytes;

  if (o.has("expect")) {
    const json& ex = o.raw("expect");
    if (!ex.is_array()) throw ConfigInvalid("expect", "expected a list");
    for (std::size_t i = 0; i < ex.size(); ++i)
      s.expect.push_back(parse_expectation(Obj(ex[i], "expect[" + std::to_string(i) + "]")));
  }
  o.done();
  c.validate();
  return s;
}

Scenario parse(const std::string& text) { return from_json(yaml_to_json(text)); }

Scenario load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

Scenario with_overrides(const Scenario& s, const Overrides& o) {
  json j = s.source;
  if (o.seed) j["seed"] = *o.seed;
  if (o.trials) j["trials"] = *o.trials;
  if (o.epochs) j["epochs"] = *o.epochs;
  return from_json(j);
}

std::filesystem::path bundled_dir() {
  if (const char* env = std::getenv("KTSIM_SCENARIO_DIR")) return env;
  return KTSIM_SCENARIO_DIR;
}

std::vector<std::string> bundled() {
  std::vector<std::string> out;
  std::error_code ec;
  for (const auto& e : std::filesystem::directory_iterator(bundled_dir(), ec)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".yaml" || ext == ".yml" || ext == ".json"))
      out.push_back(e.path().stem().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::filesystem::path resolve(const std::string& name_or_path) {
  const std::filesystem::path p(name_or_path);
  if (std::filesystem::is_regular_file(p)) return p;
  for (const char* ext : {".yaml", ".yml", ".json"}) {
    auto q = bundled_dir() / (name_or_path + ext);
    if (std::filesystem::is_regular_file(q)) return q;
  }
  throw IoError("no scenario file or bundled scenario named '" + name_or_path + "'");
}

}  // namespace ktsim::scenario
