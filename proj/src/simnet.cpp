#include "ktsim/simnet.hpp"

#include <algorithm>
#include <deque>

#include "ktsim/error.hpp"

namespace ktsim::sim {

std::int64_t uniform(Rng& rng, std::int64_t lo, std::int64_t hi) {
  return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
}

double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

std::string to_string(TopologyKind kind) {
  switch (kind) {
    case TopologyKind::Ring: return "ring";
    case TopologyKind::Star: return "star";
    case TopologyKind::RandomGnp: return "gnp";
    case TopologyKind::Explicit: return "explicit";
  }
  return "?";
}

namespace {

std::vector<std::string> numbered(int n) {
  std::vector<std::string> v;
  v.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) v.push_back("c" + std::to_string(i));
  return v;
}

}  // namespace

Topology Topology::ring(int n) {
  if (n < 3) throw ConfigInvalid("topology.n", "a ring needs at least 3 nodes");
  Topology t;
  t.kind = TopologyKind::Ring;
  t.clients = numbered(n);
  for (int i = 0; i < n; ++i) t.edges.insert(make_edge(i, (i + 1) % n));
  return t;
}

Topology Topology::star(int n) {
  if (n < 2) throw ConfigInvalid("topology.n", "a star needs at least 2 nodes");
  Topology t;
  t.kind = TopologyKind::Star;
  t.clients = numbered(n);
  for (int i = 1; i < n; ++i) t.edges.insert(make_edge(0, i));
  return t;
}

Topology Topology::gnp(int n, double p, std::uint64_t seed) {
  if (n < 2) throw ConfigInvalid("topology.n", "G(n,p) needs at least 2 nodes");
  if (!(p > 0.0 && p <= 1.0)) throw ConfigInvalid("topology.p", "must be in (0, 1]");
  Rng rng(seed);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Topology t;
    t.kind = TopologyKind::RandomGnp;
    t.clients = numbered(n);
    for (int a = 0; a < n; ++a)
      for (int b = a + 1; b < n; ++b)
        if (uniform01(rng) < p) t.edges.insert({a, b});
    if (graph_diameter(t) != kDisconnected) return t;
  }
  throw ConfigInvalid("topology.p", "no connected G(n,p) sample after 1000 draws");
}

Topology Topology::explicit_graph(
    std::vector<std::string> names,
    const std::vector<std::pair<std::string, std::string>>& edges) {
  Topology t;
  t.kind = TopologyKind::Explicit;
  t.clients = std::move(names);
  std::set<std::string> unique(t.clients.begin(), t.clients.end());
  if (unique.size() != t.clients.size())
    throw ConfigInvalid("topology.nodes", "duplicate node name");
  for (const auto& n : t.clients)
    if (n.empty()) throw ConfigInvalid("topology.nodes", "empty node name");
  for (const auto& [a, b] : edges) {
    const int ia = t.index_of(a), ib = t.index_of(b);
    if (ia < 0 || ib < 0)
      throw ConfigInvalid("topology.edges", "edge " + a + "-" + b + " names an unknown node");
    if (ia == ib) throw ConfigInvalid("topology.edges", "self loop on " + a);
    t.edges.insert(make_edge(ia, ib));
  }
  return t;
}

int Topology::index_of(std::string_view id) const {
  for (std::size_t i = 0; i < clients.size(); ++i)
    if (clients[i] == id) return static_cast<int>(i);
  return -1;
}

void Topology::add_edge(int a, int b) {
  if (a == b) throw Error("self loop");
  edges.insert(make_edge(a, b));
}

std::vector<std::vector<int>> Topology::adjacency(const std::set<Edge>& removed) const {
  std::vector<std::vector<int>> adj(clients.size());
  for (const auto& e : edges) {
    if (removed.count(e)) continue;
    adj[e.first].push_back(e.second);
    adj[e.second].push_back(e.first);
  }
  for (auto& a : adj) std::sort(a.begin(), a.end());
  return adj;
}

namespace {

std::vector<int> bfs(const std::vector<std::vector<int>>& adj,
                     const std::vector<bool>& online, int src) {
  std::vector<int> dist(adj.size(), -1);
  std::deque<int> q{src};
  dist[src] = 0;
  while (!q.empty()) {
    const int u = q.front();
    q.pop_front();
    for (int v : adj[u]) {
      if (dist[v] >= 0 || (!online.empty() && !online[v])) continue;
      dist[v] = dist[u] + 1;
      q.push_back(v);
    }
  }
  return dist;
}

}  // namespace

int graph_diameter(const Topology& g, const std::vector<bool>& online,
                   const std::set<Edge>& removed) {
  const auto adj = g.adjacency(removed);
  int diam = 0;
  int nodes = 0;
  for (std::size_t s = 0; s < adj.size(); ++s) {
    if (!online.empty() && !online[s]) continue;
    ++nodes;
    const auto dist = bfs(adj, online, static_cast<int>(s));
    for (std::size_t t = 0; t < adj.size(); ++t) {
      if (!online.empty() && !online[t]) continue;
      if (dist[t] < 0) return kDisconnected;
      diam = std::max(diam, dist[t]);
    }
  }
  return nodes == 0 ? kDisconnected : diam;
}

std::vector<int> components(const Topology& g, const std::vector<bool>& online,
                            const std::set<Edge>& removed) {
  const auto adj = g.adjacency(removed);
  std::vector<int> comp(adj.size(), -1);
  int next = 0;
  for (std::size_t s = 0; s < adj.size(); ++s) {
    if (comp[s] >= 0 || (!online.empty() && !online[s])) continue;
    const auto dist = bfs(adj, online, static_cast<int>(s));
    for (std::size_t t = 0; t < adj.size(); ++t)
      if (dist[t] >= 0) comp[t] = next;
    ++next;
  }
  return comp;
}

void ClockConfig::validate(int diameter) const {
  if (epoch_len <= 0) throw ConfigInvalid("clock.epoch_ms", "must be positive");
  if (delta <= 0) throw ConfigInvalid("clock.delta_ms", "must be positive");
  if (big_delta <= delta)
    throw ConfigInvalid("clock.big_delta_ms", "anonymous delay bound must exceed delta");
  if (diameter == kDisconnected)
    throw ConfigInvalid("topology", "contact graph is not connected");
  if (2 * (static_cast<Time>(diameter) + 1) * delta >= epoch_len)
    throw ConfigInvalid("clock.epoch_ms",
                        "2*(diam+1)*delta must be below the epoch length (diam=" +
                            std::to_string(diameter) + ")");
  if (4 * big_delta >= epoch_len)
    throw ConfigInvalid("clock.epoch_ms", "epoch must be longer than 4*big_delta");
}

std::vector<bool> ChurnModel::draw(Epoch e, std::size_t n, Rng& rng) const {
  std::vector<bool> online(n, true);
  std::vector<bool> forced(n, false);
  for (const auto& [idx, epochs] : scripted) {
    if (idx < 0 || static_cast<std::size_t>(idx) >= n) continue;
    if (epochs.count(e)) {
      online[idx] = false;
      forced[idx] = true;
    }
  }
  if (e == 0 || offline_prob <= 0.0) return online;

  std::vector<int> dropped;
  for (std::size_t i = 0; i < n; ++i) {
    if (forced[i] || scripted.count(static_cast<int>(i))) continue;
    if (uniform01(rng) < offline_prob) {
      online[i] = false;
      dropped.push_back(static_cast<int>(i));
    }
  }
  const auto need = static_cast<std::size_t>(min_online_fraction * static_cast<double>(n) + 0.999999);
  auto count = static_cast<std::size_t>(std::count(online.begin(), online.end(), true));
  std::shuffle(dropped.begin(), dropped.end(), rng);
  for (int i : dropped) {
    if (count >= need) break;
    online[i] = true;
    ++count;
  }
  return online;
}

}  // namespace ktsim::sim
