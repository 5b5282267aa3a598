#pragma once

// Network primitives for the simulator: contact graphs, the epoch clock and
// the churn model. The event loop itself lives in simulation.hpp.

#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ktsim::sim {

/// Simulated time in microseconds. Scenario files use milliseconds.
using Time = std::int64_t;
using Epoch = std::uint64_t;
using Rng = std::mt19937_64;

inline constexpr Time kUsPerMs = 1000;

inline Time ms_to_us(double ms) { return static_cast<Time>(ms * kUsPerMs + 0.5); }
inline double us_to_ms(Time us) { return static_cast<double>(us) / kUsPerMs; }

/// Uniform integer in [lo, hi].
std::int64_t uniform(Rng& rng, std::int64_t lo, std::int64_t hi);
double uniform01(Rng& rng);
/// Delay drawn uniformly from (0, bound].
inline Time sample_delay(Rng& rng, Time bound) { return uniform(rng, 1, bound); }

enum class TopologyKind { Ring, Star, RandomGnp, Explicit };

std::string to_string(TopologyKind kind);

using Edge = std::pair<int, int>;  // always first < second

inline Edge make_edge(int a, int b) { return a < b ? Edge{a, b} : Edge{b, a}; }

struct Topology {
  TopologyKind kind = TopologyKind::Explicit;
  std::vector<std::string> clients;
  std::set<Edge> edges;

  /// Nodes c0..c{n-1}, edges i -- i+1 mod n.
  static Topology ring(int n);
  /// c0 is the hub; n counts every node including the hub.
  static Topology star(int n);
  /// Erdos-Renyi G(n, p); redrawn until connected.
  static Topology gnp(int n, double p, std::uint64_t seed);
  static Topology explicit_graph(std::vector<std::string> names,
                                 const std::vector<std::pair<std::string, std::string>>& edges);

  std::size_t size() const { return clients.size(); }
  /// -1 when absent.
  int index_of(std::string_view id) const;
  bool has_edge(int a, int b) const { return edges.count(make_edge(a, b)) != 0; }
  void add_edge(int a, int b);
  std::vector<std::vector<int>> adjacency(const std::set<Edge>& removed = {}) const;
};

inline constexpr int kDisconnected = -1;

/// Exact diameter of the subgraph induced by `online` (all nodes when empty)
/// after dropping `removed` edges. kDisconnected if that subgraph is not
/// connected; 0 for a single node.
int graph_diameter(const Topology& g, const std::vector<bool>& online = {},
                   const std::set<Edge>& removed = {});

/// Connected-component id per node; offline nodes get -1.
std::vector<int> components(const Topology& g, const std::vector<bool>& online = {},
                            const std::set<Edge>& removed = {});

struct ClockConfig {
  Time epoch_len = 0;
  Time delta = 0;      // client <-> server
  Time big_delta = 0;  // anonymous network, one way

  Time epoch_start(Epoch e) const { return static_cast<Time>(e) * epoch_len; }
  Epoch epoch_at(Time t) const { return static_cast<Epoch>(t / epoch_len); }
  /// Throws ConfigInvalid naming the violated relation.
  void validate(int diameter) const;
};

struct ChurnModel {
  double offline_prob = 0.0;
  double min_online_fraction = 0.5;
  /// Scripted offline epochs by client index; these override the random draw.
  std::map<int, std::set<Epoch>> scripted;

  /// Online flags for epoch e. Random draws are topped up so that at least
  /// min_online_fraction of the clients stay online; scripted entries are
  /// never overridden.
  std::vector<bool> draw(Epoch e, std::size_t n, Rng& rng) const;
};

}  // namespace ktsim::sim
