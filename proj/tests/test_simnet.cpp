#include <algorithm>
#include <limits>

#include "doctest.h"
#include "ktsim/error.hpp"
#include "ktsim/simnet.hpp"

using namespace ktsim;
using namespace ktsim::sim;

namespace {

// Floyd-Warshall over the induced subgraph.
int fw_diameter(const Topology& g, const std::vector<bool>& online) {
  const int n = static_cast<int>(g.size());
  constexpr int inf = std::numeric_limits<int>::max() / 4;
  std::vector<std::vector<int>> d(n, std::vector<int>(n, inf));
  for (int i = 0; i < n; ++i) d[i][i] = 0;
  for (const auto& [a, b] : g.edges)
    if (online[a] && online[b]) d[a][b] = d[b][a] = 1;
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) d[i][j] = std::min(d[i][j], d[i][k] + d[k][j]);
  int best = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (!online[i] || !online[j]) continue;
      if (d[i][j] >= inf) return kDisconnected;
      best = std::max(best, d[i][j]);
    }
  return best;
}

}  // namespace

TEST_CASE("diameters of the named topologies") {
  CHECK(graph_diameter(Topology::ring(10)) == 5);
  CHECK(graph_diameter(Topology::ring(11)) == 5);
  CHECK(graph_diameter(Topology::star(101)) == 2);
  CHECK(Topology::star(101).size() == 101);
  CHECK(Topology::star(101).edges.size() == 100);
}

TEST_CASE("diameter agrees with Floyd-Warshall on random graphs") {
  Rng rng(17);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 5 + trial % 20;
    const double p = 0.15 + 0.02 * (trial % 10);
    const auto g = Topology::gnp(n, p, 100 + static_cast<std::uint64_t>(trial));
    CHECK(graph_diameter(g) == fw_diameter(g, std::vector<bool>(n, true)));
    std::vector<bool> online(n);
    for (int i = 0; i < n; ++i) online[i] = uniform01(rng) < 0.7;
    CHECK(graph_diameter(g, online) == fw_diameter(g, online));
  }
}

TEST_CASE("removed edges split a ring into two arcs") {
  const auto g = Topology::ring(10);
  const std::set<Edge> cut{make_edge(4, 5), make_edge(9, 0)};
  CHECK(graph_diameter(g, {}, cut) == kDisconnected);
  const auto comp = components(g, {}, cut);
  for (int i = 0; i < 5; ++i) CHECK(comp[i] == comp[0]);
  for (int i = 5; i < 10; ++i) CHECK(comp[i] == comp[5]);
  CHECK(comp[0] != comp[5]);
  std::vector<bool> arc(10, false);
  for (int i = 0; i < 5; ++i) arc[i] = true;
  CHECK(graph_diameter(g, arc, cut) == 4);
}

TEST_CASE("random graphs are connected and reproducible") {
  const auto a = Topology::gnp(50, 0.2, 9);
  const auto b = Topology::gnp(50, 0.2, 9);
  CHECK(a.edges == b.edges);
  CHECK(graph_diameter(a) > 0);
  CHECK(Topology::gnp(50, 0.2, 10).edges != a.edges);
}

TEST_CASE("explicit graphs validate names") {
  CHECK_THROWS_AS(Topology::explicit_graph({"a", "b"}, {{"a", "z"}}), ConfigInvalid);
  CHECK_THROWS_AS(Topology::explicit_graph({"a", "a"}, {}), Error);
  const auto g = Topology::explicit_graph({"a", "b", "c"}, {{"a", "b"}, {"b", "c"}});
  CHECK(g.index_of("c") == 2);
  CHECK(g.index_of("zz") == -1);
  CHECK(g.has_edge(0, 1));
  CHECK_FALSE(g.has_edge(0, 2));
}

TEST_CASE("sampled delays stay inside (0, bound]") {
  Rng rng(3);
  bool saw_max = false;
  for (int i = 0; i < 20000; ++i) {
    const Time d = sample_delay(rng, 1000);
    REQUIRE(d >= 1);
    REQUIRE(d <= 1000);
    saw_max = saw_max || d == 1000;
  }
  CHECK(saw_max);
}

TEST_CASE("clock validation") {
  ClockConfig c{ms_to_us(20), ms_to_us(1), ms_to_us(2)};
  CHECK_NOTHROW(c.validate(5));
  CHECK_THROWS_AS(c.validate(9), ConfigInvalid);
  CHECK_THROWS_AS(c.validate(kDisconnected), ConfigInvalid);
  ClockConfig slow{ms_to_us(20), ms_to_us(1), ms_to_us(5)};
  CHECK_THROWS_AS(slow.validate(1), ConfigInvalid);
  CHECK(c.epoch_at(c.epoch_start(7)) == 7);
  CHECK(c.epoch_at(c.epoch_start(7) - 1) == 6);
}

TEST_CASE("churn keeps the online floor and honours scripted epochs") {
  ChurnModel m;
  m.offline_prob = 0.9;
  m.min_online_fraction = 0.5;
  m.scripted[0] = {2};
  Rng rng(5);
  for (Epoch e = 0; e < 50; ++e) {
    const auto on = m.draw(e, 20, rng);
    const auto count = std::count(on.begin(), on.end(), true);
    CHECK(count >= 10);
    CHECK(on[0] == (e != 2));
  }
}
