#include <gtest/gtest.h>

#include <functional>
#include <map>
#include <numeric>
#include <set>

#include "test_util.hpp"

using namespace fgssl;
using testutil::make_graph;

namespace {

/// Direct double-sum modularity on a dense adjacency matrix.
double dense_modularity(const Graph& g, const std::vector<std::size_t>& comm) {
  const std::size_t n = g.num_nodes();
  std::vector<std::vector<double>> a(n, std::vector<double>(n, 0.0));
  for (const Edge& e : g.edges()) a[e.src][e.dst] = a[e.dst][e.src] = 1.0;
  std::vector<double> k(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) k[i] += a[i][j];
  const double two_m = 2.0 * static_cast<double>(g.num_edges());
  double q = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (comm[i] == comm[j]) q += a[i][j] - k[i] * k[j] / two_m;
  return q / two_m;
}

/// Best modularity over every set partition (restricted growth strings).
std::pair<double, std::vector<std::size_t>> brute_force_best(const Graph& g) {
  const std::size_t n = g.num_nodes();
  std::vector<std::size_t> rgs(n, 0), best;
  double best_q = -1.0;
  std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t i, std::size_t max_used) {
    if (i == n) {
      const double q = dense_modularity(g, rgs);
      if (q > best_q + 1e-12) {
        best_q = q;
        best = rgs;
      }
      return;
    }
    for (std::size_t c = 0; c <= max_used + 1; ++c) {
      rgs[i] = c;
      rec(i + 1, std::max(max_used, c));
    }
  };
  rgs[0] = 0;
  rec(1, 0);
  return {best_q, best};
}

bool same_partition(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  return make_assignment(a).community_of == make_assignment(b).community_of;
}

}  // namespace

TEST(Modularity, TwoDisjointEdges) {
  const Graph g = make_graph(4, {{0, 1}, {2, 3}});
  EXPECT_NEAR(modularity(g, make_assignment({0, 0, 1, 1})), 0.5, 1e-15);
}

TEST(Modularity, SingleCommunityIsZero) {
  const Graph g = generate_sbm({3, 10, 0.4, 0.1, 1.0, 3});
  EXPECT_NEAR(modularity(g, make_assignment(std::vector<std::size_t>(g.num_nodes(), 0))), 0.0, 1e-15);
}

TEST(Modularity, MatchesDenseFormula) {
  const Graph g = generate_sbm({3, 8, 0.5, 0.1, 1.0, 9});
  Rng rng = make_rng({4});
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<std::size_t> c(g.num_nodes());
    for (auto& v : c) v = rng() % 5;
    const auto a = make_assignment(c);
    EXPECT_NEAR(modularity(g, a), dense_modularity(g, a.community_of), 1e-12);
  }
}

TEST(Modularity, RandomAssignmentAveragesNearZero) {
  const Graph g = generate_sbm({4, 25, 0.2, 0.02, 1.0, 1});
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Rng rng = make_rng({seed, 77});
    std::vector<std::size_t> c(g.num_nodes());
    for (auto& v : c) v = rng() % 4;
    total += modularity(g, make_assignment(c));
  }
  EXPECT_NEAR(total / 1000.0, 0.0, 0.05);
}

TEST(Modularity, BoundsAndErrors) {
  const Graph g = generate_sbm({2, 10, 0.5, 0.2, 1.0, 0});
  std::vector<std::size_t> each(g.num_nodes());
  std::iota(each.begin(), each.end(), 0);
  const double q = modularity(g, make_assignment(each));
  EXPECT_GE(q, -0.5);
  EXPECT_LT(q, 1.0);
  EXPECT_THROW(modularity(make_graph(3, {}), make_assignment({0, 0, 0})), DataError);
  EXPECT_THROW(modularity(g, make_assignment({0, 1})), ShapeError);
}

TEST(Louvain, TwoCliquesMatchBruteForceOptimum) {
  const Graph g = testutil::two_cliques_bridge();
  const auto [best_q, best] = brute_force_best(g);
  EXPECT_TRUE(same_partition(best, {0, 0, 0, 0, 1, 1, 1, 1}));
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const CommunityAssignment a = louvain_partition(g, seed);
    EXPECT_EQ(a.num_communities, 2u);
    EXPECT_TRUE(same_partition(a.community_of, best));
    EXPECT_NEAR(modularity(g, a), best_q, 1e-12);
  }
}

TEST(Louvain, TriangleIsOneCommunity) {
  const Graph g = make_graph(3, {{0, 1}, {1, 2}, {0, 2}});
  const auto [best_q, best] = brute_force_best(g);
  EXPECT_TRUE(same_partition(best, {0, 0, 0}));
  EXPECT_EQ(louvain_partition(g, 0).num_communities, 1u);
  EXPECT_NEAR(best_q, 0.0, 1e-15);
}

TEST(Louvain, ModularityTraceNeverDecreases) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Graph g = generate_sbm({5, 40, 0.15, 0.01, 1.0, seed});
    const LouvainResult r = louvain(g, seed);
    ASSERT_FALSE(r.modularity_trace.empty());
    for (std::size_t k = 1; k < r.modularity_trace.size(); ++k) {
      EXPECT_GE(r.modularity_trace[k], r.modularity_trace[k - 1] - 1e-12);
    }
    EXPECT_NEAR(r.modularity_trace.back(), modularity(g, r.assignment), 1e-9);
  }
}

TEST(Louvain, DeterministicPerSeedAndRecoversPlantedBlocks) {
  const Graph g = generate_sbm({4, 50, 0.3, 0.005, 1.0, 2});
  const auto a = louvain_partition(g, 3);
  EXPECT_EQ(a.community_of, louvain_partition(g, 3).community_of);
  EXPECT_GE(modularity(g, a), 0.6);
  std::size_t agree = 0;
  for (NodeId i = 0; i < g.num_nodes(); ++i) {
    for (NodeId j = i + 1; j < g.num_nodes(); ++j) {
      const bool sc = a.community_of[i] == a.community_of[j];
      const bool sl = g.labels()[i] == g.labels()[j];
      agree += sc == sl ? 1 : 0;
    }
  }
  const double pairs = static_cast<double>(g.num_nodes() * (g.num_nodes() - 1) / 2);
  EXPECT_GE(static_cast<double>(agree) / pairs, 0.95);
}

TEST(Louvain, ZeroEdgeGraphIsAnError) { EXPECT_THROW(louvain_partition(make_graph(4, {}), 0), DataError); }

TEST(Clients, GreedyBalancingTrace) {
  std::vector<std::size_t> raw;
  const std::size_t sizes[] = {5, 4, 3, 2};
  for (std::size_t c = 0; c < 4; ++c) raw.insert(raw.end(), sizes[c], c);
  const CommunityAssignment a = make_assignment(raw);
  const ClientPartition p = communities_to_clients(a, 2, 0);
  ASSERT_EQ(p.num_clients, 2u);
  EXPECT_EQ(p.nodes_of(0).size(), 7u);
  EXPECT_EQ(p.nodes_of(1).size(), 7u);
  std::map<std::size_t, std::set<std::size_t>> clients_of_comm;
  for (std::size_t i = 0; i < raw.size(); ++i) clients_of_comm[raw[i]].insert(p.client_of[i]);
  for (const auto& [comm, clients] : clients_of_comm) EXPECT_EQ(clients.size(), 1u);
  EXPECT_EQ(p.client_of[0], p.client_of[13]);  // size-5 and size-2 communities share a client
  EXPECT_EQ(p.client_of[5], p.client_of[9]);   // size-4 and size-3
}

TEST(Clients, OneCommunityPerClientAndSingleClient) {
  const CommunityAssignment a = make_assignment({0, 1, 1, 2, 2, 2});
  const ClientPartition p = communities_to_clients(a, 3, 5);
  std::set<std::size_t> seen(p.client_of.begin(), p.client_of.end());
  EXPECT_EQ(seen.size(), 3u);
  EXPECT_EQ(p.client_of[1], p.client_of[2]);
  const ClientPartition one = communities_to_clients(a, 1, 5);
  for (std::size_t c : one.client_of) EXPECT_EQ(c, 0u);
  EXPECT_THROW(communities_to_clients(a, 4, 0), ConfigError);
}

TEST(Subgraph, InducedEdgesAndRelabeling) {
  const Graph tri = make_graph(3, {{0, 1}, {1, 2}, {0, 2}});
  const Subgraph s = induce_subgraph(tri, {2, 0});
  EXPECT_EQ(s.graph.num_nodes(), 2u);
  EXPECT_EQ(s.graph.num_edges(), 1u);
  EXPECT_EQ(s.global_ids, (std::vector<NodeId>{0, 2}));
  EXPECT_EQ(s.graph.features().row(1)[0], tri.features().row(2)[0]);
  const Subgraph full = induce_subgraph(tri, {0, 1, 2});
  EXPECT_EQ(full.graph, tri);
  EXPECT_THROW(induce_subgraph(tri, {}), ConfigError);
  EXPECT_THROW(induce_subgraph(tri, {0, 0}), ConfigError);
  EXPECT_THROW(induce_subgraph(tri, {5}), DataError);
}

TEST(Subgraph, ClientSubgraphsCoverNodesAndLoseCrossEdges) {
  const Graph g = generate_sbm({4, 40, 0.2, 0.02, 1.0, 6});
  const SplitMasks masks = split_nodes(g, {}, 0);
  const ClientPartition p = communities_to_clients(louvain_partition(g, 1), 3, 1);
  const auto parts = client_subgraphs(g, masks, p);
  std::size_t nodes = 0, edges = 0, train = 0, test = 0;
  std::set<NodeId> covered;
  for (const Subgraph& s : parts) {
    nodes += s.graph.num_nodes();
    edges += s.graph.num_edges();
    train += s.masks.train.size();
    test += s.masks.test.size();
    covered.insert(s.global_ids.begin(), s.global_ids.end());
    for (NodeId i : s.masks.train) EXPECT_TRUE(std::binary_search(masks.train.begin(), masks.train.end(), s.global_ids[i]));
  }
  EXPECT_EQ(nodes, g.num_nodes());
  EXPECT_EQ(covered.size(), g.num_nodes());
  EXPECT_LT(edges, g.num_edges());
  EXPECT_EQ(train, masks.train.size());
  EXPECT_EQ(test, masks.test.size());
}

TEST(PartitionFile, RoundTripAndErrors) {
  const auto dir = testutil::temp_dir("partition_file");
  const ClientPartition p{{0, 1, 1, 0, 2}, 3};
  save_partition(p, dir / "partition.tsv");
  const ClientPartition back = load_partition(dir / "partition.tsv", 5);
  EXPECT_EQ(back.client_of, p.client_of);
  EXPECT_EQ(back.num_clients, 3u);
  EXPECT_THROW(load_partition(dir / "partition.tsv", 6), DataError);
  EXPECT_THROW(load_partition(dir / "missing.tsv", 5), IoError);
}
