#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include "fgssl/errors.hpp"
#include "fgssl/graph.hpp"
#include "fgssl/graph_io.hpp"
#include "fgssl/rng.hpp"

namespace fgssl {

/// Community id per node; ids are contiguous from 0.
struct CommunityAssignment {
  std::vector<std::size_t> community_of;
  std::size_t num_communities = 0;

  [[nodiscard]] std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> s(num_communities, 0);
    for (std::size_t c : community_of) ++s[c];
    return s;
  }
};

/// Client id per node in [0, num_clients).
struct ClientPartition {
  std::vector<std::size_t> client_of;
  std::size_t num_clients = 0;

  [[nodiscard]] std::vector<NodeId> nodes_of(std::size_t client) const {
    std::vector<NodeId> out;
    for (NodeId i = 0; i < client_of.size(); ++i)
      if (client_of[i] == client) out.push_back(i);
    return out;
  }
};

/// Renumbers arbitrary labels to 0..k-1 in order of first appearance.
inline CommunityAssignment make_assignment(const std::vector<std::size_t>& raw) {
  CommunityAssignment a;
  a.community_of.resize(raw.size());
  std::unordered_map<std::size_t, std::size_t> remap;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    auto [it, inserted] = remap.try_emplace(raw[i], remap.size());
    a.community_of[i] = it->second;
  }
  a.num_communities = remap.size();
  return a;
}

/// Newman modularity of an unweighted undirected graph.
inline double modularity(const Graph& g, const CommunityAssignment& a) {
  if (g.num_edges() == 0) throw DataError("modularity: undefined on a graph without edges");
  if (a.community_of.size() != g.num_nodes()) throw ShapeError("modularity: assignment size mismatch");
  const double m = static_cast<double>(g.num_edges());
  std::vector<double> internal(a.num_communities, 0.0), total(a.num_communities, 0.0);
  for (const Edge& e : g.edges()) {
    const std::size_t cs = a.community_of[e.src], cd = a.community_of[e.dst];
    if (cs == cd) internal[cs] += 1.0;
    total[cs] += 1.0;
    total[cd] += 1.0;
  }
  double q = 0.0;
  for (std::size_t c = 0; c < a.num_communities; ++c) {
    q += internal[c] / m - (total[c] / (2.0 * m)) * (total[c] / (2.0 * m));
  }
  return q;
}

struct LouvainResult {
  CommunityAssignment assignment;
  /// Modularity after each aggregation level, starting with the singleton partition.
  std::vector<double> modularity_trace;
};

namespace detail {

/// Weighted graph for Louvain levels. self_weight[i] is A_ii (a loop counts twice in degree).
struct WeightedGraph {
  std::vector<std::vector<std::pair<std::size_t, double>>> adj;  // i != j
  std::vector<double> self_weight;
  std::vector<double> degree;
  double two_m = 0.0;

  [[nodiscard]] std::size_t size() const { return adj.size(); }
};

inline WeightedGraph weighted_from(const Graph& g) {
  WeightedGraph w;
  const std::size_t n = g.num_nodes();
  w.adj.resize(n);
  w.self_weight.assign(n, 0.0);
  w.degree.assign(n, 0.0);
  for (const Edge& e : g.edges()) {
    w.adj[e.src].emplace_back(e.dst, 1.0);
    w.adj[e.dst].emplace_back(e.src, 1.0);
    w.degree[e.src] += 1.0;
    w.degree[e.dst] += 1.0;
  }
  w.two_m = 2.0 * static_cast<double>(g.num_edges());
  return w;
}

inline double weighted_modularity(const WeightedGraph& w, const std::vector<std::size_t>& comm,
                                  std::size_t k) {
  std::vector<double> in(k, 0.0), tot(k, 0.0);
  for (std::size_t i = 0; i < w.size(); ++i) {
    tot[comm[i]] += w.degree[i];
    in[comm[i]] += w.self_weight[i];
    for (const auto& [j, wt] : w.adj[i])
      if (comm[j] == comm[i]) in[comm[i]] += wt;
  }
  double q = 0.0;
  for (std::size_t c = 0; c < k; ++c) q += in[c] / w.two_m - (tot[c] / w.two_m) * (tot[c] / w.two_m);
  return q;
}

/**
 * Local-moving phase. Returns true when at least one node changed community.
 * A node moves to the neighboring community with the largest gain (ties go
 * to the lowest community id) only when that gain beats staying put.
 */
inline bool local_moves(const WeightedGraph& w, std::vector<std::size_t>& comm, Rng& rng,
                        double tolerance) {
  const std::size_t n = w.size();
  std::vector<double> tot(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) tot[comm[i]] += w.degree[i];
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<double> link(n, 0.0);
  std::vector<std::size_t> touched;
  bool any_move = false;
  double q = weighted_modularity(w, comm, n);
  while (true) {
    std::size_t moves = 0;
    for (std::size_t i : order) {
      const std::size_t own = comm[i];
      touched.clear();
      for (const auto& [j, wt] : w.adj[i]) {
        if (link[comm[j]] == 0.0) touched.push_back(comm[j]);
        link[comm[j]] += wt;
      }
      tot[own] -= w.degree[i];
      const double ki = w.degree[i];
      auto gain = [&](std::size_t c) { return link[c] - tot[c] * ki / w.two_m; };
      const double own_gain = gain(own);
      std::size_t best = own;
      double best_gain = own_gain;
      std::sort(touched.begin(), touched.end());
      for (std::size_t c : touched) {
        const double gc = gain(c);
        if (gc > best_gain || (gc == best_gain && c < best && best != own)) {
          best = c;
          best_gain = gc;
        }
      }
      if (best != own && !(best_gain > own_gain)) best = own;
      tot[best] += ki;
      if (best != own) {
        comm[i] = best;
        ++moves;
      }
      for (std::size_t c : touched) link[c] = 0.0;
    }
    if (moves == 0) break;
    any_move = true;
    const double q_new = weighted_modularity(w, comm, n);
    const bool improved = q_new - q > tolerance;
    q = q_new;
    if (!improved) break;
  }
  return any_move;
}

inline WeightedGraph aggregate(const WeightedGraph& w, const std::vector<std::size_t>& comm,
                               std::size_t k) {
  WeightedGraph a;
  a.adj.resize(k);
  a.self_weight.assign(k, 0.0);
  a.degree.assign(k, 0.0);
  a.two_m = w.two_m;
  std::vector<std::unordered_map<std::size_t, double>> acc(k);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const std::size_t ci = comm[i];
    a.degree[ci] += w.degree[i];
    a.self_weight[ci] += w.self_weight[i];
    for (const auto& [j, wt] : w.adj[i]) {
      if (comm[j] == ci) a.self_weight[ci] += wt;
      else acc[ci][comm[j]] += wt;
    }
  }
  for (std::size_t c = 0; c < k; ++c) {
    a.adj[c].assign(acc[c].begin(), acc[c].end());
    std::sort(a.adj[c].begin(), a.adj[c].end());
  }
  return a;
}

}  // namespace detail

/**
 * @brief Two-phase Louvain modularity maximization.
 *
 * Greedy local moves in a seeded random node order, then aggregation of
 * communities into super-nodes; repeated until a level improves modularity
 * by no more than `tolerance`.
 */
inline LouvainResult louvain(const Graph& g, std::uint64_t seed, double tolerance = 1e-7) {
  if (g.num_edges() == 0) throw DataError("louvain: graph has no edges");
  Rng rng = make_rng({seed, tag(Stream::louvain)});
  detail::WeightedGraph level = detail::weighted_from(g);
  std::vector<std::size_t> node_comm(g.num_nodes());
  std::iota(node_comm.begin(), node_comm.end(), 0);

  LouvainResult res;
  double q = detail::weighted_modularity(level, node_comm, node_comm.size());
  res.modularity_trace.push_back(q);
  while (true) {
    std::vector<std::size_t> comm(level.size());
    std::iota(comm.begin(), comm.end(), 0);
    const bool moved = detail::local_moves(level, comm, rng, tolerance);
    if (!moved) break;
    const CommunityAssignment renum = make_assignment(comm);
    for (std::size_t& c : node_comm) c = renum.community_of[c];
    const double q_new = detail::weighted_modularity(level, renum.community_of, renum.num_communities);
    res.modularity_trace.push_back(q_new);
    level = detail::aggregate(level, renum.community_of, renum.num_communities);
    const bool improved = q_new - q > tolerance;
    q = q_new;
    if (!improved) break;
  }
  res.assignment = make_assignment(node_comm);
  return res;
}

inline CommunityAssignment louvain_partition(const Graph& g, std::uint64_t seed) {
  return louvain(g, seed).assignment;
}

/**
 * Greedy balanced packing: communities in descending size order (equal sizes
 * in a seeded random order) each go to the client with the fewest nodes so
 * far, lowest client id on ties.
 */
inline ClientPartition communities_to_clients(const CommunityAssignment& a, std::size_t num_clients,
                                              std::uint64_t seed) {
  if (num_clients == 0) throw ConfigError("communities_to_clients: need at least one client");
  if (a.num_communities < num_clients) {
    throw ConfigError("communities_to_clients: " + std::to_string(a.num_communities) +
                      " communities cannot fill " + std::to_string(num_clients) + " clients");
  }
  const auto sizes = a.sizes();
  std::vector<std::size_t> order(a.num_communities);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng({seed, tag(Stream::assign)});
  std::shuffle(order.begin(), order.end(), rng);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sizes[x] > sizes[y]; });

  std::vector<std::size_t> load(num_clients, 0), client_of_comm(a.num_communities, 0);
  for (std::size_t c : order) {
    const auto target = static_cast<std::size_t>(std::min_element(load.begin(), load.end()) - load.begin());
    client_of_comm[c] = target;
    load[target] += sizes[c];
  }
  ClientPartition p;
  p.num_clients = num_clients;
  p.client_of.resize(a.community_of.size());
  for (std::size_t i = 0; i < a.community_of.size(); ++i) p.client_of[i] = client_of_comm[a.community_of[i]];
  return p;
}

/// A node-induced subgraph with its masks, remembering original node ids.
struct Subgraph {
  Graph graph;
  SplitMasks masks;
  std::vector<NodeId> global_ids;  ///< local id -> original id
};

/// Keeps `nodes` (any order, no duplicates) and the edges among them; ids become ranks in sorted order.
inline Subgraph induce_subgraph(const Graph& g, std::vector<NodeId> nodes, const SplitMasks& masks = {}) {
  if (nodes.empty()) throw ConfigError("induce_subgraph: empty node set");
  std::sort(nodes.begin(), nodes.end());
  if (std::adjacent_find(nodes.begin(), nodes.end()) != nodes.end()) {
    throw ConfigError("induce_subgraph: duplicate node id");
  }
  if (nodes.back() >= g.num_nodes()) throw DataError("induce_subgraph: node id out of range");
  constexpr std::size_t absent = static_cast<std::size_t>(-1);
  std::vector<std::size_t> local(g.num_nodes(), absent);
  for (std::size_t k = 0; k < nodes.size(); ++k) local[nodes[k]] = k;

  Tensor x(nodes.size(), g.feature_dim());
  std::vector<int> labels(nodes.size());
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const auto src = g.features().row(nodes[k]);
    std::copy(src.begin(), src.end(), x.row(k).begin());
    labels[k] = g.labels()[nodes[k]];
  }
  std::vector<Edge> edges;
  for (const Edge& e : g.edges()) {
    if (local[e.src] != absent && local[e.dst] != absent) edges.push_back({local[e.src], local[e.dst]});
  }
  Subgraph s{Graph(std::move(x), std::move(edges), std::move(labels), g.num_classes()), {}, nodes};
  auto restrict = [&](const std::vector<NodeId>& from, std::vector<NodeId>& to) {
    for (NodeId i : from)
      if (i < local.size() && local[i] != absent) to.push_back(local[i]);
    std::sort(to.begin(), to.end());
  };
  restrict(masks.train, s.masks.train);
  restrict(masks.val, s.masks.val);
  restrict(masks.test, s.masks.test);
  return s;
}

/// One induced subgraph per client.
inline std::vector<Subgraph> client_subgraphs(const Graph& g, const SplitMasks& masks,
                                              const ClientPartition& p) {
  if (p.client_of.size() != g.num_nodes()) throw ShapeError("client_subgraphs: partition size mismatch");
  std::vector<Subgraph> out;
  out.reserve(p.num_clients);
  for (std::size_t m = 0; m < p.num_clients; ++m) {
    auto nodes = p.nodes_of(m);
    if (nodes.empty()) throw ConfigError("client " + std::to_string(m) + " owns no nodes");
    out.push_back(induce_subgraph(g, std::move(nodes), masks));
  }
  return out;
}

inline void save_partition(const ClientPartition& p, const fs::path& file) {
  auto out = detail::open_out(file);
  for (std::size_t i = 0; i < p.client_of.size(); ++i) out << i << '\t' << p.client_of[i] << '\n';
  if (!out) throw IoError("failed writing " + file.string());
}

/// Reads partition.tsv; client ids must cover 0..M-1 and every node must appear once.
inline ClientPartition load_partition(const fs::path& file, std::size_t num_nodes) {
  auto in = detail::open_in(file);
  constexpr std::size_t unset = static_cast<std::size_t>(-1);
  ClientPartition p;
  p.client_of.assign(num_nodes, unset);
  std::string line;
  std::size_t ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    const auto t = detail::trim(line);
    if (t.empty()) continue;
    const auto tab = t.find('\t');
    if (tab == std::string_view::npos) throw DataError(file.string() + ":" + std::to_string(ln) + ": expected node<TAB>client");
    const auto node = detail::parse_number<std::size_t>(t.substr(0, tab), file, ln);
    const auto client = detail::parse_number<std::size_t>(t.substr(tab + 1), file, ln);
    if (node >= num_nodes) throw DataError(file.string() + ":" + std::to_string(ln) + ": node out of range");
    if (p.client_of[node] != unset) throw DataError(file.string() + ":" + std::to_string(ln) + ": node listed twice");
    p.client_of[node] = client;
    p.num_clients = std::max(p.num_clients, client + 1);
  }
  for (std::size_t i = 0; i < num_nodes; ++i) {
    if (p.client_of[i] == unset) throw DataError(file.string() + ": node " + std::to_string(i) + " has no client");
  }
  std::vector<std::size_t> count(p.num_clients, 0);
  for (std::size_t c : p.client_of) ++count[c];
  for (std::size_t m = 0; m < p.num_clients; ++m) {
    if (count[m] == 0) throw DataError(file.string() + ": client " + std::to_string(m) + " is empty");
  }
  return p;
}

}  // namespace fgssl
