#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstddef>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fgssl/errors.hpp"
#include "fgssl/rng.hpp"
#include "fgssl/tensor.hpp"

namespace fgssl {

using NodeId = std::size_t;

/// Undirected edge; canonical form has src < dst.
struct Edge {
  NodeId src = 0;
  NodeId dst = 0;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

/**
 * @brief Immutable attributed graph: features, undirected edges, labels.
 *
 * The constructor canonicalizes the edge list (src < dst, sorted, no
 * duplicates, self-loops dropped) and validates every invariant, so any
 * Graph value that exists is well formed. Adjacency is kept in CSR form.
 */
class Graph {
 public:
  Graph() = default;

  Graph(Tensor features, std::vector<Edge> edges, std::vector<int> labels, std::size_t num_classes)
      : features_(std::move(features)), labels_(std::move(labels)), num_classes_(num_classes) {
    const std::size_t n = features_.rows();
    if (labels_.size() != n) {
      throw DataError("graph: " + std::to_string(labels_.size()) + " labels for " +
                      std::to_string(n) + " feature rows");
    }
    if (!features_.all_finite()) throw DataError("graph: non-finite feature value");
    for (std::size_t i = 0; i < n; ++i) {
      if (labels_[i] < 0 || static_cast<std::size_t>(labels_[i]) >= num_classes_) {
        throw DataError("graph: label " + std::to_string(labels_[i]) + " of node " +
                        std::to_string(i) + " outside [0, " + std::to_string(num_classes_) + ")");
      }
    }
    edges_.reserve(edges.size());
    for (Edge e : edges) {
      if (e.src >= n || e.dst >= n) {
        throw DataError("graph: edge (" + std::to_string(e.src) + ", " + std::to_string(e.dst) +
                        ") references a node outside [0, " + std::to_string(n) + ")");
      }
      if (e.src == e.dst) continue;
      if (e.src > e.dst) std::swap(e.src, e.dst);
      edges_.push_back(e);
    }
    std::sort(edges_.begin(), edges_.end());
    edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());
    build_adjacency();
  }

  [[nodiscard]] std::size_t num_nodes() const noexcept { return features_.rows(); }
  [[nodiscard]] std::size_t feature_dim() const noexcept { return features_.cols(); }
  [[nodiscard]] std::size_t num_classes() const noexcept { return num_classes_; }
  [[nodiscard]] std::size_t num_edges() const noexcept { return edges_.size(); }
  [[nodiscard]] const Tensor& features() const noexcept { return features_; }
  [[nodiscard]] const std::vector<Edge>& edges() const noexcept { return edges_; }
  [[nodiscard]] const std::vector<int>& labels() const noexcept { return labels_; }

  /// Sorted neighbor ids of node i, excluding i.
  [[nodiscard]] std::span<const NodeId> neighbors(NodeId i) const {
    if (i >= num_nodes()) {
      throw DataError("neighbors: node " + std::to_string(i) + " out of range");
    }
    return {adjacency_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }

  [[nodiscard]] std::size_t degree(NodeId i) const { return neighbors(i).size(); }

  [[nodiscard]] Graph with_edges(std::vector<Edge> edges) const {
    return Graph(features_, std::move(edges), labels_, num_classes_);
  }
  [[nodiscard]] Graph with_features(Tensor features) const {
    if (features.rows() != num_nodes()) throw ShapeError("with_features: row count changed");
    return Graph(std::move(features), edges_, labels_, num_classes_);
  }

  friend bool operator==(const Graph& a, const Graph& b) {
    return a.num_classes_ == b.num_classes_ && a.labels_ == b.labels_ && a.edges_ == b.edges_ &&
           a.features_ == b.features_;
  }

 private:
  void build_adjacency() {
    const std::size_t n = num_nodes();
    offsets_.assign(n + 1, 0);
    for (const Edge& e : edges_) {
      ++offsets_[e.src + 1];
      ++offsets_[e.dst + 1];
    }
    std::partial_sum(offsets_.begin(), offsets_.end(), offsets_.begin());
    adjacency_.assign(2 * edges_.size(), 0);
    std::vector<std::size_t> cursor(offsets_.begin(), offsets_.end() - 1);
    for (const Edge& e : edges_) {
      adjacency_[cursor[e.src]++] = e.dst;
      adjacency_[cursor[e.dst]++] = e.src;
    }
    for (std::size_t i = 0; i < n; ++i) {
      std::sort(adjacency_.begin() + static_cast<std::ptrdiff_t>(offsets_[i]),
                adjacency_.begin() + static_cast<std::ptrdiff_t>(offsets_[i + 1]));
    }
  }

  Tensor features_;
  std::vector<Edge> edges_;
  std::vector<int> labels_;
  std::size_t num_classes_ = 0;
  std::vector<std::size_t> offsets_{0};
  std::vector<NodeId> adjacency_;
};

/// Free-function form of Graph::neighbors.
inline std::span<const NodeId> neighbors(const Graph& g, NodeId i) { return g.neighbors(i); }

/// Disjoint train/val/test node sets; each sorted ascending.
struct SplitMasks {
  std::vector<NodeId> train;
  std::vector<NodeId> val;
  std::vector<NodeId> test;
  std::vector<std::string> warnings;

  friend bool operator==(const SplitMasks& a, const SplitMasks& b) {
    return a.train == b.train && a.val == b.val && a.test == b.test;
  }
};

enum class SplitKind { train, val, test };

inline const std::vector<NodeId>& mask_of(const SplitMasks& m, SplitKind k) {
  switch (k) {
    case SplitKind::train: return m.train;
    case SplitKind::val: return m.val;
    case SplitKind::test: return m.test;
  }
  return m.test;
}

struct SplitRatios {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
};

namespace detail {

/// Apportions round(ratio * total) items over classes by largest remainder (ties: lower class).
inline std::vector<std::size_t> apportion(const std::vector<std::size_t>& class_sizes, double ratio) {
  std::size_t total = 0;
  for (std::size_t s : class_sizes) total += s;
  const auto target = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(total)));
  std::vector<std::size_t> out(class_sizes.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < class_sizes.size(); ++c) {
    const double exact = ratio * static_cast<double>(class_sizes[c]);
    out[c] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    assigned += out[c];
    rem.emplace_back(exact - static_cast<double>(out[c]), c);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < target && k < rem.size(); ++k) {
    if (out[rem[k].second] < class_sizes[rem[k].second]) {
      ++out[rem[k].second];
      ++assigned;
    }
  }
  return out;
}

}  // namespace detail

/**
 * Stratified node split. Within each class the nodes are shuffled with a
 * seeded stream, then the first share goes to train, the next to val, the
 * next to test. Per-class counts are apportioned so the overall train size
 * is exactly round(ratio * N). When the ratios sum to one, every node not in
 * train/val lands in test.
 */
inline SplitMasks split_nodes(const Graph& graph, SplitRatios ratios, std::uint64_t seed) {
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0) {
    throw ConfigError("split_nodes: negative ratio");
  }
  const double total_ratio = ratios.train + ratios.val + ratios.test;
  if (total_ratio > 1.0 + 1e-9) throw ConfigError("split_nodes: ratios sum above 1");

  const std::size_t c = graph.num_classes();
  std::vector<std::vector<NodeId>> by_class(c);
  for (NodeId i = 0; i < graph.num_nodes(); ++i) {
    by_class[static_cast<std::size_t>(graph.labels()[i])].push_back(i);
  }
  std::vector<std::size_t> sizes(c);
  for (std::size_t k = 0; k < c; ++k) sizes[k] = by_class[k].size();

  const auto n_train = detail::apportion(sizes, ratios.train);
  const auto n_val = detail::apportion(sizes, ratios.val);
  const auto n_test = detail::apportion(sizes, ratios.test);
  const bool fill_test = std::abs(total_ratio - 1.0) < 1e-9;

  SplitMasks m;
  Rng rng = make_rng({seed, tag(Stream::split)});
  for (std::size_t k = 0; k < c; ++k) {
    auto& nodes = by_class[k];
    if (!nodes.empty() && nodes.size() < 3) {
      m.warnings.push_back("class " + std::to_string(k) + " has only " +
                           std::to_string(nodes.size()) + " node(s)");
    }
    std::shuffle(nodes.begin(), nodes.end(), rng);
    const std::size_t a = std::min(n_train[k], nodes.size());
    const std::size_t b = std::min(a + n_val[k], nodes.size());
    const std::size_t e = fill_test ? nodes.size() : std::min(b + n_test[k], nodes.size());
    m.train.insert(m.train.end(), nodes.begin(), nodes.begin() + static_cast<std::ptrdiff_t>(a));
    m.val.insert(m.val.end(), nodes.begin() + static_cast<std::ptrdiff_t>(a),
                 nodes.begin() + static_cast<std::ptrdiff_t>(b));
    m.test.insert(m.test.end(), nodes.begin() + static_cast<std::ptrdiff_t>(b),
                  nodes.begin() + static_cast<std::ptrdiff_t>(e));
  }
  std::sort(m.train.begin(), m.train.end());
  std::sort(m.val.begin(), m.val.end());
  std::sort(m.test.begin(), m.test.end());
  return m;
}

/// Parameters of a planted-partition stochastic block model.
struct SbmSpec {
  std::size_t blocks = 3;
  std::size_t nodes_per_block = 200;
  double p_in = 0.05;
  double p_out = 0.01;
  double feature_noise = 1.0;
  std::uint64_t seed = 0;
};

/**
 * Stochastic block model with one class per block. Features are the one-hot
 * block indicator plus i.i.d. Gaussian noise of standard deviation
 * `feature_noise`, so feature_dim == blocks.
 */
inline Graph generate_sbm(const SbmSpec& spec) {
  if (!(spec.p_out >= 0.0 && spec.p_out <= spec.p_in && spec.p_in <= 1.0)) {
    throw ConfigError("generate_sbm: need 0 <= p_out <= p_in <= 1");
  }
  if (spec.blocks == 0 || spec.nodes_per_block == 0) throw ConfigError("generate_sbm: empty model");
  if (spec.feature_noise < 0.0) throw ConfigError("generate_sbm: negative feature noise");
  const std::size_t n = spec.blocks * spec.nodes_per_block;
  Rng rng = make_rng({spec.seed, tag(Stream::sbm)});
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i / spec.nodes_per_block);

  std::vector<Edge> edges;
  for (NodeId i = 0; i < n; ++i) {
    for (NodeId j = i + 1; j < n; ++j) {
      const double p = labels[i] == labels[j] ? spec.p_in : spec.p_out;
      if (uniform01(rng) < p) edges.push_back({i, j});
    }
  }
  Tensor x(n, spec.blocks);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < spec.blocks; ++k) {
      x(i, k) = (static_cast<std::size_t>(labels[i]) == k ? 1.0 : 0.0) + spec.feature_noise * noise(rng);
    }
  }
  return Graph(std::move(x), std::move(edges), std::move(labels), spec.blocks);
}

}  // namespace fgssl
