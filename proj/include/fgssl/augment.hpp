#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fgssl/errors.hpp"
#include "fgssl/graph.hpp"
#include "fgssl/rng.hpp"

namespace fgssl {

/// Edge-removal and feature-dimension-masking probabilities for one view.
struct AugmentConfig {
  double p_edge_remove = 0.0;
  double p_feature_mask = 0.0;

  void validate() const {
    if (p_edge_remove < 0.0 || p_edge_remove > 1.0 || p_feature_mask < 0.0 || p_feature_mask > 1.0) {
      throw ConfigError("augmentation probabilities must lie in [0, 1]");
    }
  }
  friend bool operator==(const AugmentConfig&, const AugmentConfig&) = default;
};

/// Strong view feeds the trainable local model, weak view the frozen global one.
struct AugmentPair {
  AugmentConfig strong{0.4, 0.4};
  AugmentConfig weak{0.2, 0.2};
};

/// Drops each stored undirected edge independently with probability p.
inline Graph remove_edges(const Graph& g, double p, Rng& rng) {
  if (p < 0.0 || p > 1.0) throw ConfigError("remove_edges: p outside [0, 1]");
  if (p == 0.0) return g;
  std::vector<Edge> kept;
  kept.reserve(g.num_edges());
  for (const Edge& e : g.edges())
    if (!(uniform01(rng) < p)) kept.push_back(e);
  return g.with_edges(std::move(kept));
}

/// Zeroes whole feature columns; one keep/zero draw per dimension shared by all nodes.
inline Graph mask_features(const Graph& g, double p, Rng& rng) {
  if (p < 0.0 || p > 1.0) throw ConfigError("mask_features: p outside [0, 1]");
  if (p == 0.0) return g;
  std::vector<char> masked(g.feature_dim());
  bool any = false;
  for (auto& m : masked) {
    m = uniform01(rng) < p;
    any = any || m;
  }
  if (!any) return g;
  Tensor x = g.features();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto row = x.row(i);
    for (std::size_t j = 0; j < row.size(); ++j)
      if (masked[j]) row[j] = 0.0;
  }
  return g.with_features(std::move(x));
}

inline Graph augment(const Graph& g, const AugmentConfig& c, Rng& rng) {
  c.validate();
  Graph out = remove_edges(g, c.p_edge_remove, rng);
  return mask_features(out, c.p_feature_mask, rng);
}

/// Draws the (strong, weak) views from two independent streams.
inline std::pair<Graph, Graph> make_views(const Graph& g, const AugmentPair& pair, Rng& strong_rng, Rng& weak_rng) {
  return {augment(g, pair.strong, strong_rng), augment(g, pair.weak, weak_rng)};
}

/// Stream keys derived from (seed, round, epoch, client).
inline std::pair<Graph, Graph> make_views(const Graph& g, const AugmentPair& pair, std::uint64_t seed,
                                          std::uint64_t round, std::uint64_t epoch, std::uint64_t client) {
  Rng s = make_rng({seed, tag(Stream::augment_strong), round, epoch, client});
  Rng w = make_rng({seed, tag(Stream::augment_weak), round, epoch, client});
  return make_views(g, pair, s, w);
}

}  // namespace fgssl
