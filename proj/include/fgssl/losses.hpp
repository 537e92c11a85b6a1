#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fgssl/autodiff.hpp"
#include "fgssl/errors.hpp"
#include "fgssl/graph.hpp"

namespace fgssl {

/// Mean over `mask` of -log softmax(z_i)[label_i].
inline Var cross_entropy(Var logits, const std::vector<int>& labels, const std::vector<NodeId>& mask) {
  if (mask.empty()) throw ConfigError("cross_entropy: empty mask");
  std::vector<std::size_t> cols(mask.size());
  for (std::size_t k = 0; k < mask.size(); ++k) {
    if (mask[k] >= labels.size()) throw ShapeError("cross_entropy: mask node out of range");
    cols[k] = static_cast<std::size_t>(labels[mask[k]]);
  }
  return scale(mean(select(row_log_softmax(logits), mask, cols)), -1.0);
}

/// exp(cos(h_i, h_j) / tau); zero vectors have no cosine.
inline double phi(std::span<const double> hi, std::span<const double> hj, double tau) {
  if (hi.size() != hj.size()) throw ShapeError("phi: length mismatch");
  if (!(tau > 0.0)) throw ConfigError("phi: tau must be positive");
  double d = 0.0, ni = 0.0, nj = 0.0;
  for (std::size_t k = 0; k < hi.size(); ++k) {
    d += hi[k] * hj[k];
    ni += hi[k] * hi[k];
    nj += hj[k] * hj[k];
  }
  if (ni == 0.0 || nj == 0.0) throw NumericError("phi: cosine undefined for a zero vector");
  return std::exp(d / (std::sqrt(ni) * std::sqrt(nj)) / tau);
}

enum class KeySource {
  global,  ///< keys from the frozen global extractor on the weak view
  local,   ///< keys from the local extractor itself (node-wise supervised contrast)
};

struct FnscConfig {
  double tau = 0.1;
  double lambda = 1.0;
  KeySource key_source = KeySource::global;
};

struct FgsdConfig {
  double omega = 5.0;
  double lambda = 1.0;
};

/**
 * Supervised contrast on a precomputed logit matrix S (queries x keys).
 *
 * For query i with positive keys P_i (same label) and negative keys K_i:
 *   L_i = -1/|P_i| * sum_p log( e^{S_ip} / (e^{S_ip} + sum_k e^{S_ik}) )
 * and the result is the mean of L_i over queries. With `exclude_self`,
 * key i is not a positive of query i, and queries left without positives
 * are skipped. Otherwise an empty P_i is an error. A query without
 * negatives is always an error.
 */
inline Var supervised_contrast(Var scores, const std::vector<int>& query_labels, const std::vector<int>& key_labels,
                               bool exclude_self) {
  const Tensor& s = scores.value();
  if (s.rows() != query_labels.size() || s.cols() != key_labels.size()) {
    throw ShapeError("supervised_contrast: score matrix " + s.shape_str() + " vs labels");
  }
  if (exclude_self && s.rows() != s.cols()) throw ShapeError("supervised_contrast: self exclusion needs a square matrix");
  const std::size_t nq = s.rows(), nk = s.cols();

  std::vector<double> row_max(nq), neg_sum(nq), pos_count(nq, 0.0);
  std::vector<char> eligible(nq, 0);
  double total = 0.0;
  std::size_t n_eligible = 0;
  for (std::size_t i = 0; i < nq; ++i) {
    const auto r = s.row(i);
    row_max[i] = *std::max_element(r.begin(), r.end());
    double neg = 0.0;
    std::size_t pos = 0, negs = 0;
    for (std::size_t k = 0; k < nk; ++k) {
      if (key_labels[k] == query_labels[i]) {
        if (!(exclude_self && k == i)) ++pos;
      } else {
        neg += std::exp(r[k] - row_max[i]);
        ++negs;
      }
    }
    if (negs == 0) {
      throw ConfigError("supervised_contrast: query " + std::to_string(i) + " has no negative keys (single class)");
    }
    if (pos == 0) {
      if (exclude_self) continue;
      throw ConfigError("supervised_contrast: query " + std::to_string(i) + " has no key of its class");
    }
    eligible[i] = 1;
    neg_sum[i] = neg;
    pos_count[i] = static_cast<double>(pos);
    ++n_eligible;
    double li = 0.0;
    for (std::size_t k = 0; k < nk; ++k) {
      if (key_labels[k] != query_labels[i] || (exclude_self && k == i)) continue;
      const double sp = r[k] - row_max[i];
      li += -sp + std::log(std::exp(sp) + neg);
    }
    total += li / pos_count[i];
  }
  if (n_eligible == 0) throw ConfigError("supervised_contrast: no query has a positive key");
  const double n = static_cast<double>(n_eligible);

  const std::size_t is = scores.id();
  return scores.tape()->record(
      Tensor::scalar(total / n), {scores},
      [is, query_labels, key_labels, exclude_self, row_max, neg_sum, pos_count, eligible, n](Tape& tp,
                                                                                             std::size_t self) {
        const double g = tp.grad_at(self)[0];
        const Tensor& sv = tp.value_at(is);
        Tensor& gs = tp.grad_buffer(is);
        for (std::size_t i = 0; i < sv.rows(); ++i) {
          if (!eligible[i]) continue;
          const double w = g / (pos_count[i] * n);
          const auto r = sv.row(i);
          double inv_den_sum = 0.0;
          for (std::size_t k = 0; k < sv.cols(); ++k) {
            if (key_labels[k] != query_labels[i] || (exclude_self && k == i)) continue;
            const double ep = std::exp(r[k] - row_max[i]);
            const double den = ep + neg_sum[i];
            inv_den_sum += 1.0 / den;
            gs(i, k) += w * (-1.0 + ep / den);
          }
          for (std::size_t k = 0; k < sv.cols(); ++k) {
            if (key_labels[k] == query_labels[i]) continue;
            gs(i, k) += w * std::exp(r[k] - row_max[i]) * inv_den_sum;
          }
        }
      },
      "supervised_contrast");
}

/**
 * FNSC loss. Queries are rows `mask` of `h_query`; keys are the same rows of
 * `h_key`. Similarities are cosines scaled by 1/tau. With global keys the
 * query's own key row is one of its positives; with local keys it is not.
 */
inline Var fnsc_loss(Var h_query, Var h_key, const std::vector<int>& labels, const std::vector<NodeId>& mask,
                     const FnscConfig& config) {
  if (!(config.tau > 0.0)) throw ConfigError("fnsc_loss: tau must be positive");
  require_same_shape(h_query.value(), h_key.value(), "fnsc_loss");
  if (mask.empty()) throw ConfigError("fnsc_loss: empty mask");
  std::vector<int> mlabels(mask.size());
  for (std::size_t k = 0; k < mask.size(); ++k) mlabels[k] = labels.at(mask[k]);
  const Var q = row_l2_normalize(gather_rows(h_query, mask));
  const Var k = row_l2_normalize(gather_rows(h_key, mask));
  const Var s = scale(matmul(q, transpose(k)), 1.0 / config.tau);
  return supervised_contrast(s, mlabels, mlabels, config.key_source == KeySource::local);
}

/// Number of distinct labels among `mask`.
inline std::size_t classes_in(const std::vector<int>& labels, const std::vector<NodeId>& mask) {
  std::vector<int> seen;
  for (NodeId i : mask) seen.push_back(labels.at(i));
  std::sort(seen.begin(), seen.end());
  return static_cast<std::size_t>(std::unique(seen.begin(), seen.end()) - seen.begin());
}

/// softmax over j in `neighbors` of (z_i . z_j) / omega.
inline std::vector<double> similarity_distribution(const Tensor& logits, NodeId i, std::span<const NodeId> neighbors,
                                                   double omega) {
  if (neighbors.empty()) throw ConfigError("similarity_distribution: node has no neighbors");
  if (!(omega > 0.0)) throw ConfigError("similarity_distribution: omega must be positive");
  std::vector<double> s(neighbors.size());
  for (std::size_t k = 0; k < neighbors.size(); ++k) {
    double d = 0.0;
    for (std::size_t c = 0; c < logits.cols(); ++c) d += logits(i, c) * logits(neighbors[k], c);
    s[k] = d / omega;
  }
  const double m = *std::max_element(s.begin(), s.end());
  double z = 0.0;
  for (double& v : s) z += (v = std::exp(v - m));
  for (double& v : s) v /= z;
  return s;
}

/// Directed neighbor pairs (i, j), grouped by i, without self-loops.
struct NeighborPairs {
  SegmentIds node;
  std::vector<std::size_t> neighbor;
  std::size_t num_nodes = 0;
  std::size_t num_eligible = 0;  ///< nodes with at least one neighbor

  static NeighborPairs from(const Graph& g) {
    NeighborPairs p;
    p.num_nodes = g.num_nodes();
    for (NodeId i = 0; i < g.num_nodes(); ++i) {
      const auto nb = g.neighbors(i);
      if (!nb.empty()) ++p.num_eligible;
      for (NodeId j : nb) {
        p.node.push_back(i);
        p.neighbor.push_back(j);
      }
    }
    return p;
  }
};

/// Segment log-softmax of (z_i . z_j) / omega over each node's neighbor pairs.
inline Var neighbor_log_similarity(Var logits, const NeighborPairs& pairs, double omega) {
  const Var dots = dot(gather_rows(logits, pairs.node), gather_rows(logits, pairs.neighbor));
  return segment_log_softmax(scale(dots, 1.0 / omega), pairs.node, pairs.num_nodes);
}

/**
 * FGSD loss: mean over nodes with at least one neighbor of
 * KL(S_global || S_local), both similarity distributions over the stored
 * adjacency. Returns a constant zero when no node has a neighbor.
 */
inline Var fgsd_loss(Var logits_local, Var logits_global, const NeighborPairs& pairs, double omega) {
  if (!(omega > 0.0)) throw ConfigError("fgsd_loss: omega must be positive");
  require_same_shape(logits_local.value(), logits_global.value(), "fgsd_loss");
  Tape& tape = *logits_local.tape();
  if (pairs.num_eligible == 0) return tape.constant(Tensor::scalar(0.0));
  const Var log_local = neighbor_log_similarity(logits_local, pairs, omega);
  const Var log_global = neighbor_log_similarity(logits_global, pairs, omega);
  const Var kl = sum(mul(exp(log_global), sub(log_global, log_local)));
  return scale(kl, 1.0 / static_cast<double>(pairs.num_eligible));
}

inline Var fgsd_loss(Var logits_local, Var logits_global, const Graph& graph, double omega) {
  return fgsd_loss(logits_local, logits_global, NeighborPairs::from(graph), omega);
}

/// L = CE + lambda_c * FNSC + lambda_d * FGSD; absent terms are left out of the graph.
inline Var total_loss(Var ce, std::optional<Var> fnsc, std::optional<Var> fgsd, double lambda_c, double lambda_d) {
  Var total = ce;
  if (fnsc && lambda_c != 0.0) total = add(total, scale(*fnsc, lambda_c));
  if (fgsd && lambda_d != 0.0) total = add(total, scale(*fgsd, lambda_d));
  return total;
}

/// (mu / 2) * ||theta - theta_global||^2 over all parameter blocks.
inline Var prox_term(std::span<const Var> params, const std::vector<Tensor>& global, double mu) {
  if (params.size() != global.size() || params.empty()) throw ShapeError("prox_term: parameter block mismatch");
  Tape& tape = *params.front().tape();
  std::optional<Var> acc;
  for (std::size_t k = 0; k < params.size(); ++k) {
    require_same_shape(params[k].value(), global[k], "prox_term");
    const Var diff = sub(params[k], tape.constant(global[k]));
    const Var sq = sum(mul(diff, diff));
    acc = acc ? add(*acc, sq) : sq;
  }
  return scale(*acc, 0.5 * mu);
}

}  // namespace fgssl
