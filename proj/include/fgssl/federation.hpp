#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <optional>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "fgssl/augment.hpp"
#include "fgssl/autodiff.hpp"
#include "fgssl/gat.hpp"
#include "fgssl/graph.hpp"
#include "fgssl/losses.hpp"
#include "fgssl/optim.hpp"
#include "fgssl/partition.hpp"

namespace fgssl {

enum class Method { local, global, fedavg, fedprox, fgssl };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::local: return "local";
    case Method::global: return "global";
    case Method::fedavg: return "fedavg";
    case Method::fedprox: return "fedprox";
    case Method::fgssl: return "fgssl";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  for (Method m : {Method::local, Method::global, Method::fedavg, Method::fedprox, Method::fgssl})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown method '" + s + "' (expected local|global|fedavg|fedprox|fgssl)");
}

/// What happens to momentum buffers when a client receives the global model.
enum class VelocityPolicy { reset, carry };

struct TrainConfig {
  Method method = Method::fgssl;
  std::size_t rounds = 200;
  std::size_t epochs = 4;
  std::size_t steps_per_epoch = 1;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  VelocityPolicy velocity = VelocityPolicy::reset;
  std::size_t hidden = 128;
  std::size_t heads = 1;
  FnscConfig fnsc;
  FgsdConfig fgsd;
  AugmentPair augment;
  double prox_mu = 0.01;
  std::size_t threads = 0;  ///< 0: one worker per client, capped by the hardware

  void validate() const {
    if (rounds == 0 || epochs == 0 || steps_per_epoch == 0) throw ConfigError("rounds, epochs and steps must be >= 1");
    if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be non-negative");
    if (!(fnsc.tau > 0.0) || !(fgsd.omega > 0.0)) throw ConfigError("tau and omega must be positive");
    if (fnsc.lambda < 0.0 || fgsd.lambda < 0.0) throw ConfigError("loss weights must be non-negative");
    if (prox_mu < 0.0) throw ConfigError("prox mu must be non-negative");
    augment.strong.validate();
    augment.weak.validate();
  }
};

struct ClientState {
  std::size_t id = 0;
  Subgraph data;
  GnnModel model;
  SgdState optimizer;
};

struct ServerState {
  GnnModel model;
  std::size_t round = 0;
};

/// Loss components of the last local epoch.
struct EpochLosses {
  double ce = 0.0;
  double fnsc = 0.0;
  double fgsd = 0.0;
  double total = 0.0;
};

/// Copies the global parameters into every client; momentum is cleared under the reset policy.
inline void broadcast(const ServerState& server, std::vector<ClientState>& clients,
                      VelocityPolicy policy = VelocityPolicy::reset) {
  for (ClientState& c : clients) {
    if (c.model.spec() != server.model.spec()) throw ShapeError("broadcast: client model shape differs");
    c.model = server.model;
    if (policy == VelocityPolicy::reset) c.optimizer.reset();
  }
}

/**
 * @brief E local epochs on one client.
 *
 * Each epoch: cross-entropy of the local model on the un-augmented graph's
 * train nodes. FedProx adds the proximal term. FGSSL additionally draws a
 * strong and a weak view, contrasts local strong-view embeddings against
 * frozen global weak-view embeddings, and distills the global neighbor
 * similarity distribution into the local one on the original adjacency.
 * Terms with zero weight are not built at all.
 */
inline EpochLosses local_update(ClientState& client, const GnnModel& global_snapshot, const TrainConfig& cfg,
                                std::uint64_t seed, std::size_t round) {
  const Graph& graph = client.data.graph;
  const std::vector<NodeId>& train = client.data.masks.train;
  EpochLosses last;
  if (train.empty()) return last;
  client.optimizer.learning_rate = cfg.learning_rate;
  client.optimizer.momentum = cfg.momentum;
  client.optimizer.weight_decay = cfg.weight_decay;

  const bool fgssl = cfg.method == Method::fgssl;
  const bool use_fnsc = fgssl && cfg.fnsc.lambda != 0.0 && classes_in(graph.labels(), train) >= 2;
  const bool use_fgsd = fgssl && cfg.fgsd.lambda != 0.0;
  const NeighborPairs pairs = use_fgsd ? NeighborPairs::from(graph) : NeighborPairs{};

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t step = 0; step < cfg.steps_per_epoch; ++step) {
      try {
        Tape tape;
        const std::vector<Var> params = bind(client.model, tape, true);
        const ForwardResult plain = model_forward(client.model, params, graph);
        Var ce = cross_entropy(plain.logits, graph.labels(), train);
        if (cfg.method == Method::fedprox && cfg.prox_mu != 0.0) {
          ce = add(ce, prox_term(params, global_snapshot.params(), cfg.prox_mu));
        }
        std::optional<Var> fnsc, fgsd;
        if (use_fnsc || use_fgsd) {
          const std::uint64_t view_epoch = epoch * cfg.steps_per_epoch + step;
          const auto [strong, weak] = make_views(graph, cfg.augment, seed, round, view_epoch, client.id);
          const MessageIndex strong_index = MessageIndex::from(strong);
          const MessageIndex weak_index = MessageIndex::from(weak);
          const std::vector<Var> frozen = bind(global_snapshot, tape, false);
          const Var h_local = extractor_forward(client.model, params, tape.constant(strong.features()), strong_index);
          const Var h_global = extractor_forward(global_snapshot, frozen, tape.constant(weak.features()), weak_index);
          if (use_fnsc) {
            const Var keys = cfg.fnsc.key_source == KeySource::global ? h_global : h_local;
            fnsc = fnsc_loss(h_local, keys, graph.labels(), train, cfg.fnsc);
          }
          if (use_fgsd) {
            const Var z_local = classifier_forward(client.model, params, h_local, strong_index);
            const Var z_global = classifier_forward(global_snapshot, frozen, h_global, weak_index);
            fgsd = fgsd_loss(z_local, z_global, pairs, cfg.fgsd.omega);
          }
        }
        const Var loss = total_loss(ce, fnsc, fgsd, cfg.fnsc.lambda, cfg.fgsd.lambda);
        tape.backward(loss);
        std::vector<Tensor> grads;
        grads.reserve(params.size());
        for (const Var& p : params) grads.push_back(tape.grad(p));
        sgd_step(client.model.params(), grads, client.optimizer);
        last = {ce.value()[0], fnsc ? fnsc->value()[0] : 0.0, fgsd ? fgsd->value()[0] : 0.0, loss.value()[0]};
      } catch (const NumericError& e) {
        throw NumericError("client " + std::to_string(client.id) + " round " + std::to_string(round) + " epoch " +
                           std::to_string(epoch) + ": " + e.what());
      }
    }
  }
  return last;
}

/// Weighted mean of client parameter sets, summed in client order.
inline std::vector<Tensor> aggregate(const std::vector<const std::vector<Tensor>*>& client_params,
                                     const std::vector<std::size_t>& sizes) {
  if (client_params.empty() || client_params.size() != sizes.size()) {
    throw ShapeError("aggregate: " + std::to_string(client_params.size()) + " parameter sets, " +
                     std::to_string(sizes.size()) + " sizes");
  }
  double total = 0.0;
  for (std::size_t s : sizes) total += static_cast<double>(s);
  if (total <= 0.0) throw ConfigError("aggregate: total client size is zero");
  const std::size_t blocks = client_params.front()->size();
  for (const auto* p : client_params) {
    if (p->size() != blocks) throw ShapeError("aggregate: block count mismatch");
    for (std::size_t k = 0; k < blocks; ++k) require_same_shape((*p)[k], (*client_params.front())[k], "aggregate");
  }
  std::vector<Tensor> out = *client_params.front();
  const double w0 = static_cast<double>(sizes.front()) / total;
  for (Tensor& t : out)
    for (double& v : t.data()) v *= w0;
  for (std::size_t m = 1; m < client_params.size(); ++m) {
    const double w = static_cast<double>(sizes[m]) / total;
    for (std::size_t k = 0; k < blocks; ++k) {
      auto& dst = out[k].data();
      const auto& src = (*client_params[m])[k].data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += w * src[i];
    }
  }
  return out;
}

inline void aggregate(ServerState& server, const std::vector<ClientState>& clients) {
  std::vector<const std::vector<Tensor>*> params;
  std::vector<std::size_t> sizes;
  for (const ClientState& c : clients) {
    params.push_back(&c.model.params());
    sizes.push_back(c.data.graph.num_nodes());
  }
  server.model.params() = aggregate(params, sizes);
}

struct Accuracy {
  std::size_t correct = 0;
  std::size_t total = 0;
  [[nodiscard]] double value() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
};

/// Row-wise argmax, lowest index on ties.
inline std::vector<int> argmax_rows(const Tensor& z) {
  std::vector<int> out(z.rows());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const auto r = z.row(i);
    out[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

inline Accuracy count_correct(const Tensor& logits, const std::vector<int>& labels, const std::vector<NodeId>& nodes) {
  const auto pred = argmax_rows(logits);
  Accuracy a;
  for (NodeId i : nodes) {
    a.correct += pred[i] == labels[i] ? 1 : 0;
    ++a.total;
  }
  return a;
}

/// Validation and test accuracy of one model pooled over every subgraph, one forward pass per subgraph.
inline std::pair<double, double> evaluate_val_test(const GnnModel& model, const std::vector<Subgraph>& parts) {
  Accuracy val, test;
  for (const Subgraph& s : parts) {
    if (s.masks.val.empty() && s.masks.test.empty()) continue;
    const Tensor z = predict(model, s.graph).second;
    const Accuracy v = count_correct(z, s.graph.labels(), s.masks.val);
    const Accuracy t = count_correct(z, s.graph.labels(), s.masks.test);
    val.correct += v.correct;
    val.total += v.total;
    test.correct += t.correct;
    test.total += t.total;
  }
  if (val.total == 0 || test.total == 0) throw ConfigError("evaluate: no nodes in the validation or test split");
  return {val.value(), test.value()};
}

/// Accuracy of one model pooled over every subgraph's split nodes.
inline double evaluate(const GnnModel& model, const std::vector<Subgraph>& parts, SplitKind split) {
  Accuracy acc;
  for (const Subgraph& s : parts) {
    const auto& nodes = mask_of(s.masks, split);
    if (nodes.empty()) continue;
    const Tensor z = predict(model, s.graph).second;
    const Accuracy a = count_correct(z, s.graph.labels(), nodes);
    acc.correct += a.correct;
    acc.total += a.total;
  }
  if (acc.total == 0) throw ConfigError("evaluate: no nodes in the requested split");
  return acc.value();
}

struct RoundReport {
  std::uint64_t seed = 0;
  std::size_t round = 0;
  std::string method;
  double loss_ce = 0.0;
  double loss_fnsc = 0.0;
  double loss_fgsd = 0.0;
  double loss_total = 0.0;
  double val_acc = 0.0;
  double test_acc = 0.0;

  friend bool operator==(const RoundReport&, const RoundReport&) = default;
};

struct RunResult {
  std::vector<RoundReport> rounds;
  double final_test = 0.0;
  double best_val = -1.0;
  double best_val_test = 0.0;
  std::size_t best_round = 0;
  GnnModel global_model;
  std::vector<GnnModel> client_models;
};

namespace detail {

/// Runs fn(i) for i in [0, n) on up to `threads` workers; rethrows the first failure by index.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  pool.clear();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

/**
 * @brief Full federated run for one seed.
 *
 * `partition` assigns nodes of `graph` to clients (ignored by the Global
 * method, which trains a single client holding the whole graph with momentum
 * carried across rounds). Local clients never aggregate; their accuracy is
 * the mean over clients of each local model's pooled accuracy on every
 * client's split nodes.
 */
inline RunResult run_experiment(const TrainConfig& cfg, const Graph& graph, const SplitMasks& masks,
                                const ClientPartition& partition, std::uint64_t seed) {
  cfg.validate();
  TrainConfig run_cfg = cfg;
  ClientPartition parts = partition;
  if (cfg.method == Method::global) {
    parts.num_clients = 1;
    parts.client_of.assign(graph.num_nodes(), 0);
    run_cfg.velocity = VelocityPolicy::carry;
  }
  const std::vector<Subgraph> subgraphs = client_subgraphs(graph, masks, parts);
  const ModelSpec spec{graph.feature_dim(), cfg.hidden, graph.num_classes(), cfg.heads};

  ServerState server{make_model(spec, seed), 0};
  std::vector<ClientState> clients;
  clients.reserve(subgraphs.size());
  for (std::size_t m = 0; m < subgraphs.size(); ++m) clients.push_back({m, subgraphs[m], server.model, {}});

  const bool federated = cfg.method != Method::local;
  RunResult res;
  std::vector<EpochLosses> losses(clients.size());
  const std::size_t workers =
      cfg.threads != 0 ? cfg.threads : std::max<std::size_t>(1, std::thread::hardware_concurrency());
  for (std::size_t t = 0; t < cfg.rounds; ++t) {
    server.round = t;
    if (federated || t == 0) broadcast(server, clients, run_cfg.velocity);
    const GnnModel snapshot = server.model;
    detail::parallel_for(clients.size(), workers, [&](std::size_t m) {
      losses[m] = local_update(clients[m], federated ? snapshot : clients[m].model, run_cfg, seed, t);
    });
    if (federated) aggregate(server, clients);

    RoundReport row;
    row.seed = seed;
    row.round = t;
    row.method = to_string(cfg.method);
    double weight = 0.0;
    for (std::size_t m = 0; m < clients.size(); ++m) {
      const double w = static_cast<double>(clients[m].data.graph.num_nodes());
      row.loss_ce += w * losses[m].ce;
      row.loss_fnsc += w * losses[m].fnsc;
      row.loss_fgsd += w * losses[m].fgsd;
      row.loss_total += w * losses[m].total;
      weight += w;
    }
    row.loss_ce /= weight;
    row.loss_fnsc /= weight;
    row.loss_fgsd /= weight;
    row.loss_total /= weight;
    if (federated) {
      std::tie(row.val_acc, row.test_acc) = evaluate_val_test(server.model, subgraphs);
    } else {
      for (const ClientState& c : clients) {
        const auto [val, test] = evaluate_val_test(c.model, subgraphs);
        row.val_acc += val;
        row.test_acc += test;
      }
      row.val_acc /= static_cast<double>(clients.size());
      row.test_acc /= static_cast<double>(clients.size());
    }
    if (row.val_acc > res.best_val) {
      res.best_val = row.val_acc;
      res.best_val_test = row.test_acc;
      res.best_round = t;
    }
    res.rounds.push_back(row);
  }
  res.final_test = res.rounds.back().test_acc;
  res.global_model = server.model;
  for (const ClientState& c : clients) res.client_models.push_back(c.model);
  return res;
}

}  // namespace fgssl
