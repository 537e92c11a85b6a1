#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fgssl/analysis.hpp"
#include "fgssl/config.hpp"
#include "fgssl/federation.hpp"
#include "fgssl/graph_io.hpp"
#include "fgssl/partition.hpp"

namespace fgssl {

/// Graph, split and client partition shared by every run of one experiment.
struct Dataset {
  Graph graph;
  SplitMasks masks;
  ClientPartition partition;
  std::vector<std::string> notes;
};

inline Graph load_dataset_graph(const ExperimentConfig& c) {
  return c.uses_sbm() ? generate_sbm(c.sbm) : load_graph(c.dataset_path);
}

/// Loads or generates the graph, splits it, and partitions it by Louvain (or reads the partition file).
inline Dataset prepare_dataset(const ExperimentConfig& c) {
  Dataset d{load_dataset_graph(c), {}, {}, {}};
  d.masks = split_nodes(d.graph, c.split, c.split_seed);
  d.notes = d.masks.warnings;
  if (!c.partition_file.empty()) {
    d.partition = load_partition(c.partition_file, d.graph.num_nodes());
  } else if (c.clients == 1) {
    d.partition.num_clients = 1;
    d.partition.client_of.assign(d.graph.num_nodes(), 0);
  } else {
    const CommunityAssignment comm = louvain_partition(d.graph, c.partition_seed);
    d.notes.push_back("louvain found " + std::to_string(comm.num_communities) + " communities");
    d.partition = communities_to_clients(comm, c.clients, c.partition_seed);
  }
  return d;
}

/// Results of one configuration across all seeds.
struct SeedRuns {
  MethodSummary summary;
  std::vector<RoundReport> rows;
  std::vector<RunResult> runs;
};

using RunObserver = std::function<void(const std::string& label, std::uint64_t seed, const RunResult&)>;

inline SeedRuns run_seeds(const TrainConfig& cfg, const Dataset& d, const std::vector<std::uint64_t>& seeds,
                          const std::string& label, bool keep_runs = false, const RunObserver& observe = {}) {
  SeedRuns out;
  out.summary.label = label;
  for (std::uint64_t seed : seeds) {
    RunResult r = run_experiment(cfg, d.graph, d.masks, d.partition, seed);
    for (RoundReport row : r.rounds) {
      row.method = label;
      out.rows.push_back(row);
    }
    out.summary.add(seed, r);
    if (observe) observe(label, seed, r);
    if (keep_runs) out.runs.push_back(std::move(r));
  }
  return out;
}

/// One labelled training configuration of an ablation table.
struct Variant {
  std::string table;
  std::string label;
  TrainConfig config;
};

/// FNSC/FGSD on-off grid, then the FNSC-only augmentation strength grid.
inline std::vector<Variant> ablation_variants(const TrainConfig& base) {
  std::vector<Variant> v;
  auto with = [&](double lc, double ld) {
    TrainConfig c = base;
    c.method = Method::fgssl;
    c.fnsc.lambda = lc;
    c.fgsd.lambda = ld;
    return c;
  };
  const double lc = base.fnsc.lambda, ld = base.fgsd.lambda;
  v.push_back({"components", "none", with(0.0, 0.0)});
  v.push_back({"components", "fgsd_only", with(0.0, ld)});
  v.push_back({"components", "fnsc_only", with(lc, 0.0)});
  v.push_back({"components", "full", with(lc, ld)});
  const AugmentConfig strong = base.augment.strong, weak = base.augment.weak;
  for (const auto& [local_name, local] : {std::pair{"strong", strong}, std::pair{"weak", weak}}) {
    for (const auto& [global_name, global] : {std::pair{"strong", strong}, std::pair{"weak", weak}}) {
      TrainConfig c = with(lc, 0.0);
      c.augment.strong = local;
      c.augment.weak = global;
      v.push_back({"augmentation", std::string("local_") + local_name + "_global_" + global_name, c});
    }
  }
  return v;
}

/// Cartesian product of the non-empty sweep axes applied on top of `base`.
inline std::vector<std::pair<json, TrainConfig>> sweep_cells(const TrainConfig& base, const SweepGrid& g) {
  if (g.cells() == 0) throw ConfigError("sweep: every grid axis is empty");
  std::vector<std::pair<json, TrainConfig>> cells{{json::object(), base}};
  auto expand = [&](const std::vector<double>& axis, const char* name, auto apply) {
    if (axis.empty()) return;
    std::vector<std::pair<json, TrainConfig>> next;
    for (const auto& [tag, cfg] : cells) {
      for (double value : axis) {
        json t = tag;
        t[name] = value;
        TrainConfig c = cfg;
        apply(c, value);
        next.emplace_back(std::move(t), std::move(c));
      }
    }
    cells = std::move(next);
  };
  expand(g.tau, "tau", [](TrainConfig& c, double v) { c.fnsc.tau = v; });
  expand(g.omega, "omega", [](TrainConfig& c, double v) { c.fgsd.omega = v; });
  expand(g.lambda_c, "lambda_c", [](TrainConfig& c, double v) { c.fnsc.lambda = v; });
  expand(g.lambda_d, "lambda_d", [](TrainConfig& c, double v) { c.fgsd.lambda = v; });
  expand(g.lr, "lr", [](TrainConfig& c, double v) { c.learning_rate = v; });
  for (auto& [tag, c] : cells) c.validate();
  return cells;
}

}  // namespace fgssl
