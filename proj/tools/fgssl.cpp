// Command-line driver: prepare, train, sweep, ablate, cka.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "fgssl/fgssl.hpp"

namespace {

using namespace fgssl;

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kNumeric = 3, kIo = 4 };

struct Options {
  std::string config;
  std::vector<std::string> set;
  std::optional<std::size_t> threads;
  std::string out;
};

ExperimentConfig load(const Options& o) {
  std::optional<fs::path> file;
  if (!o.config.empty()) file = o.config;
  ExperimentConfig c = load_config(file, o.set);
  if (o.threads) c.train.threads = *o.threads;
  if (!o.out.empty()) c.output = o.out;
  return c;
}

fs::path output_dir(const ExperimentConfig& c) {
  const fs::path dir = c.output;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  auto out = detail::open_out(dir / "config.resolved.json");
  out << c.resolved.dump(2) << '\n';
  return dir;
}

void log(const std::string& msg) { std::cerr << "[fgssl] " << msg << std::endl; }

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

Dataset load_data(const ExperimentConfig& c) {
  Dataset d = prepare_dataset(c);
  log("graph: " + std::to_string(d.graph.num_nodes()) + " nodes, " + std::to_string(d.graph.num_edges()) +
      " edges, " + std::to_string(d.graph.num_classes()) + " classes, " + std::to_string(d.partition.num_clients) +
      " clients");
  for (const auto& n : d.notes) log(n);
  return d;
}

RunObserver progress() {
  return [](const std::string& label, std::uint64_t seed, const RunResult& r) {
    log(label + " seed " + std::to_string(seed) + ": final test " + percent(r.final_test) + ", best-val test " +
        percent(r.best_val_test) + " (round " + std::to_string(r.best_round) + ")");
  };
}

json summary_row(const MethodSummary& s) {
  const MeanStd f = s.final_stats(), b = s.best_val_stats();
  return {{"final_test_mean", f.mean}, {"final_test_std", f.std}, {"best_val_test_mean", b.mean},
          {"best_val_test_std", b.std}};
}

int cmd_prepare(const Options& o) {
  const ExperimentConfig c = load(o);
  const fs::path dir = output_dir(c);
  const Dataset d = load_data(c);
  save_partition(d.partition, dir / "partition.tsv");
  save_masks(d.masks, dir);
  json stats{{"nodes", d.graph.num_nodes()},
             {"edges", d.graph.num_edges()},
             {"classes", d.graph.num_classes()},
             {"train", d.masks.train.size()},
             {"val", d.masks.val.size()},
             {"test", d.masks.test.size()},
             {"notes", d.notes}};
  std::vector<std::size_t> sizes(d.partition.num_clients);
  for (std::size_t m = 0; m < sizes.size(); ++m) sizes[m] = d.partition.nodes_of(m).size();
  stats["client_sizes"] = sizes;
  auto out = detail::open_out(dir / "prepare.json");
  out << stats.dump(2) << '\n';
  log("wrote partition.tsv and masks.tsv to " + dir.string());
  return kOk;
}

void save_models(const fs::path& dir, const std::string& label, std::uint64_t seed, const RunResult& r) {
  const fs::path d = dir / "checkpoints" / label / ("seed" + std::to_string(seed));
  fs::create_directories(d);
  save_checkpoint(r.global_model, d / "global.ckpt");
  for (std::size_t m = 0; m < r.client_models.size(); ++m) {
    save_checkpoint(r.client_models[m], d / ("client" + std::to_string(m) + ".ckpt"));
  }
}

int cmd_train(const Options& o) {
  const ExperimentConfig c = load(o);
  const fs::path dir = output_dir(c);
  const Dataset d = load_data(c);
  std::vector<RoundReport> rows;
  std::vector<MethodSummary> summaries;
  const auto report = progress();
  for (Method m : c.methods) {
    TrainConfig cfg = c.train;
    cfg.method = m;
    const std::string label = to_string(m);
    bool first = true;
    SeedRuns runs = run_seeds(cfg, d, c.seeds, label, false, [&](const std::string& l, std::uint64_t seed, const RunResult& r) {
      report(l, seed, r);
      save_models(dir, l, seed, r);
      if (first) {
        const GnnModel& model = m == Method::local ? r.client_models.front() : r.global_model;
        write_logits_csv(predict(model, d.graph).second, d.graph.labels(), dir / ("logits_" + l + ".csv"));
        first = false;
      }
    });
    rows.insert(rows.end(), runs.rows.begin(), runs.rows.end());
    summaries.push_back(runs.summary);
    const MeanStd b = runs.summary.best_val_stats();
    log(label + ": best-val test " + percent(b.mean) + " +- " + percent(b.std));
  }
  write_metrics_csv(rows, dir / "metrics.csv");
  write_summary_json(summaries, dir / "summary.json");
  return kOk;
}

int cmd_sweep(const Options& o) {
  const ExperimentConfig c = load(o);
  const auto cells = sweep_cells(c.train, c.sweep);
  const fs::path dir = output_dir(c);
  const Dataset d = load_data(c);
  log("sweep: " + std::to_string(cells.size()) + " cells x " + std::to_string(c.methods.size()) + " methods");
  json table = json::array();
  std::vector<RoundReport> rows;
  for (const auto& [tag, base] : cells) {
    for (Method m : c.methods) {
      TrainConfig cfg = base;
      cfg.method = m;
      const std::string label = to_string(m) + tag.dump();
      SeedRuns runs = run_seeds(cfg, d, c.seeds, label, false, progress());
      rows.insert(rows.end(), runs.rows.begin(), runs.rows.end());
      json row = summary_row(runs.summary);
      row["method"] = to_string(m);
      row["cell"] = tag;
      table.push_back(row);
    }
  }
  auto out = detail::open_out(dir / "sweep.json");
  out << table.dump(2) << '\n';
  write_metrics_csv(rows, dir / "metrics.csv");
  return kOk;
}

int cmd_ablate(const Options& o) {
  const ExperimentConfig c = load(o);
  const fs::path dir = output_dir(c);
  const Dataset d = load_data(c);
  json table = json::array();
  std::vector<RoundReport> rows;
  std::vector<MethodSummary> summaries;
  for (const Variant& v : ablation_variants(c.train)) {
    SeedRuns runs = run_seeds(v.config, d, c.seeds, v.table + "/" + v.label, false, progress());
    rows.insert(rows.end(), runs.rows.begin(), runs.rows.end());
    summaries.push_back(runs.summary);
    json row = summary_row(runs.summary);
    row["table"] = v.table;
    row["variant"] = v.label;
    table.push_back(row);
  }
  auto out = detail::open_out(dir / "ablation.json");
  out << table.dump(2) << '\n';
  write_metrics_csv(rows, dir / "metrics.csv");
  write_summary_json(summaries, dir / "summary.json");
  return kOk;
}

int cmd_cka(const Options& o) {
  const ExperimentConfig c = load(o);
  if (c.cka_checkpoints.size() < 2) throw ConfigError("cka: cka.checkpoints needs at least two files");
  const fs::path dir = output_dir(c);
  std::vector<GnnModel> models;
  for (const auto& p : c.cka_checkpoints) models.push_back(load_checkpoint(p));
  const Graph g = load_dataset_graph(c);
  const SplitMasks masks = split_nodes(g, c.split, c.split_seed);
  const CkaReport r = pairwise_client_cka(models, g, masks.test);
  write_cka_csv(r, dir / "cka.csv");
  auto out = detail::open_out(dir / "cka.json");
  out << json{{"probe", r.probe}, {"mean_off_diagonal", r.mean_off_diagonal()}, {"checkpoints", c.cka_checkpoints}}.dump(2)
      << '\n';
  log("cka: mean off-diagonal " + std::to_string(r.mean_off_diagonal()));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated graph learning simulator"};
  app.require_subcommand(1);
  Options opts;
  int (*selected)(const Options&) = nullptr;
  const std::vector<std::pair<const char*, int (*)(const Options&)>> commands = {
      {"prepare", cmd_prepare}, {"train", cmd_train}, {"sweep", cmd_sweep}, {"ablate", cmd_ablate}, {"cka", cmd_cka}};
  const std::vector<std::string> help = {
      "Load or generate the graph, split it and write partition.tsv and masks.tsv",
      "Train every configured method for every seed; write metrics.csv and summary.json",
      "Run the Cartesian grid of sweep.* values",
      "Run the component and augmentation ablation grids",
      "Pairwise linear CKA of the checkpoints in cka.checkpoints"};
  for (std::size_t k = 0; k < commands.size(); ++k) {
    auto* sub = app.add_subcommand(commands[k].first, help[k]);
    sub->add_option("--config", opts.config, "JSON config file");
    sub->add_option("--set", opts.set, "Override a config key: key=value (repeatable)");
    sub->add_option("--threads", opts.threads, "Client worker threads (0: automatic)");
    sub->add_option("--out", opts.out, "Output directory");
    sub->callback([&selected, fn = commands[k].second] { selected = fn; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }
  const auto start = std::chrono::steady_clock::now();
  int code = kOther;
  try {
    code = selected(opts);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const ShapeError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOther;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  log("done in " + std::to_string(secs) + " s");
  return code;
}
