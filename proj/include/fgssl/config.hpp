#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fgssl/federation.hpp"
#include "fgssl/graph_io.hpp"

namespace fgssl {

using nlohmann::json;

/// Every accepted key with its default. Keys are dotted paths into the config file.
inline const std::map<std::string, json>& config_defaults() {
  static const std::map<std::string, json> d = {
      {"dataset.path", ""},
      {"dataset.sbm.blocks", 3},
      {"dataset.sbm.nodes_per_block", 200},
      {"dataset.sbm.p_in", 0.05},
      {"dataset.sbm.p_out", 0.01},
      {"dataset.sbm.feature_noise", 1.0},
      {"dataset.sbm.seed", 0},
      {"split.train", 0.6},
      {"split.val", 0.2},
      {"split.test", 0.2},
      {"split.seed", 0},
      {"partition.clients", 5},
      {"partition.seed", 0},
      {"partition.file", ""},
      {"train.methods", json::array({"fedavg", "fgssl"})},
      {"train.rounds", 200},
      {"train.epochs", 4},
      {"train.steps_per_epoch", 1},
      {"train.lr", 0.01},
      {"train.momentum", 0.9},
      {"train.weight_decay", 5e-4},
      {"train.velocity", "reset"},
      {"train.seeds", json::array({0, 1, 2})},
      {"train.threads", 0},
      {"model.hidden", 128},
      {"model.heads", 1},
      {"loss.tau", 0.1},
      {"loss.omega", 5.0},
      {"loss.lambda_c", 1.0},
      {"loss.lambda_d", 1.0},
      {"loss.key_source", "global"},
      {"prox.mu", 0.01},
      {"augment.strong.edge", 0.4},
      {"augment.strong.feat", 0.4},
      {"augment.weak.edge", 0.2},
      {"augment.weak.feat", 0.2},
      {"sweep.tau", json::array()},
      {"sweep.omega", json::array()},
      {"sweep.lambda_c", json::array()},
      {"sweep.lambda_d", json::array()},
      {"sweep.lr", json::array()},
      {"cka.checkpoints", json::array()},
      {"output", "out"},
  };
  return d;
}

/**
 * @brief Flat key/value view of a configuration.
 *
 * Starts from the defaults; files and overrides replace values and mark the
 * key as explicitly set. Unknown keys and type mismatches are ConfigErrors.
 */
class ConfigTree {
 public:
  ConfigTree() : values_(config_defaults()) {}

  void merge(const json& doc, const std::string& prefix = "") {
    if (!doc.is_object()) throw ConfigError("config: expected an object" + (prefix.empty() ? "" : " at " + prefix));
    for (const auto& [k, v] : doc.items()) {
      const std::string key = prefix.empty() ? k : prefix + "." + k;
      if (v.is_object()) {
        merge(v, key);
      } else {
        assign(key, v);
      }
    }
  }

  void merge_file(const fs::path& file) {
    auto in = detail::open_in(file);
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError(file.string() + ": " + e.what());
    }
    merge(doc);
  }

  /// `key=value`; the value is read as JSON, falling back to a plain string.
  void set(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + assignment + "'");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json v = json::parse(text, nullptr, false);
    if (v.is_discarded()) v = text;
    assign(key, v);
  }

  [[nodiscard]] const json& at(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("config: no key '" + key + "'");
    return it->second;
  }
  [[nodiscard]] bool explicit_key(const std::string& key) const { return set_.contains(key); }
  [[nodiscard]] bool any_explicit(const std::string& prefix) const {
    for (const auto& k : set_)
      if (k.rfind(prefix, 0) == 0) return true;
    return false;
  }

  template <class T>
  [[nodiscard]] T get(const std::string& key) const {
    return at(key).get<T>();
  }

  /// Nested document of the current values.
  [[nodiscard]] json resolved() const {
    json out = json::object();
    for (const auto& [k, v] : values_) out[json::json_pointer("/" + replace_dots(k))] = v;
    return out;
  }

 private:
  static std::string replace_dots(std::string k) {
    for (char& c : k)
      if (c == '.') c = '/';
    return k;
  }

  void assign(const std::string& key, json v) {
    const auto it = config_defaults().find(key);
    if (it == config_defaults().end()) throw ConfigError("config: unknown key '" + key + "'");
    const json& def = it->second;
    if (def.is_array() && !v.is_array()) v = json::array({v});
    auto bad = [&] { return ConfigError("config: key '" + key + "' cannot take value " + v.dump()); };
    if (def.is_string() && !v.is_string()) throw bad();
    if (def.is_number() && !v.is_number()) throw bad();
    if (def.is_number_integer() && v.is_number_float()) {
      const double x = v.get<double>();
      if (x != std::floor(x)) throw bad();
      v = static_cast<std::int64_t>(x);
    }
    if (def.is_number_integer() && v.get<std::int64_t>() < 0) throw bad();
    values_[key] = std::move(v);
    set_.insert(key);
  }

  std::map<std::string, json> values_;
  std::set<std::string> set_;
};

struct SweepGrid {
  std::vector<double> tau, omega, lambda_c, lambda_d, lr;

  [[nodiscard]] std::size_t cells() const {
    std::size_t n = 1;
    bool any = false;
    for (const auto* axis : {&tau, &omega, &lambda_c, &lambda_d, &lr}) {
      if (!axis->empty()) {
        n *= axis->size();
        any = true;
      }
    }
    return any ? n : 0;
  }
};

struct ExperimentConfig {
  std::string dataset_path;
  SbmSpec sbm;
  SplitRatios split;
  std::uint64_t split_seed = 0;
  std::size_t clients = 5;
  std::uint64_t partition_seed = 0;
  std::string partition_file;
  TrainConfig train;
  std::vector<Method> methods;
  std::vector<std::uint64_t> seeds;
  SweepGrid sweep;
  std::vector<std::string> cka_checkpoints;
  std::string output = "out";
  json resolved;

  [[nodiscard]] bool uses_sbm() const { return dataset_path.empty(); }
};

/// Comma- or space-separated non-negative integers.
inline std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::string s = text;
  for (char& c : s)
    if (c == ',') c = ' ';
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) {
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || ptr != tok.data() + tok.size()) throw ConfigError("bad seed '" + tok + "'");
    seeds.push_back(v);
  }
  if (seeds.empty()) throw ConfigError("empty seed list");
  return seeds;
}

inline ExperimentConfig resolve(const ConfigTree& t, const char* seed_env = std::getenv("FGSSL_SEED")) {
  ExperimentConfig c;
  try {
    c.dataset_path = t.get<std::string>("dataset.path");
    if (!c.dataset_path.empty() && t.any_explicit("dataset.sbm.")) {
      throw ConfigError("config: give either dataset.path or dataset.sbm.*, not both");
    }
    c.sbm.blocks = t.get<std::size_t>("dataset.sbm.blocks");
    c.sbm.nodes_per_block = t.get<std::size_t>("dataset.sbm.nodes_per_block");
    c.sbm.p_in = t.get<double>("dataset.sbm.p_in");
    c.sbm.p_out = t.get<double>("dataset.sbm.p_out");
    c.sbm.feature_noise = t.get<double>("dataset.sbm.feature_noise");
    c.sbm.seed = t.get<std::uint64_t>("dataset.sbm.seed");

    c.split = {t.get<double>("split.train"), t.get<double>("split.val"), t.get<double>("split.test")};
    c.split_seed = t.get<std::uint64_t>("split.seed");

    c.partition_file = t.get<std::string>("partition.file");
    if (!c.partition_file.empty() && (t.explicit_key("partition.clients") || t.explicit_key("partition.seed"))) {
      throw ConfigError("config: give either partition.file or partition.clients/seed, not both");
    }
    c.clients = t.get<std::size_t>("partition.clients");
    if (c.clients == 0) throw ConfigError("config: partition.clients must be >= 1");
    c.partition_seed = t.get<std::uint64_t>("partition.seed");

    for (const auto& m : t.at("train.methods")) c.methods.push_back(parse_method(m.get<std::string>()));
    if (c.methods.empty()) throw ConfigError("config: train.methods is empty");
    TrainConfig& tr = c.train;
    tr.rounds = t.get<std::size_t>("train.rounds");
    tr.epochs = t.get<std::size_t>("train.epochs");
    tr.steps_per_epoch = t.get<std::size_t>("train.steps_per_epoch");
    tr.learning_rate = t.get<double>("train.lr");
    tr.momentum = t.get<double>("train.momentum");
    tr.weight_decay = t.get<double>("train.weight_decay");
    const auto velocity = t.get<std::string>("train.velocity");
    if (velocity == "reset") {
      tr.velocity = VelocityPolicy::reset;
    } else if (velocity == "carry") {
      tr.velocity = VelocityPolicy::carry;
    } else {
      throw ConfigError("config: train.velocity must be reset or carry");
    }
    tr.threads = t.get<std::size_t>("train.threads");
    tr.hidden = t.get<std::size_t>("model.hidden");
    tr.heads = t.get<std::size_t>("model.heads");
    tr.fnsc.tau = t.get<double>("loss.tau");
    tr.fnsc.lambda = t.get<double>("loss.lambda_c");
    const auto keys = t.get<std::string>("loss.key_source");
    if (keys == "global") {
      tr.fnsc.key_source = KeySource::global;
    } else if (keys == "local") {
      tr.fnsc.key_source = KeySource::local;
    } else {
      throw ConfigError("config: loss.key_source must be global or local");
    }
    tr.fgsd.omega = t.get<double>("loss.omega");
    tr.fgsd.lambda = t.get<double>("loss.lambda_d");
    tr.prox_mu = t.get<double>("prox.mu");
    tr.augment.strong = {t.get<double>("augment.strong.edge"), t.get<double>("augment.strong.feat")};
    tr.augment.weak = {t.get<double>("augment.weak.edge"), t.get<double>("augment.weak.feat")};
    tr.validate();
    if (tr.hidden == 0 || tr.heads == 0 || tr.hidden % tr.heads != 0) {
      throw ConfigError("config: model.hidden must be a positive multiple of model.heads");
    }

    c.seeds = t.get<std::vector<std::uint64_t>>("train.seeds");
    if (seed_env != nullptr && *seed_env != '\0') c.seeds = parse_seed_list(seed_env);
    if (c.seeds.empty()) throw ConfigError("config: train.seeds is empty");

    c.sweep.tau = t.get<std::vector<double>>("sweep.tau");
    c.sweep.omega = t.get<std::vector<double>>("sweep.omega");
    c.sweep.lambda_c = t.get<std::vector<double>>("sweep.lambda_c");
    c.sweep.lambda_d = t.get<std::vector<double>>("sweep.lambda_d");
    c.sweep.lr = t.get<std::vector<double>>("sweep.lr");
    c.cka_checkpoints = t.get<std::vector<std::string>>("cka.checkpoints");
    c.output = t.get<std::string>("output");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.resolved = t.resolved();
  c.resolved["train"]["seeds"] = c.seeds;
  return c;
}

/// Defaults, then the file (if any), then each `key=value` override in order.
inline ExperimentConfig load_config(const std::optional<fs::path>& file, const std::vector<std::string>& overrides,
                                    const char* seed_env = std::getenv("FGSSL_SEED")) {
  ConfigTree t;
  if (file) t.merge_file(*file);
  for (const auto& o : overrides) t.set(o);
  return resolve(t, seed_env);
}

}  // namespace fgssl
