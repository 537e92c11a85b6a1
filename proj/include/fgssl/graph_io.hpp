#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fgssl/errors.hpp"
#include "fgssl/graph.hpp"

namespace fgssl {

namespace fs = std::filesystem;

namespace detail {

inline std::ifstream open_in(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open " + p.string());
  return in;
}

inline std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <class T>
T parse_number(std::string_view s, const fs::path& file, std::size_t line) {
  s = trim(s);
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw DataError(file.string() + ":" + std::to_string(line) + ": cannot parse '" +
                    std::string(s) + "'");
  }
  return v;
}

/// Shortest decimal text that parses back to exactly `v`.
inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace detail

/// Reads meta.json, edges.tsv, features.csv and labels.tsv from `dir`.
inline Graph load_graph(const fs::path& dir) {
  for (const char* f : {"meta.json", "edges.tsv", "features.csv", "labels.tsv"}) {
    if (!fs::exists(dir / f)) throw IoError("dataset " + dir.string() + " is missing " + f);
  }
  nlohmann::json meta;
  try {
    auto in = detail::open_in(dir / "meta.json");
    in >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("meta.json: " + std::string(e.what()));
  }
  std::size_t n = 0, d = 0, c = 0;
  try {
    n = meta.at("num_nodes").get<std::size_t>();
    d = meta.at("num_features").get<std::size_t>();
    c = meta.at("num_classes").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("meta.json: " + std::string(e.what()));
  }

  Tensor x(n, d);
  {
    const fs::path p = dir / "features.csv";
    auto in = detail::open_in(p);
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
      if (detail::trim(line).empty()) continue;
      if (row >= n) throw DataError(p.string() + ": more than " + std::to_string(n) + " rows");
      std::string_view rest(line);
      std::size_t col = 0;
      while (true) {
        const auto comma = rest.find(',');
        const auto cell = rest.substr(0, comma);
        if (col >= d) throw DataError(p.string() + ":" + std::to_string(row + 1) + ": too many columns");
        x(row, col++) = detail::parse_number<double>(cell, p, row + 1);
        if (comma == std::string_view::npos) break;
        rest.remove_prefix(comma + 1);
      }
      if (col != d) {
        throw DataError(p.string() + ":" + std::to_string(row + 1) + ": expected " +
                        std::to_string(d) + " columns, got " + std::to_string(col));
      }
      ++row;
    }
    if (row != n) {
      throw DataError(p.string() + ": " + std::to_string(row) + " rows, meta says " + std::to_string(n));
    }
  }

  std::vector<int> labels;
  {
    const fs::path p = dir / "labels.tsv";
    auto in = detail::open_in(p);
    std::string line;
    std::size_t ln = 0;
    while (std::getline(in, line)) {
      ++ln;
      if (detail::trim(line).empty()) continue;
      labels.push_back(detail::parse_number<int>(line, p, ln));
    }
    if (labels.size() != n) {
      throw DataError(p.string() + ": " + std::to_string(labels.size()) +
                      " labels but features have " + std::to_string(n) + " rows");
    }
  }

  std::vector<Edge> edges;
  {
    const fs::path p = dir / "edges.tsv";
    auto in = detail::open_in(p);
    std::string line;
    std::size_t ln = 0;
    while (std::getline(in, line)) {
      ++ln;
      const auto t = detail::trim(line);
      if (t.empty()) continue;
      const auto tab = t.find('\t');
      if (tab == std::string_view::npos) throw DataError(p.string() + ":" + std::to_string(ln) + ": expected src<TAB>dst");
      const auto s = detail::parse_number<std::size_t>(t.substr(0, tab), p, ln);
      const auto dd = detail::parse_number<std::size_t>(t.substr(tab + 1), p, ln);
      if (s >= n || dd >= n) {
        throw DataError(p.string() + ":" + std::to_string(ln) + ": node index out of range [0, " +
                        std::to_string(n) + ")");
      }
      edges.push_back({s, dd});
    }
  }
  return Graph(std::move(x), std::move(edges), std::move(labels), c);
}

/// Reads masks.tsv when present.
inline std::optional<SplitMasks> load_masks(const fs::path& dir, std::size_t num_nodes) {
  const fs::path p = dir / "masks.tsv";
  if (!fs::exists(p)) return std::nullopt;
  auto in = detail::open_in(p);
  SplitMasks m;
  std::vector<char> seen(num_nodes, 0);
  std::string line;
  std::size_t ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    const auto t = detail::trim(line);
    if (t.empty()) continue;
    const auto tab = t.find('\t');
    if (tab == std::string_view::npos) throw DataError(p.string() + ":" + std::to_string(ln) + ": expected node<TAB>split");
    const auto node = detail::parse_number<std::size_t>(t.substr(0, tab), p, ln);
    if (node >= num_nodes) throw DataError(p.string() + ":" + std::to_string(ln) + ": node out of range");
    if (seen[node]) throw DataError(p.string() + ":" + std::to_string(ln) + ": node listed twice");
    seen[node] = 1;
    const auto kind = detail::trim(t.substr(tab + 1));
    if (kind == "train") m.train.push_back(node);
    else if (kind == "val") m.val.push_back(node);
    else if (kind == "test") m.test.push_back(node);
    else throw DataError(p.string() + ":" + std::to_string(ln) + ": unknown split '" + std::string(kind) + "'");
  }
  std::sort(m.train.begin(), m.train.end());
  std::sort(m.val.begin(), m.val.end());
  std::sort(m.test.begin(), m.test.end());
  return m;
}

inline void save_masks(const SplitMasks& m, const fs::path& dir) {
  auto out = detail::open_out(dir / "masks.tsv");
  std::vector<std::pair<NodeId, const char*>> rows;
  for (NodeId i : m.train) rows.emplace_back(i, "train");
  for (NodeId i : m.val) rows.emplace_back(i, "val");
  for (NodeId i : m.test) rows.emplace_back(i, "test");
  std::sort(rows.begin(), rows.end());
  for (const auto& [i, k] : rows) out << i << '\t' << k << '\n';
  if (!out) throw IoError("failed writing masks.tsv in " + dir.string());
}

/// Writes the canonical dataset directory; load_graph(dir) reproduces `g` exactly.
inline void save_graph(const Graph& g, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  {
    auto out = detail::open_out(dir / "meta.json");
    out << nlohmann::json{{"num_nodes", g.num_nodes()},
                          {"num_features", g.feature_dim()},
                          {"num_classes", g.num_classes()}}
               .dump()
        << '\n';
  }
  {
    auto out = detail::open_out(dir / "edges.tsv");
    for (const Edge& e : g.edges()) out << e.src << '\t' << e.dst << '\n';
  }
  {
    auto out = detail::open_out(dir / "features.csv");
    const Tensor& x = g.features();
    std::string line;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      line.clear();
      for (std::size_t j = 0; j < x.cols(); ++j) {
        if (j) line += ',';
        line += detail::format_double(x(i, j));
      }
      out << line << '\n';
    }
  }
  {
    auto out = detail::open_out(dir / "labels.tsv");
    for (int l : g.labels()) out << l << '\n';
    if (!out) throw IoError("failed writing dataset in " + dir.string());
  }
}

}  // namespace fgssl
