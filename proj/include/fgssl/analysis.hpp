#pragma once

#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fgssl/federation.hpp"
#include "fgssl/gat.hpp"
#include "fgssl/graph_io.hpp"

namespace fgssl {

/// Subtracts each column's mean.
inline Tensor center_columns(Tensor x) {
  for (std::size_t j = 0; j < x.cols(); ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) m += x(i, j);
    m /= static_cast<double>(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) x(i, j) -= m;
  }
  return x;
}

/// Linear CKA: ||Y^T X||_F^2 / (||X^T X||_F ||Y^T Y||_F) on column-centered inputs.
inline double linear_cka(const Tensor& x, const Tensor& y) {
  if (x.rows() != y.rows()) throw ShapeError("linear_cka: row counts " + x.shape_str() + " vs " + y.shape_str());
  if (x.rows() < 2) throw ShapeError("linear_cka: need at least two rows");
  const Tensor xc = center_columns(x);
  const Tensor yc = center_columns(y);
  const Tensor xt = transpose_values(xc);
  const Tensor yt = transpose_values(yc);
  const double xx = std::sqrt(frobenius_sq(matmul_values(xt, xc)));
  const double yy = std::sqrt(frobenius_sq(matmul_values(yt, yc)));
  if (xx == 0.0 || yy == 0.0) throw NumericError("linear_cka: input has zero variance");
  return frobenius_sq(matmul_values(yt, xc)) / (xx * yy);
}

struct CkaReport {
  Tensor matrix;
  std::string probe;

  [[nodiscard]] double mean_off_diagonal() const {
    const std::size_t m = matrix.rows();
    if (m < 2) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j)
        if (i != j) s += matrix(i, j);
    return s / static_cast<double>(m * (m - 1));
  }
};

/// Extractor output of every model on the same probe nodes, compared pairwise.
inline CkaReport pairwise_client_cka(const std::vector<GnnModel>& models, const Graph& probe,
                                     const std::vector<NodeId>& nodes) {
  if (models.size() < 2) throw ConfigError("pairwise_client_cka: need at least two models");
  if (nodes.empty()) throw ConfigError("pairwise_client_cka: empty probe node set");
  std::vector<Tensor> reps;
  reps.reserve(models.size());
  for (const GnnModel& m : models) {
    const Tensor h = predict(m, probe).first;
    Tensor sel(nodes.size(), h.cols());
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      if (nodes[k] >= h.rows()) throw ShapeError("pairwise_client_cka: probe node out of range");
      std::copy(h.row(nodes[k]).begin(), h.row(nodes[k]).end(), sel.row(k).begin());
    }
    reps.push_back(std::move(sel));
  }
  CkaReport r;
  r.probe = std::to_string(nodes.size()) + " probe nodes of a " + std::to_string(probe.num_nodes()) + "-node graph";
  r.matrix = Tensor(models.size(), models.size());
  for (std::size_t i = 0; i < models.size(); ++i) {
    for (std::size_t j = i; j < models.size(); ++j) {
      const double v = linear_cka(reps[i], reps[j]);
      r.matrix(i, j) = v;
      r.matrix(j, i) = v;
    }
  }
  return r;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

/// Population standard deviation.
inline MeanStd mean_std(const std::vector<double>& v) {
  if (v.empty()) throw ConfigError("mean_std: no values");
  const double n = static_cast<double>(v.size());
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / n)};
}

struct MethodSummary {
  std::string label;
  std::vector<std::uint64_t> seeds;
  std::vector<double> final_test;
  std::vector<double> best_val_test;

  void add(std::uint64_t seed, const RunResult& r) {
    seeds.push_back(seed);
    final_test.push_back(r.final_test);
    best_val_test.push_back(r.best_val_test);
  }
  [[nodiscard]] MeanStd final_stats() const { return mean_std(final_test); }
  [[nodiscard]] MeanStd best_val_stats() const { return mean_std(best_val_test); }
};

inline const char* kMetricsHeader = "seed,round,method,loss_ce,loss_fnsc,loss_fgsd,loss_total,val_acc,test_acc";

inline void write_metrics_csv(const std::vector<RoundReport>& rows, const fs::path& file) {
  auto out = detail::open_out(file);
  out << kMetricsHeader << '\n';
  using detail::format_double;
  for (const RoundReport& r : rows) {
    out << r.seed << ',' << r.round << ',' << r.method << ',' << format_double(r.loss_ce) << ','
        << format_double(r.loss_fnsc) << ',' << format_double(r.loss_fgsd) << ',' << format_double(r.loss_total)
        << ',' << format_double(r.val_acc) << ',' << format_double(r.test_acc) << '\n';
  }
  if (!out) throw IoError("failed writing " + file.string());
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace detail

inline std::vector<RoundReport> read_metrics_csv(const fs::path& file) {
  auto in = detail::open_in(file);
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != kMetricsHeader) {
    throw DataError(file.string() + ": unexpected metrics header");
  }
  std::vector<RoundReport> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto c = detail::split_csv(std::string(detail::trim(line)));
    if (c.size() != 9) throw DataError(file.string() + ":" + std::to_string(lineno) + ": expected 9 columns");
    RoundReport r;
    r.seed = detail::parse_number<std::uint64_t>(c[0], file, lineno);
    r.round = detail::parse_number<std::size_t>(c[1], file, lineno);
    r.method = c[2];
    r.loss_ce = detail::parse_number<double>(c[3], file, lineno);
    r.loss_fnsc = detail::parse_number<double>(c[4], file, lineno);
    r.loss_fgsd = detail::parse_number<double>(c[5], file, lineno);
    r.loss_total = detail::parse_number<double>(c[6], file, lineno);
    r.val_acc = detail::parse_number<double>(c[7], file, lineno);
    r.test_acc = detail::parse_number<double>(c[8], file, lineno);
    rows.push_back(r);
  }
  return rows;
}

inline nlohmann::json summary_json(const std::vector<MethodSummary>& summaries) {
  nlohmann::json j;
  j["std_convention"] = "population";
  j["methods"] = nlohmann::json::array();
  for (const MethodSummary& s : summaries) {
    const MeanStd f = s.final_stats();
    const MeanStd b = s.best_val_stats();
    j["methods"].push_back({{"method", s.label},
                            {"seeds", s.seeds},
                            {"final_test", s.final_test},
                            {"best_val_test", s.best_val_test},
                            {"final_test_mean", f.mean},
                            {"final_test_std", f.std},
                            {"best_val_test_mean", b.mean},
                            {"best_val_test_std", b.std}});
  }
  return j;
}

inline void write_summary_json(const std::vector<MethodSummary>& summaries, const fs::path& file) {
  auto out = detail::open_out(file);
  out << summary_json(summaries).dump(2) << '\n';
  if (!out) throw IoError("failed writing " + file.string());
}

inline void write_cka_csv(const CkaReport& r, const fs::path& file) {
  auto out = detail::open_out(file);
  for (std::size_t i = 0; i < r.matrix.rows(); ++i) {
    for (std::size_t j = 0; j < r.matrix.cols(); ++j) out << (j ? "," : "") << detail::format_double(r.matrix(i, j));
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + file.string());
}

inline Tensor read_cka_csv(const fs::path& file) {
  auto in = detail::open_in(file);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    std::vector<double> row;
    for (const auto& c : detail::split_csv(std::string(detail::trim(line))))
      row.push_back(detail::parse_number<double>(c, file, lineno));
    rows.push_back(std::move(row));
  }
  Tensor m(rows.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.size()) throw DataError(file.string() + ": matrix is not square");
    std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
  }
  return m;
}

/// node_id,class_0..class_{C-1},label; `node_ids` maps rows to global ids when given.
inline void write_logits_csv(const Tensor& logits, const std::vector<int>& labels, const fs::path& file,
                             const std::vector<NodeId>& node_ids = {}) {
  if (labels.size() != logits.rows() || (!node_ids.empty() && node_ids.size() != logits.rows())) {
    throw ShapeError("write_logits_csv: row count mismatch");
  }
  auto out = detail::open_out(file);
  out << "node_id";
  for (std::size_t c = 0; c < logits.cols(); ++c) out << ",class_" << c;
  out << ",label\n";
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    out << (node_ids.empty() ? i : node_ids[i]);
    for (std::size_t c = 0; c < logits.cols(); ++c) out << ',' << detail::format_double(logits(i, c));
    out << ',' << labels[i] << '\n';
  }
  if (!out) throw IoError("failed writing " + file.string());
}

}  // namespace fgssl
