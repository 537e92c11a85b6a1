#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "fgssl/autodiff.hpp"
#include "fgssl/graph.hpp"
#include "fgssl/graph_io.hpp"
#include "fgssl/rng.hpp"

namespace fgssl {

/**
 * @brief Edge list used by attention layers: every stored edge in both
 * directions plus one self-loop per node, grouped by target node.
 */
struct MessageIndex {
  SegmentIds target;
  std::vector<std::size_t> source;
  std::size_t num_nodes = 0;

  static MessageIndex from(const Graph& g) {
    MessageIndex idx;
    idx.num_nodes = g.num_nodes();
    const std::size_t total = g.num_nodes() + 2 * g.num_edges();
    idx.target.reserve(total);
    idx.source.reserve(total);
    for (NodeId i = 0; i < g.num_nodes(); ++i) {
      idx.target.push_back(i);
      idx.source.push_back(i);
      for (NodeId j : g.neighbors(i)) {
        idx.target.push_back(i);
        idx.source.push_back(j);
      }
    }
    return idx;
  }
};

enum class Activation { none, elu };

/// Shape of one attention layer. Heads are concatenated or averaged.
struct GatLayerSpec {
  std::size_t in_dim = 0;
  std::size_t head_dim = 0;
  std::size_t heads = 1;
  bool concat_heads = true;
  Activation activation = Activation::none;
  double leaky_slope = 0.2;

  [[nodiscard]] std::size_t out_dim() const { return concat_heads ? head_dim * heads : head_dim; }
  /// W (in x head_dim) and attention vector a (2*head_dim x 1) per head.
  [[nodiscard]] std::size_t num_params() const { return 2 * heads; }
};

/**
 * Single GAT layer. Per head: Wh = X W; e_ij = leaky_relu(a^T [Wh_i || Wh_j])
 * over j in N(i) plus i; alpha = softmax of e within each target's group;
 * h'_i = sum_j alpha_ij Wh_j. `params` holds [W_0, a_0, W_1, a_1, ...].
 * When `attention` is non-null it receives one alpha column per head,
 * ordered like `index`.
 */
inline Var gat_layer_forward(std::span<const Var> params, const GatLayerSpec& spec, Var features,
                             const MessageIndex& index, std::vector<Var>* attention = nullptr) {
  if (params.size() != spec.num_params()) throw ShapeError("gat_layer_forward: parameter count mismatch");
  if (features.value().cols() != spec.in_dim) {
    throw ShapeError("gat_layer_forward: feature width " + std::to_string(features.value().cols()) +
                     " != layer input " + std::to_string(spec.in_dim));
  }
  if (features.value().rows() != index.num_nodes) throw ShapeError("gat_layer_forward: node count mismatch");
  const std::size_t d = spec.head_dim;
  std::vector<Var> heads;
  for (std::size_t h = 0; h < spec.heads; ++h) {
    const Var w = params[2 * h];
    const Var a = params[2 * h + 1];
    const Var wh = matmul(features, w);
    const Var score_target = matmul(wh, slice_rows(a, 0, d));
    const Var score_source = matmul(wh, slice_rows(a, d, 2 * d));
    const Var e = leaky_relu(add(gather_rows(score_target, index.target), gather_rows(score_source, index.source)),
                             spec.leaky_slope);
    const Var alpha = segment_softmax(e, index.target, index.num_nodes);
    if (attention) attention->push_back(alpha);
    heads.push_back(segment_sum(mul_rows(gather_rows(wh, index.source), alpha), index.target, index.num_nodes));
  }
  Var out = heads.front();
  if (spec.heads > 1) {
    if (spec.concat_heads) {
      out = concat_cols(heads);
    } else {
      for (std::size_t h = 1; h < heads.size(); ++h) out = add(out, heads[h]);
      out = scale(out, 1.0 / static_cast<double>(spec.heads));
    }
  }
  if (spec.activation == Activation::elu) out = elu(out);
  return out;
}

/// Architecture of the two-layer model: extractor G (ELU) and classifier F (raw logits).
struct ModelSpec {
  std::size_t in_dim = 0;
  std::size_t hidden = 128;
  std::size_t classes = 0;
  std::size_t heads = 1;

  [[nodiscard]] GatLayerSpec extractor() const {
    if (heads == 0 || hidden % heads != 0) throw ConfigError("model: hidden width must be divisible by heads");
    return {in_dim, hidden / heads, heads, true, Activation::elu, 0.2};
  }
  [[nodiscard]] GatLayerSpec classifier() const { return {hidden, classes, heads, false, Activation::none, 0.2}; }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/**
 * @brief Parameter container for the extractor/classifier pair.
 *
 * Parameter blocks are stored in a fixed order: extractor heads first
 * (W, a per head), then classifier heads. That order is the flattening
 * used by aggregation, optimizers and checkpoints.
 */
class GnnModel {
 public:
  GnnModel() = default;
  explicit GnnModel(ModelSpec spec) : spec_(spec) {
    for (const auto& [prefix, layer] : {std::pair{"extractor", spec_.extractor()}, std::pair{"classifier", spec_.classifier()}}) {
      for (std::size_t h = 0; h < layer.heads; ++h) {
        const std::string base = std::string(prefix) + ".head" + std::to_string(h);
        names_.push_back(base + ".W");
        params_.emplace_back(layer.in_dim, layer.head_dim);
        names_.push_back(base + ".a");
        params_.emplace_back(2 * layer.head_dim, 1);
      }
    }
  }

  [[nodiscard]] const ModelSpec& spec() const noexcept { return spec_; }
  [[nodiscard]] std::vector<Tensor>& params() noexcept { return params_; }
  [[nodiscard]] const std::vector<Tensor>& params() const noexcept { return params_; }
  [[nodiscard]] const std::vector<std::string>& names() const noexcept { return names_; }
  [[nodiscard]] std::size_t extractor_blocks() const { return spec_.extractor().num_params(); }

  [[nodiscard]] std::size_t num_scalars() const {
    std::size_t n = 0;
    for (const Tensor& t : params_) n += t.size();
    return n;
  }

  friend bool operator==(const GnnModel& a, const GnnModel& b) {
    return a.spec_ == b.spec_ && a.params_ == b.params_;
  }

 private:
  ModelSpec spec_;
  std::vector<Tensor> params_;
  std::vector<std::string> names_;
};

/// Glorot-uniform for every block, bound sqrt(6 / (fan_in + fan_out)).
inline void init_params(GnnModel& model, std::uint64_t seed) {
  Rng rng = make_rng({seed, tag(Stream::init)});
  for (Tensor& t : model.params()) {
    const double bound = std::sqrt(6.0 / static_cast<double>(t.rows() + t.cols()));
    for (double& v : t.data()) v = (2.0 * uniform01(rng) - 1.0) * bound;
  }
}

inline GnnModel make_model(const ModelSpec& spec, std::uint64_t seed) {
  GnnModel m(spec);
  init_params(m, seed);
  return m;
}

/// Puts every parameter block on the tape, trainable or frozen.
inline std::vector<Var> bind(const GnnModel& model, Tape& tape, bool trainable) {
  std::vector<Var> vars;
  vars.reserve(model.params().size());
  for (const Tensor& t : model.params()) vars.push_back(trainable ? tape.variable(t) : tape.constant(t));
  return vars;
}

/// Embeddings H = G(X).
inline Var extractor_forward(const GnnModel& model, std::span<const Var> bound, Var features,
                             const MessageIndex& index) {
  const std::size_t k = model.extractor_blocks();
  return gat_layer_forward(bound.subspan(0, k), model.spec().extractor(), features, index);
}

/// Logits Z = F(H).
inline Var classifier_forward(const GnnModel& model, std::span<const Var> bound, Var hidden,
                              const MessageIndex& index) {
  const std::size_t k = model.extractor_blocks();
  return gat_layer_forward(bound.subspan(k), model.spec().classifier(), hidden, index);
}

struct ForwardResult {
  Var hidden;
  Var logits;
};

inline ForwardResult model_forward(const GnnModel& model, std::span<const Var> bound, const Graph& graph) {
  if (graph.feature_dim() != model.spec().in_dim) {
    throw ShapeError("model_forward: graph feature width " + std::to_string(graph.feature_dim()) +
                     " != model input " + std::to_string(model.spec().in_dim));
  }
  Tape& tape = *bound.front().tape();
  const MessageIndex index = MessageIndex::from(graph);
  const Var x = tape.constant(graph.features());
  const Var h = extractor_forward(model, bound, x, index);
  return {h, classifier_forward(model, bound, h, index)};
}

/// Inference-only forward pass returning (H, Z) values.
inline std::pair<Tensor, Tensor> predict(const GnnModel& model, const Graph& graph) {
  Tape tape;
  const auto bound = bind(model, tape, false);
  const ForwardResult r = model_forward(model, bound, graph);
  return {r.hidden.value(), r.logits.value()};
}

inline void save_checkpoint(const GnnModel& model, const fs::path& file) {
  auto out = detail::open_out(file);
  const ModelSpec& s = model.spec();
  out << "fgssl-checkpoint 1\n";
  out << "spec " << s.in_dim << ' ' << s.hidden << ' ' << s.classes << ' ' << s.heads << '\n';
  out << "blocks " << model.params().size() << '\n';
  std::string line;
  for (std::size_t k = 0; k < model.params().size(); ++k) {
    const Tensor& t = model.params()[k];
    out << "block " << model.names()[k] << ' ' << t.rows() << ' ' << t.cols() << '\n';
    for (std::size_t i = 0; i < t.rows(); ++i) {
      line.clear();
      for (std::size_t j = 0; j < t.cols(); ++j) {
        if (j) line += ' ';
        line += detail::format_double(t(i, j));
      }
      out << line << '\n';
    }
  }
  if (!out) throw IoError("failed writing checkpoint " + file.string());
}

inline GnnModel load_checkpoint(const fs::path& file) {
  auto in = detail::open_in(file);
  auto fail = [&](const std::string& why) { return DataError(file.string() + ": " + why); };
  std::string word;
  int version = 0;
  if (!(in >> word >> version) || word != "fgssl-checkpoint" || version != 1) throw fail("bad header");
  ModelSpec s;
  if (!(in >> word >> s.in_dim >> s.hidden >> s.classes >> s.heads) || word != "spec") throw fail("bad spec line");
  GnnModel model(s);
  std::size_t blocks = 0;
  if (!(in >> word >> blocks) || word != "blocks") throw fail("bad block count");
  if (blocks != model.params().size()) throw fail("block count does not match spec");
  for (std::size_t k = 0; k < blocks; ++k) {
    std::string name;
    std::size_t r = 0, c = 0;
    if (!(in >> word >> name >> r >> c) || word != "block") throw fail("bad block header");
    Tensor& t = model.params()[k];
    if (name != model.names()[k] || r != t.rows() || c != t.cols()) throw fail("unexpected block " + name);
    for (double& v : t.data()) {
      if (!(in >> word)) throw fail("truncated block " + name);
      v = detail::parse_number<double>(word, file, 0);
    }
  }
  return model;
}

}  // namespace fgssl
