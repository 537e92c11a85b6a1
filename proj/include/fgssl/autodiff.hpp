#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "fgssl/errors.hpp"
#include "fgssl/tensor.hpp"

namespace fgssl {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  [[nodiscard]] Tape* tape() const noexcept { return tape_; }
  [[nodiscard]] std::size_t id() const noexcept { return id_; }
  [[nodiscard]] bool valid() const noexcept { return tape_ != nullptr; }
  [[nodiscard]] const Tensor& value() const;
  [[nodiscard]] bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/**
 * @brief Reverse-mode computation tape.
 *
 * Nodes are appended in evaluation order, so the node list is already a
 * topological order and backward() simply walks it in reverse. A tape
 * supports exactly one backward pass. Every recorded value is checked for
 * NaN/Inf at creation time.
 *
 * Custom differentiable operations are added with record(): supply the
 * forward value, the inputs, and a closure that reads the output gradient
 * via grad_at(self) and accumulates into grad_buffer(input_id).
 */
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), false, {}, "constant"); }
  Var variable(Tensor value) { return push(std::move(value), true, {}, "variable"); }

  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn, const char* name) {
    return record(std::move(value), std::vector<Var>(inputs), std::move(fn), name);
  }

  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn, const char* name) {
    bool needs = false;
    for (const Var& in : inputs) {
      if (in.tape() != this) throw Error(std::string(name) + ": input from a different tape");
      needs = needs || nodes_[in.id()].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{}, name);
  }

  [[nodiscard]] const Tensor& value_at(std::size_t id) const { return nodes_.at(id).value; }
  [[nodiscard]] bool requires_grad_at(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Output gradient of node `id`; only meaningful inside a backward closure.
  [[nodiscard]] const Tensor& grad_at(std::size_t id) const { return nodes_.at(id).grad; }

  /// Gradient accumulator of node `id`, zero-allocated on first touch.
  Tensor& grad_buffer(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.rows(), n.value.cols());
    return n.grad;
  }

  /// Gradient of `v` after backward(); zeros when `v` was unreachable from the root.
  [[nodiscard]] Tensor grad(Var v) const {
    const Node& n = nodes_.at(v.id());
    if (n.grad.empty()) return Tensor(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void backward(Var root) {
    if (root.tape() != this) throw Error("backward: root belongs to a different tape");
    if (backward_done_) throw Error("backward: tape already differentiated; build a new tape");
    const Tensor& rv = nodes_[root.id()].value;
    if (rv.rows() != 1 || rv.cols() != 1) {
      throw ShapeError("backward: root must be scalar, got " + rv.shape_str());
    }
    backward_done_ = true;
    if (!nodes_[root.id()].requires_grad) return;
    grad_buffer(root.id())[0] = 1.0;
    for (std::size_t id = root.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, id);
    }
  }

  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Tensor value, bool requires_grad, BackwardFn fn, const char* name) {
    require_finite(value, name);
    nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, std::move(fn)});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

inline const Tensor& Var::value() const { return tape_->value_at(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad_at(id_); }

using SegmentIds = std::vector<std::size_t>;

namespace detail {

inline Tape& same_tape(const Var& a, const Var& b, const char* what) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw Error(std::string(what) + ": operands on different tapes");
  }
  return *a.tape();
}

inline void check_segments(const SegmentIds& seg, std::size_t rows, std::size_t num_segments,
                           const char* what) {
  if (seg.size() != rows) {
    throw ShapeError(std::string(what) + ": segment id count " + std::to_string(seg.size()) +
                     " != rows " + std::to_string(rows));
  }
  for (std::size_t s : seg) {
    if (s >= num_segments) throw ShapeError(std::string(what) + ": segment id out of range");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b, "matmul");
  Tensor out = matmul_values(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_at(self);
    const Tensor& av = tp.value_at(ia);
    const Tensor& bv = tp.value_at(ib);
    if (tp.requires_grad_at(ia)) {
      Tensor& ga = tp.grad_buffer(ia);
      for (std::size_t i = 0; i < av.rows(); ++i) {
        const double* grow = g.row(i).data();
        for (std::size_t k = 0; k < av.cols(); ++k) {
          const double* brow = bv.row(k).data();
          double s = 0.0;
          for (std::size_t j = 0; j < bv.cols(); ++j) s += grow[j] * brow[j];
          ga(i, k) += s;
        }
      }
    }
    if (tp.requires_grad_at(ib)) {
      Tensor& gb = tp.grad_buffer(ib);
      for (std::size_t i = 0; i < av.rows(); ++i) {
        const double* grow = g.row(i).data();
        for (std::size_t k = 0; k < av.cols(); ++k) {
          const double aik = av(i, k);
          if (aik == 0.0) continue;
          double* gbrow = gb.row(k).data();
          for (std::size_t j = 0; j < bv.cols(); ++j) gbrow[j] += aik * grow[j];
        }
      }
    }
  }, "matmul");
}

inline Var transpose(Var a) {
  Tape& t = *a.tape();
  const std::size_t ia = a.id();
  return t.record(transpose_values(a.value()), {a}, [ia](Tape& tp, std::size_t self) {
    const Tensor gt = transpose_values(tp.grad_at(self));
    Tensor& ga = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gt[i];
  }, "transpose");
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Var add(Var a, Var b) {
  Tape& t = detail::same_tape(a, b, "add");
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_at(self);
    for (std::size_t id : {ia, ib}) {
      if (!tp.requires_grad_at(id)) continue;
      Tensor& gx = tp.grad_buffer(id);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
  }, "add");
}

inline Var sub(Var a, Var b) {
  Tape& t = detail::same_tape(a, b, "sub");
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_at(self);
    if (tp.requires_grad_at(ia)) {
      Tensor& gx = tp.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (tp.requires_grad_at(ib)) {
      Tensor& gx = tp.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] -= g[i];
    }
  }, "sub");
}

/// Elementwise (Hadamard) product.
inline Var mul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b, "mul");
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_at(self);
    if (tp.requires_grad_at(ia)) {
      const Tensor& bv = tp.value_at(ib);
      Tensor& gx = tp.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * bv[i];
    }
    if (tp.requires_grad_at(ib)) {
      const Tensor& av = tp.value_at(ia);
      Tensor& gx = tp.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * av[i];
    }
  }, "mul");
}

inline Var scale(Var a, double s) {
  Tape& t = *a.tape();
  Tensor out = a.value();
  for (double& v : out.data()) v *= s;
  const std::size_t ia = a.id();
  return t.record(std::move(out), {a}, [ia, s](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_at(self);
    Tensor& gx = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += s * g[i];
  }, "scale");
}

/// Scales row e of `a` (E x c) by w[e] (w is E x 1).
inline Var mul_rows(Var a, Var w) {
  Tape& t = detail::same_tape(a, w, "mul_rows");
  const Tensor& av = a.value();
  const Tensor& wv = w.value();
  if (wv.cols() != 1 || wv.rows() != av.rows()) {
    throw ShapeError("mul_rows: weights " + wv.shape_str() + " for " + av.shape_str());
  }
  Tensor out = av;
  for (std::size_t e = 0; e < out.rows(); ++e)
    for (double& v : out.row(e)) v *= wv[e];
  const std::size_t ia = a.id(), iw = w.id();
  return t.record(std::move(out), {a, w}, [ia, iw](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_at(self);
    const Tensor& av2 = tp.value_at(ia);
    const Tensor& wv2 = tp.value_at(iw);
    if (tp.requires_grad_at(ia)) {
      Tensor& ga = tp.grad_buffer(ia);
      for (std::size_t e = 0; e < g.rows(); ++e)
        for (std::size_t j = 0; j < g.cols(); ++j) ga(e, j) += wv2[e] * g(e, j);
    }
    if (tp.requires_grad_at(iw)) {
      Tensor& gw = tp.grad_buffer(iw);
      for (std::size_t e = 0; e < g.rows(); ++e) {
        double s = 0.0;
        for (std::size_t j = 0; j < g.cols(); ++j) s += g(e, j) * av2(e, j);
        gw[e] += s;
      }
    }
  }, "mul_rows");
}

// ---------------------------------------------------------------------------
// Reshaping

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Tape& t = *parts.front().tape();
  const std::size_t cols = parts.front().value().cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.value().cols() != cols) throw ShapeError("concat_rows: column mismatch");
    rows += p.value().rows();
  }
  Tensor out(rows, cols);
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(off * cols));
    ids.push_back(p.id());
    offsets.push_back(off);
    off += p.value().rows();
  }
  return t.record(std::move(out), parts, [ids, offsets](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_at(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!tp.requires_grad_at(ids[k])) continue;
      Tensor& gx = tp.grad_buffer(ids[k]);
      const std::size_t base = offsets[k] * g.cols();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[base + i];
    }
  }, "concat_rows");
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Tape& t = *parts.front().tape();
  const std::size_t rows = parts.front().value().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.value().rows() != rows) throw ShapeError("concat_cols: row mismatch");
    cols += p.value().cols();
  }
  Tensor out(rows, cols);
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < pv.cols(); ++j) out(i, off + j) = pv(i, j);
    ids.push_back(p.id());
    offsets.push_back(off);
    off += pv.cols();
  }
  return t.record(std::move(out), parts, [ids, offsets](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_at(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!tp.requires_grad_at(ids[k])) continue;
      Tensor& gx = tp.grad_buffer(ids[k]);
      for (std::size_t i = 0; i < gx.rows(); ++i)
        for (std::size_t j = 0; j < gx.cols(); ++j) gx(i, j) += g(i, offsets[k] + j);
    }
  }, "concat_cols");
}

/// out.row(r) = a.row(index[r]); repeated indices accumulate in backward.
inline Var gather_rows(Var a, const std::vector<std::size_t>& index) {
  Tape& t = *a.tape();
  const Tensor& av = a.value();
  Tensor out(index.size(), av.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= av.rows()) throw ShapeError("gather_rows: index out of range");
    std::copy(av.row(index[r]).begin(), av.row(index[r]).end(), out.row(r).begin());
  }
  const std::size_t ia = a.id();
  return t.record(std::move(out), {a}, [ia, index](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_at(self);
    Tensor& ga = tp.grad_buffer(ia);
    for (std::size_t r = 0; r < index.size(); ++r) {
      double* dst = ga.row(index[r]).data();
      const double* src = g.row(r).data();
      for (std::size_t j = 0; j < g.cols(); ++j) dst[j] += src[j];
    }
  }, "gather_rows");
}

inline Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.value().rows()) throw ShapeError("slice_rows: bad range");
  std::vector<std::size_t> idx(end - begin);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = begin + i;
  return gather_rows(a, idx);
}

/// k x 1 vector of a(rows[k], cols[k]).
inline Var select(Var a, const std::vector<std::size_t>& rows, const std::vector<std::size_t>& cols) {
  if (rows.size() != cols.size()) throw ShapeError("select: index length mismatch");
  Tape& t = *a.tape();
  const Tensor& av = a.value();
  Tensor out(rows.size(), 1);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= av.rows() || cols[k] >= av.cols()) throw ShapeError("select: out of range");
    out[k] = av(rows[k], cols[k]);
  }
  const std::size_t ia = a.id();
  return t.record(std::move(out), {a}, [ia, rows, cols](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_at(self);
    Tensor& ga = tp.grad_buffer(ia);
    for (std::size_t k = 0; k < rows.size(); ++k) ga(rows[k], cols[k]) += g[k];
  }, "select");
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities

inline Var leaky_relu(Var a, double slope = 0.2) {
  Tape& t = *a.tape();
  Tensor out = a.value();
  for (double& v : out.data()) v = v > 0.0 ? v : slope * v;
  const std::size_t ia = a.id();
  return t.record(std::move(out), {a}, [ia, slope](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_at(self);
    const Tensor& x = tp.value_at(ia);
    Tensor& gx = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += x[i] > 0.0 ? g[i] : slope * g[i];
  }, "leaky_relu");
}

inline Var elu(Var a, double alpha = 1.0) {
  Tape& t = *a.tape();
  Tensor out = a.value();
  for (double& v : out.data()) v = v > 0.0 ? v : alpha * std::expm1(v);
  const std::size_t ia = a.id();
  return t.record(std::move(out), {a}, [ia, alpha](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_at(self);
    const Tensor& x = tp.value_at(ia);
    Tensor& gx = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i)
      gx[i] += x[i] > 0.0 ? g[i] : alpha * std::exp(x[i]) * g[i];
  }, "elu");
}

inline Var exp(Var a) {
  Tape& t = *a.tape();
  Tensor out = a.value();
  for (double& v : out.data()) v = std::exp(v);
  const std::size_t ia = a.id();
  return t.record(std::move(out), {a}, [ia](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_at(self);
    const Tensor& y = tp.value_at(self);
    Tensor& gx = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i];
  }, "exp");
}

inline Var log(Var a) {
  Tape& t = *a.tape();
  Tensor out = a.value();
  for (double& v : out.data()) {
    if (!(v > 0.0)) throw NumericError("log: non-positive argument " + std::to_string(v));
    v = std::log(v);
  }
  const std::size_t ia = a.id();
  return t.record(std::move(out), {a}, [ia](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_at(self);
    const Tensor& x = tp.value_at(ia);
    Tensor& gx = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / x[i];
  }, "log");
}

// ---------------------------------------------------------------------------
// Normalizations

inline Tensor row_softmax_values(const Tensor& x) {
  Tensor y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto xr = x.row(i);
    const double m = *std::max_element(xr.begin(), xr.end());
    double s = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) s += (y(i, j) = std::exp(xr[j] - m));
    for (std::size_t j = 0; j < x.cols(); ++j) y(i, j) /= s;
  }
  return y;
}

inline Var row_softmax(Var a) {
  Tape& t = *a.tape();
  if (a.value().cols() == 0) throw ShapeError("row_softmax: zero columns");
  const std::size_t ia = a.id();
  return t.record(row_softmax_values(a.value()), {a}, [ia](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_at(self);
    const Tensor& y = tp.value_at(self);
    Tensor& gx = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      double dotp = 0.0;
      for (std::size_t j = 0; j < g.cols(); ++j) dotp += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < g.cols(); ++j) gx(i, j) += y(i, j) * (g(i, j) - dotp);
    }
  }, "row_softmax");
}

inline Var row_log_softmax(Var a) {
  Tape& t = *a.tape();
  const Tensor& x = a.value();
  if (x.cols() == 0) throw ShapeError("row_log_softmax: zero columns");
  Tensor y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto xr = x.row(i);
    const double m = *std::max_element(xr.begin(), xr.end());
    double s = 0.0;
    for (double v : xr) s += std::exp(v - m);
    const double lse = m + std::log(s);
    for (std::size_t j = 0; j < x.cols(); ++j) y(i, j) = xr[j] - lse;
  }
  const std::size_t ia = a.id();
  return t.record(std::move(y), {a}, [ia](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_at(self);
    const Tensor& ly = tp.value_at(self);
    Tensor& gx = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < g.cols(); ++j) gs += g(i, j);
      for (std::size_t j = 0; j < g.cols(); ++j) gx(i, j) += g(i, j) - std::exp(ly(i, j)) * gs;
    }
  }, "row_log_softmax");
}

/// Softmax of a column vector within groups of rows sharing a segment id.
inline Var segment_softmax(Var values, const SegmentIds& segment, std::size_t num_segments) {
  Tape& t = *values.tape();
  const Tensor& x = values.value();
  if (x.cols() != 1) throw ShapeError("segment_softmax: expects a column vector");
  detail::check_segments(segment, x.rows(), num_segments, "segment_softmax");
  std::vector<double> mx(num_segments, -std::numeric_limits<double>::infinity());
  for (std::size_t e = 0; e < x.rows(); ++e) mx[segment[e]] = std::max(mx[segment[e]], x[e]);
  Tensor y(x.rows(), 1);
  std::vector<double> sum(num_segments, 0.0);
  for (std::size_t e = 0; e < x.rows(); ++e) sum[segment[e]] += (y[e] = std::exp(x[e] - mx[segment[e]]));
  for (std::size_t e = 0; e < x.rows(); ++e) y[e] /= sum[segment[e]];
  const std::size_t ia = values.id();
  return t.record(std::move(y), {values}, [ia, segment, num_segments](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_at(self);
    const Tensor& yv = tp.value_at(self);
    std::vector<double> dotp(num_segments, 0.0);
    for (std::size_t e = 0; e < g.rows(); ++e) dotp[segment[e]] += g[e] * yv[e];
    Tensor& gx = tp.grad_buffer(ia);
    for (std::size_t e = 0; e < g.rows(); ++e) gx[e] += yv[e] * (g[e] - dotp[segment[e]]);
  }, "segment_softmax");
}

inline Var segment_log_softmax(Var values, const SegmentIds& segment, std::size_t num_segments) {
  Tape& t = *values.tape();
  const Tensor& x = values.value();
  if (x.cols() != 1) throw ShapeError("segment_log_softmax: expects a column vector");
  detail::check_segments(segment, x.rows(), num_segments, "segment_log_softmax");
  std::vector<double> mx(num_segments, -std::numeric_limits<double>::infinity());
  for (std::size_t e = 0; e < x.rows(); ++e) mx[segment[e]] = std::max(mx[segment[e]], x[e]);
  std::vector<double> sum(num_segments, 0.0);
  for (std::size_t e = 0; e < x.rows(); ++e) sum[segment[e]] += std::exp(x[e] - mx[segment[e]]);
  Tensor y(x.rows(), 1);
  for (std::size_t e = 0; e < x.rows(); ++e)
    y[e] = x[e] - mx[segment[e]] - std::log(sum[segment[e]]);
  const std::size_t ia = values.id();
  return t.record(std::move(y), {values}, [ia, segment, num_segments](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_at(self);
    const Tensor& ly = tp.value_at(self);
    std::vector<double> gs(num_segments, 0.0);
    for (std::size_t e = 0; e < g.rows(); ++e) gs[segment[e]] += g[e];
    Tensor& gx = tp.grad_buffer(ia);
    for (std::size_t e = 0; e < g.rows(); ++e) gx[e] += g[e] - std::exp(ly[e]) * gs[segment[e]];
  }, "segment_log_softmax");
}

/// Sums rows of `values` (E x c) into num_segments output rows. Summation order is row order.
inline Var segment_sum(Var values, const SegmentIds& segment, std::size_t num_segments) {
  Tape& t = *values.tape();
  const Tensor& x = values.value();
  detail::check_segments(segment, x.rows(), num_segments, "segment_sum");
  Tensor out(num_segments, x.cols());
  for (std::size_t e = 0; e < x.rows(); ++e) {
    double* dst = out.row(segment[e]).data();
    const double* src = x.row(e).data();
    for (std::size_t j = 0; j < x.cols(); ++j) dst[j] += src[j];
  }
  const std::size_t ia = values.id();
  return t.record(std::move(out), {values}, [ia, segment](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_at(self);
    Tensor& gx = tp.grad_buffer(ia);
    for (std::size_t e = 0; e < gx.rows(); ++e) {
      const double* src = g.row(segment[e]).data();
      double* dst = gx.row(e).data();
      for (std::size_t j = 0; j < gx.cols(); ++j) dst[j] += src[j];
    }
  }, "segment_sum");
}

/// Divides each row by max(||row||, eps).
inline Var row_l2_normalize(Var a, double eps = 1e-12) {
  Tape& t = *a.tape();
  const Tensor& x = a.value();
  Tensor y = x;
  std::vector<double> norms(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (double v : x.row(i)) s += v * v;
    norms[i] = std::max(std::sqrt(s), eps);
    for (double& v : y.row(i)) v /= norms[i];
  }
  const std::size_t ia = a.id();
  return t.record(std::move(y), {a}, [ia, norms, eps](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_at(self);
    const Tensor& yv = tp.value_at(self);
    Tensor& gx = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      if (norms[i] <= eps) {
        for (std::size_t j = 0; j < g.cols(); ++j) gx(i, j) += g(i, j) / eps;
        continue;
      }
      double yg = 0.0;
      for (std::size_t j = 0; j < g.cols(); ++j) yg += yv(i, j) * g(i, j);
      for (std::size_t j = 0; j < g.cols(); ++j) gx(i, j) += (g(i, j) - yv(i, j) * yg) / norms[i];
    }
  }, "row_l2_normalize");
}

// ---------------------------------------------------------------------------
// Reductions

/// Row-wise inner product of two same-shape matrices, giving rows x 1.
inline Var dot(Var a, Var b) {
  Tape& t = detail::same_tape(a, b, "dot");
  require_same_shape(a.value(), b.value(), "dot");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.rows(), 1);
  for (std::size_t i = 0; i < av.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < av.cols(); ++j) s += av(i, j) * bv(i, j);
    out[i] = s;
  }
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_at(self);
    const Tensor& av2 = tp.value_at(ia);
    const Tensor& bv2 = tp.value_at(ib);
    if (tp.requires_grad_at(ia)) {
      Tensor& ga = tp.grad_buffer(ia);
      for (std::size_t i = 0; i < av2.rows(); ++i)
        for (std::size_t j = 0; j < av2.cols(); ++j) ga(i, j) += g[i] * bv2(i, j);
    }
    if (tp.requires_grad_at(ib)) {
      Tensor& gb = tp.grad_buffer(ib);
      for (std::size_t i = 0; i < av2.rows(); ++i)
        for (std::size_t j = 0; j < av2.cols(); ++j) gb(i, j) += g[i] * av2(i, j);
    }
  }, "dot");
}

inline Var sum(Var a) {
  Tape& t = *a.tape();
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t ia = a.id();
  return t.record(Tensor::scalar(s), {a}, [ia](Tape& tp, std::size_t self) {
    const double g = tp.grad_at(self)[0];
    Tensor& gx = tp.grad_buffer(ia);
    for (double& v : gx.data()) v += g;
  }, "sum");
}

inline Var mean(Var a) {
  if (a.value().empty()) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

}  // namespace fgssl
