#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fgssl/errors.hpp"
#include "fgssl/tensor.hpp"

namespace fgssl {

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient.
struct SgdState {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<Tensor> velocity;  ///< one buffer per parameter; empty until first step

  void reset() { velocity.clear(); }
};

/**
 * One update over all parameters:
 *   g' = g + weight_decay * theta
 *   v  = momentum * v + g'
 *   theta -= learning_rate * v
 */
inline void sgd_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, SgdState& state) {
  if (params.size() != grads.size()) {
    throw ShapeError("sgd_step: " + std::to_string(params.size()) + " params vs " +
                     std::to_string(grads.size()) + " grads");
  }
  if (state.velocity.empty()) {
    state.velocity.reserve(params.size());
    for (const Tensor& p : params) state.velocity.emplace_back(p.rows(), p.cols());
  }
  if (state.velocity.size() != params.size()) throw ShapeError("sgd_step: velocity count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    require_same_shape(params[k], grads[k], "sgd_step");
    require_same_shape(params[k], state.velocity[k], "sgd_step velocity");
    if (!grads[k].all_finite()) {
      throw NumericError("sgd_step: non-finite gradient in parameter block " + std::to_string(k));
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k].data();
    const auto& g = grads[k].data();
    auto& v = state.velocity[k].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gd = g[i] + state.weight_decay * p[i];
      v[i] = state.momentum * v[i] + gd;
      p[i] -= state.learning_rate * v[i];
    }
  }
}

}  // namespace fgssl
