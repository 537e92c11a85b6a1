#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "fgssl/autodiff.hpp"

namespace fgssl {

/// Scalar-valued function of tape variables, used as a finite-difference target.
using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

namespace detail {

inline double evaluate_scalar(const ScalarFn& f, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& t : inputs) vars.push_back(tape.constant(t));
  const Var out = f(tape, vars);
  if (out.value().size() != 1) throw ShapeError("grad_check: function is not scalar-valued");
  return out.value()[0];
}

}  // namespace detail

/**
 * Compares tape gradients of `f` against central differences with the given
 * step. The error per element is |a - n| / max(|a|, |n|, 1e-8); the maximum
 * over all elements of all inputs is reported.
 */
inline GradCheckResult grad_check_detailed(const ScalarFn& f, const std::vector<Tensor>& inputs,
                                           double step = 1e-5) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& t : inputs) vars.push_back(tape.variable(t));
    const Var out = f(tape, vars);
    tape.backward(out);
    for (const Var& v : vars) analytic.push_back(tape.grad(v));
  }

  GradCheckResult res;
  std::vector<Tensor> work = inputs;
  for (std::size_t k = 0; k < work.size(); ++k) {
    for (std::size_t i = 0; i < work[k].size(); ++i) {
      const double orig = work[k][i];
      work[k][i] = orig + step;
      const double fp = detail::evaluate_scalar(f, work);
      work[k][i] = orig - step;
      const double fm = detail::evaluate_scalar(f, work);
      work[k][i] = orig;
      const double num = (fp - fm) / (2.0 * step);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(num), 1e-8});
      const double err = std::abs(a - num) / denom;
      if (err > res.max_rel_error) res = {err, k, i, a, num};
    }
  }
  return res;
}

inline double grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs, double step = 1e-5) {
  return grad_check_detailed(f, inputs, step).max_rel_error;
}

}  // namespace fgssl
