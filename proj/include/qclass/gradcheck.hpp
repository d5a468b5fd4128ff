#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "qclass/autograd.hpp"

namespace qclass {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;  // flat coordinate over all checked tensors
  double analytic = 0.0;
  double numeric = 0.0;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

// Second order: (f(x+h) - f(x-h)) / 2h.
// Fourth order: (-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h; lets smooth functions use a larger h,
// which resolves very small gradients that the second-order rule loses to round-off.
enum class Stencil { Central2, Central4 };

// Compares reverse-mode gradients of a scalar function against central differences, one coordinate
// at a time, over every tensor in `inputs`.
// The function must rebuild its graph on the tape it is given; inputs are leaves it reads.
template <class T>
GradCheckResult grad_check_leaves(const std::function<Var<T>(Tape<T>&)>& f, const std::vector<Var<T>>& inputs,
                                  double h = 1e-5, Stencil stencil = Stencil::Central2) {
  for (const auto& in : inputs) {
    in->tensor.set_requires_grad(true);
    in->tensor.grad();
    in->tensor.zero_grad();
  }
  {
    Tape<T> tape;
    Var<T> out = f(tape);
    tape.backward(out);
  }
  std::vector<std::vector<T>> analytic;
  for (const auto& in : inputs) {
    auto g = in->tensor.grad();
    analytic.emplace_back(g.begin(), g.end());
  }

  auto eval = [&]() {
    Tape<T> tape(false);
    return static_cast<double>(f(tape)->tensor[0]);
  };

  GradCheckResult result;
  std::size_t flat = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor<T>& x = inputs[k]->tensor;
    for (std::size_t i = 0; i < x.size(); ++i, ++flat) {
      const T saved = x[i];
      auto at = [&](double offset) {
        x[i] = static_cast<T>(saved + offset);
        return eval();
      };
      double numeric = 0.0;
      if (stencil == Stencil::Central2) {
        numeric = (at(h) - at(-h)) / (2.0 * h);
      } else {
        numeric = (-at(2 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2 * h)) / (12.0 * h);
      }
      x[i] = saved;
      const double a = static_cast<double>(analytic[k][i]);
      const double err = relative_error(a, numeric);
      if (flat == 0 || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_index = flat;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

// Single-input form: f receives the tape and a leaf holding x.
template <class T>
double grad_check(const std::function<Var<T>(Tape<T>&, const Var<T>&)>& f, const Tensor<T>& x, double h = 1e-5) {
  Var<T> leaf = make_leaf(x, true);
  auto bound = [&](Tape<T>& tape) { return f(tape, leaf); };
  return grad_check_leaves<T>(bound, {leaf}, h).max_rel_error;
}

// Checks d(loss)/d(parameters) for every trainable parameter.
template <class T>
GradCheckResult grad_check_parameters(const std::function<Var<T>(Tape<T>&)>& loss, ParameterSet<T>& params,
                                      double h = 1e-5, Stencil stencil = Stencil::Central2) {
  std::vector<Var<T>> leaves;
  for (Parameter<T>* p : params.trainable()) leaves.push_back(p->var);
  return grad_check_leaves<T>(loss, leaves, h, stencil);
}

}  // namespace qclass
