#pragma once

#include <cmath>
#include <span>

#include "qclass/autograd.hpp"

namespace qclass {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam update, in place; zeroes the gradients afterwards.
// A parameter that never received a gradient buffer is treated as having a zero gradient.
template <class T>
void adam_step(std::span<Parameter<T>* const> params, const AdamOptions& opt) {
  for (Parameter<T>* p : params) {
    if (!p->trainable) continue;
    Tensor<T>& w = p->tensor();
    p->step_count += 1;
    const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(p->step_count));
    const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(p->step_count));
    const bool has_grad = w.has_grad();
    std::span<const T> g = has_grad ? std::span<const T>(w.grad()) : std::span<const T>{};
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = has_grad ? static_cast<double>(g[i]) : 0.0;
      const double m = opt.beta1 * static_cast<double>(p->adam_m[i]) + (1.0 - opt.beta1) * gi;
      const double v = opt.beta2 * static_cast<double>(p->adam_v[i]) + (1.0 - opt.beta2) * gi * gi;
      p->adam_m[i] = static_cast<T>(m);
      p->adam_v[i] = static_cast<T>(v);
      const double m_hat = m / c1;
      const double v_hat = v / c2;
      w[i] = static_cast<T>(static_cast<double>(w[i]) - opt.lr * m_hat / (std::sqrt(v_hat) + opt.eps));
    }
    w.zero_grad();
  }
}

template <class T>
double global_grad_norm(std::span<Parameter<T>* const> params) {
  double total = 0.0;
  for (Parameter<T>* p : params) {
    if (!p->trainable || !p->tensor().has_grad()) continue;
    for (T g : std::span<const T>(p->tensor().grad())) total += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(total);
}

// Rescales all gradients so their global L2 norm is at most max_norm. Returns the norm before clipping.
template <class T>
double clip_grad_norm(std::span<Parameter<T>* const> params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const T scale = static_cast<T>(max_norm / norm);
    for (Parameter<T>* p : params) {
      if (!p->trainable || !p->tensor().has_grad()) continue;
      for (T& g : p->tensor().grad()) g *= scale;
    }
  }
  return norm;
}

}  // namespace qclass
