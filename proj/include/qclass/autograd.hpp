#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "qclass/tensor.hpp"

namespace qclass {

using Rng = std::mt19937_64;

template <class T>
struct Node {
  Tensor<T> tensor;
  // Reads tensor.grad() and accumulates into the inputs' gradients.
  std::function<void(Node&)> backward;
};

template <class T>
using Var = std::shared_ptr<Node<T>>;

template <class T>
Var<T> make_leaf(Tensor<T> value, bool requires_grad = false) {
  auto node = std::make_shared<Node<T>>();
  node->tensor = std::move(value);
  node->tensor.set_requires_grad(requires_grad);
  return node;
}

// Per-forward-pass record of differentiable operations in creation order.
// Creation order is a topological order, so backward is a reverse sweep.
template <class T>
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var<T> constant(Tensor<T> value) const { return make_leaf(std::move(value), false); }

  // Wraps an op result. The backward closure is kept only when some input needs a gradient.
  Var<T> record(Tensor<T> out, std::initializer_list<Var<T>> inputs, std::function<void(Node<T>&)> backward) {
    return record(std::move(out), needs_grad(inputs), std::move(backward));
  }

  Var<T> record(Tensor<T> out, bool any_input_requires_grad, std::function<void(Node<T>&)> backward) {
    auto node = std::make_shared<Node<T>>();
    node->tensor = std::move(out);
    if (grad_enabled_ && any_input_requires_grad) {
      node->tensor.set_requires_grad(true);
      node->backward = std::move(backward);
      nodes_.push_back(node);
    }
    return node;
  }

  static bool needs_grad(std::initializer_list<Var<T>> inputs) {
    for (const auto& v : inputs) {
      if (v && v->tensor.requires_grad()) return true;
    }
    return false;
  }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape backwards, then frees it.
  void backward(const Var<T>& loss) {
    if (loss->tensor.size() != 1) {
      throw ShapeError("backward expects a scalar loss, got " + shape_str(loss->tensor.shape()));
    }
    if (!loss->tensor.requires_grad()) {
      clear();
      return;
    }
    loss->tensor.grad()[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node<T>& node = **it;
      if (node.tensor.has_grad() && node.backward) node.backward(node);
    }
    clear();
  }

  void clear() { nodes_.clear(); }

 private:
  bool grad_enabled_;
  std::vector<std::shared_ptr<Node<T>>> nodes_;
};

template <class T>
struct Parameter {
  std::string name;
  Var<T> var;
  std::vector<T> adam_m;
  std::vector<T> adam_v;
  long step_count = 0;
  bool trainable = true;

  Tensor<T>& tensor() { return var->tensor; }
  const Tensor<T>& tensor() const { return var->tensor; }
};

// Owns a model's parameters with stable addresses, in registration order.
template <class T>
class ParameterSet {
 public:
  Var<T> add(std::string name, Tensor<T> init, bool trainable = true) {
    auto p = std::make_unique<Parameter<T>>();
    p->name = std::move(name);
    const std::size_t n = init.size();
    p->var = make_leaf(std::move(init), trainable);
    p->adam_m.assign(n, T(0));
    p->adam_v.assign(n, T(0));
    p->trainable = trainable;
    params_.push_back(std::move(p));
    return params_.back()->var;
  }

  std::size_t size() const noexcept { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

  Parameter<T>* find(const std::string& name) {
    for (auto& p : params_) {
      if (p->name == name) return p.get();
    }
    return nullptr;
  }

  std::vector<Parameter<T>*> all() {
    std::vector<Parameter<T>*> out;
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }

  std::vector<Parameter<T>*> trainable() {
    std::vector<Parameter<T>*> out;
    for (auto& p : params_) {
      if (p->trainable) out.push_back(p.get());
    }
    return out;
  }

  // Scalar count over trainable parameters.
  std::size_t count_trainable() const {
    std::size_t n = 0;
    for (const auto& p : params_) {
      if (p->trainable) n += p->tensor().size();
    }
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->tensor().zero_grad();
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
};

}  // namespace qclass
