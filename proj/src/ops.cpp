#include "qclass/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "qclass/kernels.hpp"

namespace qclass::ops {

namespace {

#ifdef NDEBUG
std::atomic<bool> g_finite_checks{false};
#else
std::atomic<bool> g_finite_checks{true};
#endif

template <class T>
bool req(const Var<T>& v) {
  return v && v->tensor.requires_grad();
}

template <class T>
void check_finite(const Tensor<T>& t, const char* op) {
  if (g_finite_checks.load(std::memory_order_relaxed) && !t.all_finite()) {
    throw std::domain_error(std::string("non-finite value produced by ") + op);
  }
}

void expect_rank(const Shape& s, std::size_t rank, const char* op, const char* arg) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": " + arg + " must have rank " + std::to_string(rank) + ", got " +
                     shape_str(s));
  }
}

void expect_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

template <class T>
std::span<const T> cspan(const Tensor<T>& t) {
  return t.values();
}

template <class T>
std::span<const T> cgrad(Node<T>& n) {
  return n.tensor.grad();
}

template <class T>
T stable_sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

void set_finite_checks(bool on) { g_finite_checks.store(on); }
bool finite_checks() { return g_finite_checks.load(); }

template <class T>
Var<T> linear(Tape<T>& tape, const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const Shape& xs = x->tensor.shape();
  const Shape& ws = w->tensor.shape();
  expect_rank(xs, 2, "linear", "x");
  expect_rank(ws, 2, "linear", "W");
  if (xs[1] != ws[0] || b->tensor.size() != ws[1]) {
    throw ShapeError("linear: shape mismatch x" + shape_str(xs) + " W" + shape_str(ws) + " b" +
                     shape_str(b->tensor.shape()));
  }
  const kernels::MatmulDims d{xs[0], xs[1], ws[1]};
  Tensor<T> out({d.rows, d.cols});
  kernels::parallel::matmul<T>(cspan(x->tensor), cspan(w->tensor), cspan(b->tensor), out.values(), d);
  check_finite(out, "linear");
  return tape.record(std::move(out), {x, w, b}, [x, w, b, d](Node<T>& self) {
    auto dy = cgrad(self);
    if (req(x)) kernels::parallel::matmul_backward_input<T>(dy, cspan(w->tensor), x->tensor.grad(), d);
    if (req(w)) {
      kernels::parallel::matmul_backward_weight<T>(cspan(x->tensor), dy, w->tensor.grad(),
                                                   req(b) ? b->tensor.grad() : std::span<T>{}, d);
    } else if (req(b)) {
      auto db = b->tensor.grad();
      for (std::size_t r = 0; r < d.rows; ++r) {
        for (std::size_t g = 0; g < d.cols; ++g) db[g] += dy[r * d.cols + g];
      }
    }
  });
}

template <class T>
Var<T> matmul(Tape<T>& tape, const Var<T>& x, const Var<T>& w) {
  const Shape& xs = x->tensor.shape();
  const Shape& ws = w->tensor.shape();
  expect_rank(xs, 2, "matmul", "x");
  expect_rank(ws, 2, "matmul", "W");
  if (xs[1] != ws[0]) throw ShapeError("matmul: shape mismatch x" + shape_str(xs) + " W" + shape_str(ws));
  const kernels::MatmulDims d{xs[0], xs[1], ws[1]};
  Tensor<T> out({d.rows, d.cols});
  kernels::parallel::matmul<T>(cspan(x->tensor), cspan(w->tensor), {}, out.values(), d);
  check_finite(out, "matmul");
  return tape.record(std::move(out), {x, w}, [x, w, d](Node<T>& self) {
    auto dy = cgrad(self);
    if (req(x)) kernels::parallel::matmul_backward_input<T>(dy, cspan(w->tensor), x->tensor.grad(), d);
    if (req(w)) kernels::parallel::matmul_backward_weight<T>(cspan(x->tensor), dy, w->tensor.grad(), {}, d);
  });
}

template <class T>
Var<T> add(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  expect_same(a->tensor.shape(), b->tensor.shape(), "add");
  Tensor<T> out(a->tensor.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->tensor[i] + b->tensor[i];
  check_finite(out, "add");
  return tape.record(std::move(out), {a, b}, [a, b](Node<T>& self) {
    auto dy = cgrad(self);
    for (const Var<T>* in : {&a, &b}) {
      if (!req(*in)) continue;
      auto g = (*in)->tensor.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i];
    }
  });
}

template <class T>
Var<T> mul(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  expect_same(a->tensor.shape(), b->tensor.shape(), "mul");
  Tensor<T> out(a->tensor.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->tensor[i] * b->tensor[i];
  check_finite(out, "mul");
  return tape.record(std::move(out), {a, b}, [a, b](Node<T>& self) {
    auto dy = cgrad(self);
    if (req(a)) {
      auto g = a->tensor.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * b->tensor[i];
    }
    if (req(b)) {
      auto g = b->tensor.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * a->tensor[i];
    }
  });
}

template <class T>
Var<T> sigmoid(Tape<T>& tape, const Var<T>& x) {
  Tensor<T> out(x->tensor.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(x->tensor[i]);
  check_finite(out, "sigmoid");
  return tape.record(std::move(out), {x}, [x](Node<T>& self) {
    auto dy = cgrad(self);
    auto g = x->tensor.grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T y = self.tensor[i];
      g[i] += dy[i] * y * (T(1) - y);
    }
  });
}

template <class T>
Var<T> tanh(Tape<T>& tape, const Var<T>& x) {
  Tensor<T> out(x->tensor.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x->tensor[i]);
  check_finite(out, "tanh");
  return tape.record(std::move(out), {x}, [x](Node<T>& self) {
    auto dy = cgrad(self);
    auto g = x->tensor.grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T y = self.tensor[i];
      g[i] += dy[i] * (T(1) - y * y);
    }
  });
}

template <class T>
Var<T> relu(Tape<T>& tape, const Var<T>& x) {
  Tensor<T> out(x->tensor.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x->tensor[i] > T(0) ? x->tensor[i] : T(0);
  check_finite(out, "relu");
  return tape.record(std::move(out), {x}, [x](Node<T>& self) {
    auto dy = cgrad(self);
    auto g = x->tensor.grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x->tensor[i] > T(0)) g[i] += dy[i];
    }
  });
}

namespace {

template <class T>
Var<T> conv_common(Tape<T>& tape, const Var<T>& x, const Var<T>& filters, const Var<T>& bias, bool causal,
                   const char* op) {
  const Shape& xs = x->tensor.shape();
  const Shape& fs = filters->tensor.shape();
  expect_rank(xs, 3, op, "x");
  expect_rank(fs, 3, op, "filters");
  if (fs[2] != xs[2] || bias->tensor.size() != fs[0] || fs[1] == 0) {
    throw ShapeError(std::string(op) + ": shape mismatch x" + shape_str(xs) + " filters" + shape_str(fs) +
                     " bias" + shape_str(bias->tensor.shape()));
  }
  if (!causal && xs[1] < fs[1]) {
    throw ShapeError(std::string(op) + ": sequence length " + std::to_string(xs[1]) + " is shorter than kernel width " +
                     std::to_string(fs[1]) + " (batch min_length too small)");
  }
  const kernels::ConvDims d = causal ? kernels::causal_conv_dims(xs[0], xs[1], xs[2], fs[0], fs[1])
                                     : kernels::valid_conv_dims(xs[0], xs[1], xs[2], fs[0], fs[1]);
  Tensor<T> out({d.batch, d.out_len, d.filters});
  kernels::parallel::conv_time<T>(cspan(x->tensor), cspan(filters->tensor), cspan(bias->tensor), out.values(), d);
  check_finite(out, op);
  return tape.record(std::move(out), {x, filters, bias}, [x, filters, bias, d](Node<T>& self) {
    auto dy = cgrad(self);
    if (req(x)) kernels::parallel::conv_time_backward_input<T>(dy, cspan(filters->tensor), x->tensor.grad(), d);
    if (req(filters)) {
      kernels::parallel::conv_time_backward_filter<T>(cspan(x->tensor), dy, filters->tensor.grad(),
                                                      req(bias) ? bias->tensor.grad() : std::span<T>{}, d);
    } else if (req(bias)) {
      auto db = bias->tensor.grad();
      for (std::size_t r = 0; r < d.batch * d.out_len; ++r) {
        for (std::size_t j = 0; j < d.filters; ++j) db[j] += dy[r * d.filters + j];
      }
    }
  });
}

}  // namespace

template <class T>
Var<T> conv1d_time(Tape<T>& tape, const Var<T>& x, const Var<T>& filters, const Var<T>& bias) {
  return conv_common(tape, x, filters, bias, false, "conv1d_time");
}

template <class T>
Var<T> masked_conv1d_time(Tape<T>& tape, const Var<T>& x, const Var<T>& filters, const Var<T>& bias) {
  return conv_common(tape, x, filters, bias, true, "masked_conv1d_time");
}

template <class T>
Var<T> maxpool_time(Tape<T>& tape, const Var<T>& x, std::span<const std::size_t> valid) {
  const Shape& xs = x->tensor.shape();
  expect_rank(xs, 3, "maxpool_time", "x");
  const std::size_t batch = xs[0], time = xs[1], width = xs[2];
  if (time == 0) throw ShapeError("maxpool_time: empty time axis");
  if (!valid.empty() && valid.size() != batch) {
    throw ShapeError("maxpool_time: " + std::to_string(valid.size()) + " valid counts for batch " +
                     std::to_string(batch));
  }
  Tensor<T> out({batch, width});
  std::vector<std::size_t> argmax(batch * width);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t limit = valid.empty() ? time : valid[b];
    if (limit == 0 || limit > time) {
      throw ShapeError("maxpool_time: valid count " + std::to_string(limit) + " outside [1, " +
                       std::to_string(time) + "]");
    }
    for (std::size_t j = 0; j < width; ++j) {
      std::size_t best = 0;
      T best_v = x->tensor.at(b, 0, j);
      for (std::size_t t = 1; t < limit; ++t) {
        const T v = x->tensor.at(b, t, j);
        if (v > best_v) {
          best_v = v;
          best = t;
        }
      }
      out.at(b, j) = best_v;
      argmax[b * width + j] = best;
    }
  }
  return tape.record(std::move(out), {x}, [x, argmax = std::move(argmax), time, width](Node<T>& self) {
    auto dy = cgrad(self);
    auto g = x->tensor.grad();
    for (std::size_t i = 0; i < argmax.size(); ++i) {
      const std::size_t b = i / width, j = i % width;
      g[(b * time + argmax[i]) * width + j] += dy[i];
    }
  });
}

template <class T>
Var<T> avgpool_time(Tape<T>& tape, const Var<T>& x, std::span<const std::size_t> lengths) {
  const Shape& xs = x->tensor.shape();
  expect_rank(xs, 3, "avgpool_time", "x");
  const std::size_t batch = xs[0], time = xs[1], depth = xs[2];
  if (lengths.size() != batch) throw ShapeError("avgpool_time: lengths size does not match batch");
  std::vector<std::size_t> lens(lengths.begin(), lengths.end());
  Tensor<T> out({batch, depth});
  for (std::size_t b = 0; b < batch; ++b) {
    if (lens[b] == 0 || lens[b] > time) {
      throw ShapeError("avgpool_time: length " + std::to_string(lens[b]) + " outside [1, " + std::to_string(time) +
                       "]");
    }
    for (std::size_t t = 0; t < lens[b]; ++t) {
      for (std::size_t c = 0; c < depth; ++c) out.at(b, c) += x->tensor.at(b, t, c);
    }
    const T inv = T(1) / static_cast<T>(lens[b]);
    for (std::size_t c = 0; c < depth; ++c) out.at(b, c) *= inv;
  }
  return tape.record(std::move(out), {x}, [x, lens = std::move(lens), time, depth](Node<T>& self) {
    auto dy = cgrad(self);
    auto g = x->tensor.grad();
    for (std::size_t b = 0; b < lens.size(); ++b) {
      const T inv = T(1) / static_cast<T>(lens[b]);
      for (std::size_t t = 0; t < lens[b]; ++t) {
        for (std::size_t c = 0; c < depth; ++c) g[(b * time + t) * depth + c] += dy[b * depth + c] * inv;
      }
    }
  });
}

template <class T>
Tensor<T> softmax(const Tensor<T>& logits) {
  expect_rank(logits.shape(), 2, "softmax", "logits");
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  Tensor<T> p(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    T mx = logits.at(r, 0);
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, logits.at(r, c));
    T total = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      p.at(r, c) = std::exp(logits.at(r, c) - mx);
      total += p.at(r, c);
    }
    for (std::size_t c = 0; c < cols; ++c) p.at(r, c) /= total;
  }
  return p;
}

template <class T>
LossOutput<T> softmax_cross_entropy(Tape<T>& tape, const Var<T>& logits, std::span<const int> targets) {
  const Tensor<T>& z = logits->tensor;
  expect_rank(z.shape(), 2, "softmax_cross_entropy", "logits");
  const std::size_t rows = z.dim(0), cols = z.dim(1);
  if (targets.size() != rows || rows == 0) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(rows) + " rows");
  }
  Tensor<T> probs(z.shape());
  T total_loss = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const int y = targets[r];
    if (y < 0 || static_cast<std::size_t>(y) >= cols) throw ShapeError("softmax_cross_entropy: target out of range");
    T mx = z.at(r, 0);
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, z.at(r, c));
    T total = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      probs.at(r, c) = std::exp(z.at(r, c) - mx);
      total += probs.at(r, c);
    }
    for (std::size_t c = 0; c < cols; ++c) probs.at(r, c) /= total;
    total_loss += mx + std::log(total) - z.at(r, static_cast<std::size_t>(y));
  }
  Tensor<T> loss({1}, total_loss / static_cast<T>(rows));
  check_finite(loss, "softmax_cross_entropy");
  std::vector<int> ys(targets.begin(), targets.end());
  LossOutput<T> result;
  result.probabilities = probs;
  result.loss = tape.record(std::move(loss), {logits}, [logits, probs = std::move(probs), ys = std::move(ys)](
                                                           Node<T>& self) {
    const T scale = cgrad(self)[0] / static_cast<T>(ys.size());
    auto g = logits->tensor.grad();
    const std::size_t cols = probs.dim(1);
    for (std::size_t r = 0; r < ys.size(); ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const T onehot = static_cast<std::size_t>(ys[r]) == c ? T(1) : T(0);
        g[r * cols + c] += scale * (probs.at(r, c) - onehot);
      }
    }
  });
  return result;
}

template <class T>
Var<T> sigmoid_cross_entropy(Tape<T>& tape, const Var<T>& logits, std::span<const int> targets) {
  const Tensor<T>& z = logits->tensor;
  expect_rank(z.shape(), 2, "sigmoid_cross_entropy", "logits");
  const std::size_t rows = z.dim(0), cols = z.dim(1);
  if (targets.size() != rows || rows == 0) throw ShapeError("sigmoid_cross_entropy: target count mismatch");
  T total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const int y = targets[r];
    if (y < 0 || static_cast<std::size_t>(y) >= cols) throw ShapeError("sigmoid_cross_entropy: target out of range");
    for (std::size_t c = 0; c < cols; ++c) {
      const T v = z.at(r, c);
      // softplus(v) = max(v, 0) + log1p(exp(-|v|))
      const T softplus = std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v)));
      total += softplus - (static_cast<std::size_t>(y) == c ? v : T(0));
    }
  }
  Tensor<T> loss({1}, total / static_cast<T>(rows));
  check_finite(loss, "sigmoid_cross_entropy");
  std::vector<int> ys(targets.begin(), targets.end());
  return tape.record(std::move(loss), {logits}, [logits, ys = std::move(ys), cols](Node<T>& self) {
    const T scale = cgrad(self)[0] / static_cast<T>(ys.size());
    auto g = logits->tensor.grad();
    for (std::size_t r = 0; r < ys.size(); ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const T p = stable_sigmoid(logits->tensor.at(r, c));
        const T onehot = static_cast<std::size_t>(ys[r]) == c ? T(1) : T(0);
        g[r * cols + c] += scale * (p - onehot);
      }
    }
  });
}

template <class T>
Var<T> dropout(Tape<T>& tape, const Var<T>& x, double rate, bool training, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(x->tensor.size());
  for (auto& m : mask) m = unit(rng) < rate ? T(0) : keep_scale;
  Tensor<T> out(x->tensor.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x->tensor[i] * mask[i];
  return tape.record(std::move(out), {x}, [x, mask = std::move(mask)](Node<T>& self) {
    auto dy = cgrad(self);
    auto g = x->tensor.grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * mask[i];
  });
}

template <class T>
Var<T> concat_last(Tape<T>& tape, const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_last: no inputs");
  Shape lead = parts[0]->tensor.shape();
  if (lead.empty()) throw ShapeError("concat_last: scalar input");
  lead.pop_back();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  bool any_grad = false;
  for (const auto& p : parts) {
    Shape s = p->tensor.shape();
    const std::size_t w = s.back();
    s.pop_back();
    if (s != lead) throw ShapeError("concat_last: leading dimensions differ: " + shape_str(p->tensor.shape()));
    widths.push_back(w);
    total += w;
    any_grad = any_grad || req(p);
  }
  const std::size_t rows = numel(lead);
  Shape out_shape = lead;
  out_shape.push_back(total);
  Tensor<T> out(out_shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& src = parts[k]->tensor;
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(src.data() + r * widths[k], widths[k], out.data() + r * total + offset);
    }
    offset += widths[k];
  }
  return tape.record(std::move(out), any_grad, [parts, widths, rows, total](Node<T>& self) {
    auto dy = cgrad(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (req(parts[k])) {
        auto g = parts[k]->tensor.grad();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < widths[k]; ++c) g[r * widths[k] + c] += dy[r * total + off + c];
        }
      }
      off += widths[k];
    }
  });
}

template <class T>
Var<T> slice_cols(Tape<T>& tape, const Var<T>& x, std::size_t start, std::size_t width) {
  const Shape& xs = x->tensor.shape();
  expect_rank(xs, 2, "slice_cols", "x");
  if (start + width > xs[1]) throw ShapeError("slice_cols: range exceeds " + shape_str(xs));
  const std::size_t rows = xs[0], cols = xs[1];
  Tensor<T> out({rows, width});
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(x->tensor.data() + r * cols + start, width, out.data() + r * width);
  return tape.record(std::move(out), {x}, [x, start, width, rows, cols](Node<T>& self) {
    auto dy = cgrad(self);
    auto g = x->tensor.grad();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < width; ++c) g[r * cols + start + c] += dy[r * width + c];
    }
  });
}

template <class T>
Var<T> time_step(Tape<T>& tape, const Var<T>& x, std::size_t t) {
  const Shape& xs = x->tensor.shape();
  expect_rank(xs, 3, "time_step", "x");
  if (t >= xs[1]) throw ShapeError("time_step: t out of range for " + shape_str(xs));
  const std::size_t batch = xs[0], time = xs[1], depth = xs[2];
  Tensor<T> out({batch, depth});
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(x->tensor.data() + (b * time + t) * depth, depth, out.data() + b * depth);
  }
  return tape.record(std::move(out), {x}, [x, t, batch, time, depth](Node<T>& self) {
    auto dy = cgrad(self);
    auto g = x->tensor.grad();
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t c = 0; c < depth; ++c) g[(b * time + t) * depth + c] += dy[b * depth + c];
    }
  });
}

template <class T>
Var<T> stack_time(Tape<T>& tape, const std::vector<Var<T>>& steps) {
  if (steps.empty()) throw ShapeError("stack_time: no steps");
  const Shape s0 = steps[0]->tensor.shape();
  expect_rank(s0, 2, "stack_time", "step");
  const std::size_t batch = s0[0], depth = s0[1], time = steps.size();
  bool any_grad = false;
  Tensor<T> out({batch, time, depth});
  for (std::size_t t = 0; t < time; ++t) {
    expect_same(steps[t]->tensor.shape(), s0, "stack_time");
    any_grad = any_grad || req(steps[t]);
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy_n(steps[t]->tensor.data() + b * depth, depth, out.data() + (b * time + t) * depth);
    }
  }
  return tape.record(std::move(out), any_grad, [steps, batch, time, depth](Node<T>& self) {
    auto dy = cgrad(self);
    for (std::size_t t = 0; t < time; ++t) {
      if (!req(steps[t])) continue;
      auto g = steps[t]->tensor.grad();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < depth; ++c) g[b * depth + c] += dy[(b * time + t) * depth + c];
      }
    }
  });
}

template <class T>
Var<T> gather_time(Tape<T>& tape, const Var<T>& x, std::span<const std::size_t> positions) {
  const Shape& xs = x->tensor.shape();
  expect_rank(xs, 3, "gather_time", "x");
  const std::size_t batch = xs[0], time = xs[1], depth = xs[2];
  if (positions.size() != batch) throw ShapeError("gather_time: positions size does not match batch");
  std::vector<std::size_t> pos(positions.begin(), positions.end());
  Tensor<T> out({batch, depth});
  for (std::size_t b = 0; b < batch; ++b) {
    if (pos[b] >= time) throw ShapeError("gather_time: position out of range");
    std::copy_n(x->tensor.data() + (b * time + pos[b]) * depth, depth, out.data() + b * depth);
  }
  return tape.record(std::move(out), {x}, [x, pos = std::move(pos), time, depth](Node<T>& self) {
    auto dy = cgrad(self);
    auto g = x->tensor.grad();
    for (std::size_t b = 0; b < pos.size(); ++b) {
      for (std::size_t c = 0; c < depth; ++c) g[(b * time + pos[b]) * depth + c] += dy[b * depth + c];
    }
  });
}

template <class T>
Var<T> scale_rows(Tape<T>& tape, const Var<T>& x, std::span<const T> scale) {
  const Shape& xs = x->tensor.shape();
  if (xs.empty() || scale.size() != xs[0]) throw ShapeError("scale_rows: scale size does not match rows");
  const std::size_t row = x->tensor.size() / xs[0];
  std::vector<T> s(scale.begin(), scale.end());
  Tensor<T> out(xs);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x->tensor[i] * s[i / row];
  return tape.record(std::move(out), {x}, [x, s = std::move(s), row](Node<T>& self) {
    auto dy = cgrad(self);
    auto g = x->tensor.grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * s[i / row];
  });
}

template <class T>
Var<T> reshape(Tape<T>& tape, const Var<T>& x, Shape shape) {
  Tensor<T> out(std::move(shape), x->tensor.vector());
  return tape.record(std::move(out), {x}, [x](Node<T>& self) {
    auto dy = cgrad(self);
    auto g = x->tensor.grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i];
  });
}

template <class T>
Var<T> embedding_gather(Tape<T>& tape, const Var<T>& table, std::span<const std::int32_t> indices,
                        std::size_t batch, std::size_t time) {
  const Shape& ts = table->tensor.shape();
  expect_rank(ts, 2, "embedding_gather", "table");
  if (indices.size() != batch * time) throw ShapeError("embedding_gather: index count does not match batch x time");
  const std::size_t vocab = ts[0], depth = ts[1];
  std::vector<std::int32_t> idx(indices.begin(), indices.end());
  Tensor<T> out({batch, time, depth});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= vocab) {
      throw std::out_of_range("embedding index " + std::to_string(idx[i]) + " outside vocabulary of size " +
                              std::to_string(vocab));
    }
    std::copy_n(table->tensor.data() + static_cast<std::size_t>(idx[i]) * depth, depth, out.data() + i * depth);
  }
  return tape.record(std::move(out), {table}, [table, idx = std::move(idx), depth](Node<T>& self) {
    auto dy = cgrad(self);
    auto g = table->tensor.grad();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const std::size_t row = static_cast<std::size_t>(idx[i]) * depth;
      for (std::size_t c = 0; c < depth; ++c) g[row + c] += dy[i * depth + c];
    }
  });
}

template <class T>
Var<T> qrnn_pool(Tape<T>& tape, const Var<T>& z, const Var<T>& f, const Var<T>& o) {
  const Shape& zs = z->tensor.shape();
  expect_rank(zs, 3, "qrnn_pool", "z");
  expect_same(zs, f->tensor.shape(), "qrnn_pool");
  if (o) expect_same(zs, o->tensor.shape(), "qrnn_pool");
  const kernels::PoolDims d{zs[0], zs[1], zs[2]};
  auto cells = std::make_shared<Tensor<T>>(zs);
  Tensor<T> out(zs);
  kernels::parallel::qrnn_pool<T>(cspan(z->tensor), cspan(f->tensor), o ? cspan(o->tensor) : std::span<const T>{},
                                  cells->values(), out.values(), d);
  check_finite(out, "qrnn_pool");
  return tape.record(std::move(out), {z, f, o}, [z, f, o, cells, d](Node<T>& self) {
    // The kernel writes all three gradients, so absent ones go to scratch.
    std::vector<T> scratch_z, scratch_f, scratch_o;
    auto grad_or_scratch = [](const Var<T>& v, std::vector<T>& scratch, std::size_t n) -> std::span<T> {
      if (req(v)) return v->tensor.grad();
      scratch.assign(n, T(0));
      return scratch;
    };
    const std::size_t n = self.tensor.size();
    auto dz = grad_or_scratch(z, scratch_z, n);
    auto df = grad_or_scratch(f, scratch_f, n);
    std::span<T> dout = o ? grad_or_scratch(o, scratch_o, n) : std::span<T>{};
    kernels::parallel::qrnn_pool_backward<T>(cspan(z->tensor), cspan(f->tensor),
                                             o ? cspan(o->tensor) : std::span<const T>{}, cspan(*cells),
                                             cgrad(self), dz, df, dout, d);
  });
}

template <class T>
Var<T> sum(Tape<T>& tape, const Var<T>& x) {
  T total = 0;
  for (T v : x->tensor.values()) total += v;
  return tape.record(Tensor<T>({1}, total), {x}, [x](Node<T>& self) {
    const T dy = cgrad(self)[0];
    auto g = x->tensor.grad();
    for (auto& v : g) v += dy;
  });
}

template <class T>
Var<T> weighted_sum(Tape<T>& tape, const Var<T>& x, std::span<const T> weights) {
  if (weights.size() != x->tensor.size()) throw ShapeError("weighted_sum: weight count does not match tensor");
  std::vector<T> w(weights.begin(), weights.end());
  T total = 0;
  for (std::size_t i = 0; i < w.size(); ++i) total += x->tensor[i] * w[i];
  return tape.record(Tensor<T>({1}, total), {x}, [x, w = std::move(w)](Node<T>& self) {
    const T dy = cgrad(self)[0];
    auto g = x->tensor.grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy * w[i];
  });
}

#define QCLASS_INSTANTIATE(T)                                                                                   \
  template Var<T> linear<T>(Tape<T>&, const Var<T>&, const Var<T>&, const Var<T>&);                             \
  template Var<T> matmul<T>(Tape<T>&, const Var<T>&, const Var<T>&);                                            \
  template Var<T> add<T>(Tape<T>&, const Var<T>&, const Var<T>&);                                               \
  template Var<T> mul<T>(Tape<T>&, const Var<T>&, const Var<T>&);                                               \
  template Var<T> sigmoid<T>(Tape<T>&, const Var<T>&);                                                          \
  template Var<T> tanh<T>(Tape<T>&, const Var<T>&);                                                             \
  template Var<T> relu<T>(Tape<T>&, const Var<T>&);                                                             \
  template Var<T> conv1d_time<T>(Tape<T>&, const Var<T>&, const Var<T>&, const Var<T>&);                        \
  template Var<T> masked_conv1d_time<T>(Tape<T>&, const Var<T>&, const Var<T>&, const Var<T>&);                 \
  template Var<T> maxpool_time<T>(Tape<T>&, const Var<T>&, std::span<const std::size_t>);                       \
  template Var<T> avgpool_time<T>(Tape<T>&, const Var<T>&, std::span<const std::size_t>);                       \
  template LossOutput<T> softmax_cross_entropy<T>(Tape<T>&, const Var<T>&, std::span<const int>);               \
  template Var<T> sigmoid_cross_entropy<T>(Tape<T>&, const Var<T>&, std::span<const int>);                      \
  template Tensor<T> softmax<T>(const Tensor<T>&);                                                              \
  template Var<T> dropout<T>(Tape<T>&, const Var<T>&, double, bool, Rng&);                                      \
  template Var<T> concat_last<T>(Tape<T>&, const std::vector<Var<T>>&);                                         \
  template Var<T> slice_cols<T>(Tape<T>&, const Var<T>&, std::size_t, std::size_t);                             \
  template Var<T> time_step<T>(Tape<T>&, const Var<T>&, std::size_t);                                           \
  template Var<T> stack_time<T>(Tape<T>&, const std::vector<Var<T>>&);                                          \
  template Var<T> gather_time<T>(Tape<T>&, const Var<T>&, std::span<const std::size_t>);                        \
  template Var<T> scale_rows<T>(Tape<T>&, const Var<T>&, std::span<const T>);                                   \
  template Var<T> reshape<T>(Tape<T>&, const Var<T>&, Shape);                                                   \
  template Var<T> embedding_gather<T>(Tape<T>&, const Var<T>&, std::span<const std::int32_t>, std::size_t,     \
                                      std::size_t);                                                             \
  template Var<T> qrnn_pool<T>(Tape<T>&, const Var<T>&, const Var<T>&, const Var<T>&);                          \
  template Var<T> sum<T>(Tape<T>&, const Var<T>&);                                                              \
  template Var<T> weighted_sum<T>(Tape<T>&, const Var<T>&, std::span<const T>);

QCLASS_INSTANTIATE(float)
QCLASS_INSTANTIATE(double)

#undef QCLASS_INSTANTIATE

}  // namespace qclass::ops
