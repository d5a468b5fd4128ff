#pragma once

// Differentiable operations recorded on a Tape. None of them mutates its inputs; every backward
// accumulates into the input gradients, so a tensor may feed several ops.
// Instantiated for float (training) and double (gradient checks).

#include <cstdint>
#include <span>
#include <vector>

#include "qclass/autograd.hpp"

namespace qclass::ops {

// When enabled, every op checks its output for NaN/Inf and throws std::domain_error naming the op.
// Defaults to on in debug builds.
void set_finite_checks(bool on);
bool finite_checks();

// x[B][F] * w[F][G] + b[G]
template <class T>
Var<T> linear(Tape<T>& tape, const Var<T>& x, const Var<T>& w, const Var<T>& b);

// x[B][F] * w[F][G]
template <class T>
Var<T> matmul(Tape<T>& tape, const Var<T>& x, const Var<T>& w);

template <class T>
Var<T> add(Tape<T>& tape, const Var<T>& a, const Var<T>& b);

// Elementwise product.
template <class T>
Var<T> mul(Tape<T>& tape, const Var<T>& a, const Var<T>& b);

template <class T>
Var<T> sigmoid(Tape<T>& tape, const Var<T>& x);
template <class T>
Var<T> tanh(Tape<T>& tape, const Var<T>& x);
template <class T>
Var<T> relu(Tape<T>& tape, const Var<T>& x);

// Valid convolution over time: x[B][T][D], filters[m][k][D], bias[m] -> [B][T-k+1][m].
template <class T>
Var<T> conv1d_time(Tape<T>& tape, const Var<T>& x, const Var<T>& filters, const Var<T>& bias);

// Causal convolution: the window for step t covers x[t-k+1 .. t], zeros before the start.
// x[B][T][D] -> [B][T][m].
template <class T>
Var<T> masked_conv1d_time(Tape<T>& tape, const Var<T>& x, const Var<T>& filters, const Var<T>& bias);

// Max over time of x[B][T'][m] -> [B][m]. Row b only considers positions t < valid[b] (all positions
// when valid is empty). Ties resolve to the earliest position, which alone receives the gradient.
template <class T>
Var<T> maxpool_time(Tape<T>& tape, const Var<T>& x, std::span<const std::size_t> valid = {});

// Mean of the first lengths[b] steps of x[B][T][D] -> [B][D].
template <class T>
Var<T> avgpool_time(Tape<T>& tape, const Var<T>& x, std::span<const std::size_t> lengths);

template <class T>
struct LossOutput {
  Var<T> loss;              // scalar, mean over the batch
  Tensor<T> probabilities;  // [B][C]
};

// Mean softmax cross-entropy of logits[B][C] against integer targets.
template <class T>
LossOutput<T> softmax_cross_entropy(Tape<T>& tape, const Var<T>& logits, std::span<const int> targets);

// One-vs-rest binary cross-entropy on per-class sigmoids: mean over rows of
// sum_c softplus(z_c) - [c == target] * z_c.
template <class T>
Var<T> sigmoid_cross_entropy(Tape<T>& tape, const Var<T>& logits, std::span<const int> targets);

// Row-wise softmax without recording (prediction readout).
template <class T>
Tensor<T> softmax(const Tensor<T>& logits);

// Inverted dropout. Identity when !training or rate == 0.
template <class T>
Var<T> dropout(Tape<T>& tape, const Var<T>& x, double rate, bool training, Rng& rng);

// Concatenates along the last axis; all other dimensions must agree.
template <class T>
Var<T> concat_last(Tape<T>& tape, const std::vector<Var<T>>& parts);

// Columns [start, start + width) of x[B][F].
template <class T>
Var<T> slice_cols(Tape<T>& tape, const Var<T>& x, std::size_t start, std::size_t width);

// x[B][T][D] at time t -> [B][D].
template <class T>
Var<T> time_step(Tape<T>& tape, const Var<T>& x, std::size_t t);

// T tensors of shape [B][D] -> [B][T][D].
template <class T>
Var<T> stack_time(Tape<T>& tape, const std::vector<Var<T>>& steps);

// Row b of x[B][T][D] at position positions[b] -> [B][D].
template <class T>
Var<T> gather_time(Tape<T>& tape, const Var<T>& x, std::span<const std::size_t> positions);

// Multiplies row b of x[B][...] by the constant scale[b].
template <class T>
Var<T> scale_rows(Tape<T>& tape, const Var<T>& x, std::span<const T> scale);

template <class T>
Var<T> reshape(Tape<T>& tape, const Var<T>& x, Shape shape);

// Row lookup: table[V][D], indices of length B*T -> [B][T][D]. Gradient flows into the table only
// when it requires one.
template <class T>
Var<T> embedding_gather(Tape<T>& tape, const Var<T>& table, std::span<const std::int32_t> indices,
                        std::size_t batch, std::size_t time);

// QRNN gated recurrence over z, f, o of shape [B][T][H] (already activated). A null o selects
// f-pooling (h = c), otherwise fo-pooling (h = o * c).
template <class T>
Var<T> qrnn_pool(Tape<T>& tape, const Var<T>& z, const Var<T>& f, const Var<T>& o);

// Scalar sum of all elements.
template <class T>
Var<T> sum(Tape<T>& tape, const Var<T>& x);

// Scalar sum of x * weights (weights constant, same size as x).
template <class T>
Var<T> weighted_sum(Tape<T>& tape, const Var<T>& x, std::span<const T> weights);

}  // namespace qclass::ops
