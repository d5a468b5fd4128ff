#pragma once

// Dense compute kernels behind the differentiable ops.
//
// Two implementations share one set of signatures:
//   kernels::reference  straightforward serial loops, kept as the test and benchmark baseline
//   kernels::parallel   OpenMP over independent outputs; used by the ops
//
// Every output element is reduced serially in a fixed order, so results do not depend on the
// thread count, and forward kernels match the reference bit-for-bit.
//
// Layouts are row-major. Backward kernels accumulate (+=) into their outputs.

#include <cstddef>
#include <span>

namespace qclass::kernels {

struct MatmulDims {
  std::size_t rows;   // B
  std::size_t inner;  // F
  std::size_t cols;   // G
};

// Time convolution over x[B][T][D] with filters[m][k][D].
// Output position t reads input positions t - lead + tau for tau in [0, k); positions before 0
// read as zero. lead = 0 gives the valid convolution (out_len = T - k + 1), lead = k - 1 the
// causal one (out_len = T).
struct ConvDims {
  std::size_t batch;
  std::size_t time;
  std::size_t depth;
  std::size_t filters;
  std::size_t width;
  std::size_t lead;
  std::size_t out_len;
};

ConvDims valid_conv_dims(std::size_t batch, std::size_t time, std::size_t depth, std::size_t filters,
                         std::size_t width);
ConvDims causal_conv_dims(std::size_t batch, std::size_t time, std::size_t depth, std::size_t filters,
                          std::size_t width);

// QRNN pooling over streams z, f, o of shape [B][T][H]; c and h outputs of the same shape.
struct PoolDims {
  std::size_t batch;
  std::size_t time;
  std::size_t hidden;
};

// In qrnn_pool, an empty o selects f-pooling (h = c); otherwise fo-pooling (h = o * c).
// c_t = f_t * c_{t-1} + (1 - f_t) * z_t with c_{-1} = 0.
// An empty bias span means no bias. Instantiated for float and double.

namespace reference {

template <class T>
void matmul(std::span<const T> x, std::span<const T> w, std::span<const T> bias, std::span<T> out, MatmulDims d);
template <class T>
void matmul_backward_input(std::span<const T> dy, std::span<const T> w, std::span<T> dx, MatmulDims d);
template <class T>
void matmul_backward_weight(std::span<const T> x, std::span<const T> dy, std::span<T> dw, std::span<T> dbias,
                            MatmulDims d);
template <class T>
void conv_time(std::span<const T> x, std::span<const T> filters, std::span<const T> bias, std::span<T> out,
               ConvDims d);
template <class T>
void conv_time_backward_input(std::span<const T> dy, std::span<const T> filters, std::span<T> dx, ConvDims d);
template <class T>
void conv_time_backward_filter(std::span<const T> x, std::span<const T> dy, std::span<T> dfilters,
                               std::span<T> dbias, ConvDims d);
template <class T>
void qrnn_pool(std::span<const T> z, std::span<const T> f, std::span<const T> o, std::span<T> c, std::span<T> h,
               PoolDims d);
template <class T>
void qrnn_pool_backward(std::span<const T> z, std::span<const T> f, std::span<const T> o, std::span<const T> c,
                        std::span<const T> dh, std::span<T> dz, std::span<T> df, std::span<T> dout, PoolDims d);

}  // namespace reference

namespace parallel {

template <class T>
void matmul(std::span<const T> x, std::span<const T> w, std::span<const T> bias, std::span<T> out, MatmulDims d);
template <class T>
void matmul_backward_input(std::span<const T> dy, std::span<const T> w, std::span<T> dx, MatmulDims d);
template <class T>
void matmul_backward_weight(std::span<const T> x, std::span<const T> dy, std::span<T> dw, std::span<T> dbias,
                            MatmulDims d);
template <class T>
void conv_time(std::span<const T> x, std::span<const T> filters, std::span<const T> bias, std::span<T> out,
               ConvDims d);
template <class T>
void conv_time_backward_input(std::span<const T> dy, std::span<const T> filters, std::span<T> dx, ConvDims d);
template <class T>
void conv_time_backward_filter(std::span<const T> x, std::span<const T> dy, std::span<T> dfilters,
                               std::span<T> dbias, ConvDims d);
template <class T>
void qrnn_pool(std::span<const T> z, std::span<const T> f, std::span<const T> o, std::span<T> c, std::span<T> h,
               PoolDims d);
template <class T>
void qrnn_pool_backward(std::span<const T> z, std::span<const T> f, std::span<const T> o, std::span<const T> c,
                        std::span<const T> dh, std::span<T> dz, std::span<T> df, std::span<T> dout, PoolDims d);

// Worker count used by OpenMP regions (1 when built without OpenMP).
int max_threads();
void set_threads(int n);

}  // namespace parallel

}  // namespace qclass::kernels
