#include "qclass/kernels.hpp"

namespace qclass::kernels {

ConvDims valid_conv_dims(std::size_t batch, std::size_t time, std::size_t depth, std::size_t filters,
                         std::size_t width) {
  return {batch, time, depth, filters, width, 0, time + 1 - width};
}

ConvDims causal_conv_dims(std::size_t batch, std::size_t time, std::size_t depth, std::size_t filters,
                          std::size_t width) {
  return {batch, time, depth, filters, width, width - 1, time};
}

namespace reference {

template <class T>
void matmul(std::span<const T> x, std::span<const T> w, std::span<const T> bias, std::span<T> out,
            MatmulDims d) {
  for (std::size_t b = 0; b < d.rows; ++b) {
    for (std::size_t g = 0; g < d.cols; ++g) {
      T acc = 0;
      for (std::size_t f = 0; f < d.inner; ++f) acc += x[b * d.inner + f] * w[f * d.cols + g];
      if (!bias.empty()) acc += bias[g];
      out[b * d.cols + g] = acc;
    }
  }
}

template <class T>
void matmul_backward_input(std::span<const T> dy, std::span<const T> w, std::span<T> dx, MatmulDims d) {
  for (std::size_t b = 0; b < d.rows; ++b) {
    for (std::size_t f = 0; f < d.inner; ++f) {
      T acc = 0;
      for (std::size_t g = 0; g < d.cols; ++g) acc += dy[b * d.cols + g] * w[f * d.cols + g];
      dx[b * d.inner + f] += acc;
    }
  }
}

template <class T>
void matmul_backward_weight(std::span<const T> x, std::span<const T> dy, std::span<T> dw, std::span<T> dbias,
                            MatmulDims d) {
  for (std::size_t f = 0; f < d.inner; ++f) {
    for (std::size_t g = 0; g < d.cols; ++g) {
      T acc = 0;
      for (std::size_t b = 0; b < d.rows; ++b) acc += x[b * d.inner + f] * dy[b * d.cols + g];
      dw[f * d.cols + g] += acc;
    }
  }
  if (!dbias.empty()) {
    for (std::size_t g = 0; g < d.cols; ++g) {
      T acc = 0;
      for (std::size_t b = 0; b < d.rows; ++b) acc += dy[b * d.cols + g];
      dbias[g] += acc;
    }
  }
}

template <class T>
void conv_time(std::span<const T> x, std::span<const T> filters, std::span<const T> bias, std::span<T> out,
               ConvDims d) {
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t t = 0; t < d.out_len; ++t) {
      for (std::size_t j = 0; j < d.filters; ++j) {
        T acc = 0;
        for (std::size_t tau = 0; tau < d.width; ++tau) {
          if (t + tau < d.lead) continue;
          const std::size_t s = t + tau - d.lead;
          for (std::size_t c = 0; c < d.depth; ++c) {
            acc += filters[(j * d.width + tau) * d.depth + c] * x[(b * d.time + s) * d.depth + c];
          }
        }
        if (!bias.empty()) acc += bias[j];
        out[(b * d.out_len + t) * d.filters + j] = acc;
      }
    }
  }
}

template <class T>
void conv_time_backward_input(std::span<const T> dy, std::span<const T> filters, std::span<T> dx, ConvDims d) {
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t t = 0; t < d.out_len; ++t) {
      for (std::size_t tau = 0; tau < d.width; ++tau) {
        if (t + tau < d.lead) continue;
        const std::size_t s = t + tau - d.lead;
        for (std::size_t j = 0; j < d.filters; ++j) {
          const T g = dy[(b * d.out_len + t) * d.filters + j];
          for (std::size_t c = 0; c < d.depth; ++c) {
            dx[(b * d.time + s) * d.depth + c] += g * filters[(j * d.width + tau) * d.depth + c];
          }
        }
      }
    }
  }
}

template <class T>
void conv_time_backward_filter(std::span<const T> x, std::span<const T> dy, std::span<T> dfilters,
                               std::span<T> dbias, ConvDims d) {
  for (std::size_t j = 0; j < d.filters; ++j) {
    for (std::size_t b = 0; b < d.batch; ++b) {
      for (std::size_t t = 0; t < d.out_len; ++t) {
        const T g = dy[(b * d.out_len + t) * d.filters + j];
        for (std::size_t tau = 0; tau < d.width; ++tau) {
          if (t + tau < d.lead) continue;
          const std::size_t s = t + tau - d.lead;
          for (std::size_t c = 0; c < d.depth; ++c) {
            dfilters[(j * d.width + tau) * d.depth + c] += g * x[(b * d.time + s) * d.depth + c];
          }
        }
      }
    }
    if (!dbias.empty()) {
      T acc = 0;
      for (std::size_t b = 0; b < d.batch; ++b) {
        for (std::size_t t = 0; t < d.out_len; ++t) acc += dy[(b * d.out_len + t) * d.filters + j];
      }
      dbias[j] += acc;
    }
  }
}

template <class T>
void qrnn_pool(std::span<const T> z, std::span<const T> f, std::span<const T> o, std::span<T> c, std::span<T> h,
               PoolDims d) {
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t u = 0; u < d.hidden; ++u) {
      T prev = 0;
      for (std::size_t t = 0; t < d.time; ++t) {
        const std::size_t i = (b * d.time + t) * d.hidden + u;
        prev = f[i] * prev + (T(1) - f[i]) * z[i];
        c[i] = prev;
        h[i] = o.empty() ? prev : o[i] * prev;
      }
    }
  }
}

template <class T>
void qrnn_pool_backward(std::span<const T> z, std::span<const T> f, std::span<const T> o, std::span<const T> c,
                        std::span<const T> dh, std::span<T> dz, std::span<T> df, std::span<T> dout, PoolDims d) {
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t u = 0; u < d.hidden; ++u) {
      T carry = 0;  // dL/dc_t arriving from c_{t+1}
      for (std::size_t t = d.time; t-- > 0;) {
        const std::size_t i = (b * d.time + t) * d.hidden + u;
        T dc = carry;
        if (o.empty()) {
          dc += dh[i];
        } else {
          dc += dh[i] * o[i];
          dout[i] += dh[i] * c[i];
        }
        const T c_prev = t > 0 ? c[i - d.hidden] : T(0);
        dz[i] += dc * (T(1) - f[i]);
        df[i] += dc * (c_prev - z[i]);
        carry = dc * f[i];
      }
    }
  }
}

#define QCLASS_INSTANTIATE(T)                                                                                   \
  template void matmul<T>(std::span<const T>, std::span<const T>, std::span<const T>, std::span<T>, MatmulDims); \
  template void matmul_backward_input<T>(std::span<const T>, std::span<const T>, std::span<T>, MatmulDims);      \
  template void matmul_backward_weight<T>(std::span<const T>, std::span<const T>, std::span<T>, std::span<T>,    \
                                          MatmulDims);                                                           \
  template void conv_time<T>(std::span<const T>, std::span<const T>, std::span<const T>, std::span<T>,           \
                             ConvDims);                                                                          \
  template void conv_time_backward_input<T>(std::span<const T>, std::span<const T>, std::span<T>, ConvDims);     \
  template void conv_time_backward_filter<T>(std::span<const T>, std::span<const T>, std::span<T>, std::span<T>, \
                                             ConvDims);                                                          \
  template void qrnn_pool<T>(std::span<const T>, std::span<const T>, std::span<const T>, std::span<T>,           \
                             std::span<T>, PoolDims);                                                            \
  template void qrnn_pool_backward<T>(std::span<const T>, std::span<const T>, std::span<const T>,                \
                                      std::span<const T>, std::span<const T>, std::span<T>, std::span<T>,        \
                                      std::span<T>, PoolDims);

QCLASS_INSTANTIATE(float)
QCLASS_INSTANTIATE(double)

#undef QCLASS_INSTANTIATE

}  // namespace reference
}  // namespace qclass::kernels
