#include <algorithm>
#include <vector>

#include "qclass/kernels.hpp"

#ifdef QCLASS_HAVE_OPENMP
#include <omp.h>
#endif

namespace qclass::kernels::parallel {

namespace {

// Below this many multiply-adds a region runs on the calling thread.
constexpr std::size_t kMinParallelWork = std::size_t{1} << 15;

inline long as_long(std::size_t n) { return static_cast<long>(n); }

}  // namespace

int max_threads() {
#ifdef QCLASS_HAVE_OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) {
#ifdef QCLASS_HAVE_OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

template <class T>
void matmul(std::span<const T> x, std::span<const T> w, std::span<const T> bias, std::span<T> out,
            MatmulDims d) {
  const bool par = d.rows * d.inner * d.cols >= kMinParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (long bi = 0; bi < as_long(d.rows); ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    T* row = out.data() + b * d.cols;
    std::fill(row, row + d.cols, T(0));
    const T* xrow = x.data() + b * d.inner;
    for (std::size_t f = 0; f < d.inner; ++f) {
      const T xv = xrow[f];
      const T* wrow = w.data() + f * d.cols;
      for (std::size_t g = 0; g < d.cols; ++g) row[g] += xv * wrow[g];
    }
    if (!bias.empty()) {
      for (std::size_t g = 0; g < d.cols; ++g) row[g] += bias[g];
    }
  }
}

template <class T>
void matmul_backward_input(std::span<const T> dy, std::span<const T> w, std::span<T> dx, MatmulDims d) {
  const bool par = d.rows * d.inner * d.cols >= kMinParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (long bi = 0; bi < as_long(d.rows); ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    const T* dyrow = dy.data() + b * d.cols;
    for (std::size_t f = 0; f < d.inner; ++f) {
      const T* wrow = w.data() + f * d.cols;
      T acc = 0;
      for (std::size_t g = 0; g < d.cols; ++g) acc += dyrow[g] * wrow[g];
      dx[b * d.inner + f] += acc;
    }
  }
}

template <class T>
void matmul_backward_weight(std::span<const T> x, std::span<const T> dy, std::span<T> dw, std::span<T> dbias,
                            MatmulDims d) {
  const bool par = d.rows * d.inner * d.cols >= kMinParallelWork;
#pragma omp parallel if (par)
  {
    std::vector<T> acc(d.cols);
#pragma omp for schedule(static)
    for (long fi = 0; fi < as_long(d.inner); ++fi) {
      const auto f = static_cast<std::size_t>(fi);
      std::fill(acc.begin(), acc.end(), T(0));
      for (std::size_t b = 0; b < d.rows; ++b) {
        const T xv = x[b * d.inner + f];
        const T* dyrow = dy.data() + b * d.cols;
        for (std::size_t g = 0; g < d.cols; ++g) acc[g] += xv * dyrow[g];
      }
      T* dwrow = dw.data() + f * d.cols;
      for (std::size_t g = 0; g < d.cols; ++g) dwrow[g] += acc[g];
    }
  }
  if (!dbias.empty()) {
    std::vector<T> acc(d.cols, T(0));
    for (std::size_t b = 0; b < d.rows; ++b) {
      const T* dyrow = dy.data() + b * d.cols;
      for (std::size_t g = 0; g < d.cols; ++g) acc[g] += dyrow[g];
    }
    for (std::size_t g = 0; g < d.cols; ++g) dbias[g] += acc[g];
  }
}

template <class T>
void conv_time(std::span<const T> x, std::span<const T> filters, std::span<const T> bias, std::span<T> out,
               ConvDims d) {
  // filters[m][k][D] -> taps[k][D][m] so the innermost loop runs over contiguous filters.
  std::vector<T> taps(filters.size());
  for (std::size_t j = 0; j < d.filters; ++j) {
    for (std::size_t q = 0; q < d.width * d.depth; ++q) taps[q * d.filters + j] = filters[j * d.width * d.depth + q];
  }
  const std::size_t windows = d.batch * d.out_len;
  const bool par = windows * d.width * d.depth * d.filters >= kMinParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (long wi = 0; wi < as_long(windows); ++wi) {
    const auto w = static_cast<std::size_t>(wi);
    const std::size_t b = w / d.out_len;
    const std::size_t t = w % d.out_len;
    T* row = out.data() + w * d.filters;
    std::fill(row, row + d.filters, T(0));
    for (std::size_t tau = 0; tau < d.width; ++tau) {
      if (t + tau < d.lead) continue;
      const std::size_t s = t + tau - d.lead;
      const T* xrow = x.data() + (b * d.time + s) * d.depth;
      for (std::size_t c = 0; c < d.depth; ++c) {
        const T xv = xrow[c];
        const T* tap = taps.data() + (tau * d.depth + c) * d.filters;
        for (std::size_t j = 0; j < d.filters; ++j) row[j] += tap[j] * xv;
      }
    }
    if (!bias.empty()) {
      for (std::size_t j = 0; j < d.filters; ++j) row[j] += bias[j];
    }
  }
}

template <class T>
void conv_time_backward_input(std::span<const T> dy, std::span<const T> filters, std::span<T> dx, ConvDims d) {
  const bool par = d.batch * d.out_len * d.width * d.depth * d.filters >= kMinParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (long bi = 0; bi < as_long(d.batch); ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    for (std::size_t t = 0; t < d.out_len; ++t) {
      const T* dyrow = dy.data() + (b * d.out_len + t) * d.filters;
      for (std::size_t tau = 0; tau < d.width; ++tau) {
        if (t + tau < d.lead) continue;
        T* dxrow = dx.data() + (b * d.time + t + tau - d.lead) * d.depth;
        for (std::size_t j = 0; j < d.filters; ++j) {
          const T g = dyrow[j];
          const T* frow = filters.data() + (j * d.width + tau) * d.depth;
          for (std::size_t c = 0; c < d.depth; ++c) dxrow[c] += g * frow[c];
        }
      }
    }
  }
}

template <class T>
void conv_time_backward_filter(std::span<const T> x, std::span<const T> dy, std::span<T> dfilters,
                               std::span<T> dbias, ConvDims d) {
  const bool par = d.batch * d.out_len * d.width * d.depth * d.filters >= kMinParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (long ji = 0; ji < as_long(d.filters); ++ji) {
    const auto j = static_cast<std::size_t>(ji);
    for (std::size_t b = 0; b < d.batch; ++b) {
      for (std::size_t t = 0; t < d.out_len; ++t) {
        const T g = dy[(b * d.out_len + t) * d.filters + j];
        for (std::size_t tau = 0; tau < d.width; ++tau) {
          if (t + tau < d.lead) continue;
          const T* xrow = x.data() + (b * d.time + t + tau - d.lead) * d.depth;
          T* frow = dfilters.data() + (j * d.width + tau) * d.depth;
          for (std::size_t c = 0; c < d.depth; ++c) frow[c] += g * xrow[c];
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
  const bool par = d.batch * d.time * d.hidden >= kMinParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (long bi = 0; bi < as_long(d.batch); ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    for (std::size_t t = 0; t < d.time; ++t) {
      const std::size_t base = (b * d.time + t) * d.hidden;
      for (std::size_t u = 0; u < d.hidden; ++u) {
        const std::size_t i = base + u;
        const T prev = t > 0 ? c[i - d.hidden] : T(0);
        const T next = f[i] * prev + (T(1) - f[i]) * z[i];
        c[i] = next;
        h[i] = o.empty() ? next : o[i] * next;
      }
    }
  }
}

template <class T>
void qrnn_pool_backward(std::span<const T> z, std::span<const T> f, std::span<const T> o, std::span<const T> c,
                        std::span<const T> dh, std::span<T> dz, std::span<T> df, std::span<T> dout, PoolDims d) {
  const bool par = d.batch * d.time * d.hidden >= kMinParallelWork;
#pragma omp parallel if (par)
  {
    std::vector<T> carry(d.hidden);
#pragma omp for schedule(static)
    for (long bi = 0; bi < as_long(d.batch); ++bi) {
      const auto b = static_cast<std::size_t>(bi);
      std::fill(carry.begin(), carry.end(), T(0));
      for (std::size_t t = d.time; t-- > 0;) {
        const std::size_t base = (b * d.time + t) * d.hidden;
        for (std::size_t u = 0; u < d.hidden; ++u) {
          const std::size_t i = base + u;
          T dc = carry[u];
          if (o.empty()) {
            dc += dh[i];
          } else {
            dc += dh[i] * o[i];
            dout[i] += dh[i] * c[i];
          }
          const T c_prev = t > 0 ? c[i - d.hidden] : T(0);
          dz[i] += dc * (T(1) - f[i]);
          df[i] += dc * (c_prev - z[i]);
          carry[u] = dc * f[i];
        }
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

}  // namespace qclass::kernels::parallel
