#pragma once

// Low-level dense kernels behind the tape ops. Every kernel comes in two
// flavors: a plain serial reference (kernels::serial) and an OpenMP-parallel
// version (kernels::parallel). Both accumulate each output element in the
// same k-order, so their results are bit-identical and the parity tests can
// compare exactly. The process-wide switch picks the flavor at run time;
// tools/bench_kernels times them against each other.

#include <cmath>
#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mmd::kernels {

using i64 = std::int64_t;

inline bool& parallel_flag() {
  static bool enabled = true;
  return enabled;
}
inline bool parallel_enabled() { return parallel_flag(); }
inline void set_parallel(bool on) { parallel_flag() = on; }

template <typename T>
inline T gelu_scalar(T x) {
  // tanh approximation used by GPT-2
  const T c = T(0.7978845608028654);  // sqrt(2/pi)
  T u = c * (x + T(0.044715) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
inline T gelu_grad_scalar(T x) {
  const T c = T(0.7978845608028654);
  T x3 = x * x * x;
  T u = c * (x + T(0.044715) * x3);
  T th = std::tanh(u);
  T du = c * (T(1) + T(3) * T(0.044715) * x * x);
  return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du;
}

namespace serial {

// c[m x n] = a[m x k] * b[k x n], or += when accumulate
template <typename T>
void matmul_nn(const T* a, const T* b, T* c, i64 m, i64 k, i64 n,
               bool accumulate) {
  for (i64 i = 0; i < m; ++i) {
    for (i64 j = 0; j < n; ++j) {
      T acc = accumulate ? c[i * n + j] : T(0);
      for (i64 p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

// c[m x n] = a[m x k] * b[n x k]^T
template <typename T>
void matmul_nt(const T* a, const T* b, T* c, i64 m, i64 k, i64 n,
               bool accumulate) {
  for (i64 i = 0; i < m; ++i) {
    for (i64 j = 0; j < n; ++j) {
      T acc = accumulate ? c[i * n + j] : T(0);
      for (i64 p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] = acc;
    }
  }
}

// c[m x n] = a[k x m]^T * b[k x n]
template <typename T>
void matmul_tn(const T* a, const T* b, T* c, i64 m, i64 k, i64 n,
               bool accumulate) {
  for (i64 i = 0; i < m; ++i) {
    for (i64 j = 0; j < n; ++j) {
      T acc = accumulate ? c[i * n + j] : T(0);
      for (i64 p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

template <typename T>
void axpy(T* y, const T* x, T alpha, i64 n) {
  for (i64 i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void gelu_forward(const T* x, T* y, i64 n) {
  for (i64 i = 0; i < n; ++i) y[i] = gelu_scalar(x[i]);
}

template <typename T>
void gelu_backward(const T* x, const T* dy, T* dx, i64 n) {
  for (i64 i = 0; i < n; ++i) dx[i] += gelu_grad_scalar(x[i]) * dy[i];
}

// Row softmax over the first prefix[r] columns (full row when prefix is
// null); masked-out outputs are zero.
template <typename T>
void softmax_rows(const T* x, T* y, i64 rows, i64 cols, const i64* prefix) {
  for (i64 r = 0; r < rows; ++r) {
    i64 w = prefix ? prefix[r] : cols;
    const T* xr = x + r * cols;
    T* yr = y + r * cols;
    T mx = xr[0];
    for (i64 j = 1; j < w; ++j) mx = std::max(mx, xr[j]);
    T sum = T(0);
    for (i64 j = 0; j < w; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    T inv = T(1) / sum;
    for (i64 j = 0; j < w; ++j) yr[j] *= inv;
    for (i64 j = w; j < cols; ++j) yr[j] = T(0);
  }
}

template <typename T>
void softmax_backward_rows(const T* y, const T* dy, T* dx, i64 rows, i64 cols,
                           const i64* prefix) {
  for (i64 r = 0; r < rows; ++r) {
    i64 w = prefix ? prefix[r] : cols;
    const T* yr = y + r * cols;
    const T* dyr = dy + r * cols;
    T* dxr = dx + r * cols;
    T dot = T(0);
    for (i64 j = 0; j < w; ++j) dot += yr[j] * dyr[j];
    for (i64 j = 0; j < w; ++j) dxr[j] += yr[j] * (dyr[j] - dot);
  }
}

template <typename T>
void layer_norm_forward(const T* x, const T* gain, const T* bias, T* y,
                        T* mean, T* rstd, i64 rows, i64 cols, T eps) {
  for (i64 r = 0; r < rows; ++r) {
    const T* xr = x + r * cols;
    T* yr = y + r * cols;
    T mu = T(0);
    for (i64 j = 0; j < cols; ++j) mu += xr[j];
    mu /= T(cols);
    T var = T(0);
    for (i64 j = 0; j < cols; ++j) {
      T d = xr[j] - mu;
      var += d * d;
    }
    var /= T(cols);
    T rs = T(1) / std::sqrt(var + eps);
    mean[r] = mu;
    rstd[r] = rs;
    for (i64 j = 0; j < cols; ++j) yr[j] = (xr[j] - mu) * rs * gain[j] + bias[j];
  }
}

template <typename T>
void layer_norm_backward_dx(const T* x, const T* gain, const T* mean,
                            const T* rstd, const T* dy, T* dx, i64 rows,
                            i64 cols) {
  for (i64 r = 0; r < rows; ++r) {
    const T* xr = x + r * cols;
    const T* dyr = dy + r * cols;
    T* dxr = dx + r * cols;
    T mu = mean[r], rs = rstd[r];
    T s1 = T(0), s2 = T(0);
    for (i64 j = 0; j < cols; ++j) {
      T g = gain[j] * dyr[j];
      T xh = (xr[j] - mu) * rs;
      s1 += g;
      s2 += g * xh;
    }
    s1 /= T(cols);
    s2 /= T(cols);
    for (i64 j = 0; j < cols; ++j) {
      T g = gain[j] * dyr[j];
      T xh = (xr[j] - mu) * rs;
      dxr[j] += (g - s1 - xh * s2) * rs;
    }
  }
}

template <typename T>
void embedding_gather(const T* table, const std::int32_t* ids, T* out,
                      i64 rows, i64 cols) {
  for (i64 r = 0; r < rows; ++r) {
    const T* src = table + static_cast<i64>(ids[r]) * cols;
    T* dst = out + r * cols;
    for (i64 j = 0; j < cols; ++j) dst[j] = src[j];
  }
}

template <typename T>
void adam_step(T* p, const T* g, T* m, T* v, i64 n, T lr, T beta1, T beta2,
               T eps, T bias1, T bias2) {
  for (i64 i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (T(1) - beta1) * g[i];
    v[i] = beta2 * v[i] + (T(1) - beta2) * g[i] * g[i];
    T mhat = m[i] / bias1;
    T vhat = v[i] / bias2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

}  // namespace serial

namespace parallel {

template <typename T>
void matmul_nn(const T* a, const T* b, T* c, i64 m, i64 k, i64 n,
               bool accumulate) {
#pragma omp parallel for schedule(static)
  for (i64 i = 0; i < m; ++i) {
    T* cr = c + i * n;
    if (!accumulate)
      for (i64 j = 0; j < n; ++j) cr[j] = T(0);
    const T* ar = a + i * k;
    // ikj order: cache-friendly on b, same per-element accumulation order
    // as the serial reference
    for (i64 p = 0; p < k; ++p) {
      T av = ar[p];
      const T* br = b + p * n;
      for (i64 j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

template <typename T>
void matmul_nt(const T* a, const T* b, T* c, i64 m, i64 k, i64 n,
               bool accumulate) {
#pragma omp parallel for schedule(static)
  for (i64 i = 0; i < m; ++i) {
    const T* ar = a + i * k;
    T* cr = c + i * n;
    for (i64 j = 0; j < n; ++j) {
      const T* br = b + j * k;
      T acc = accumulate ? cr[j] : T(0);
      for (i64 p = 0; p < k; ++p) acc += ar[p] * br[p];
      cr[j] = acc;
    }
  }
}

template <typename T>
void matmul_tn(const T* a, const T* b, T* c, i64 m, i64 k, i64 n,
               bool accumulate) {
#pragma omp parallel for schedule(static)
  for (i64 i = 0; i < m; ++i) {
    T* cr = c + i * n;
    for (i64 j = 0; j < n; ++j) {
      T acc = accumulate ? cr[j] : T(0);
      for (i64 p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
      cr[j] = acc;
    }
  }
}

template <typename T>
void axpy(T* y, const T* x, T alpha, i64 n) {
#pragma omp parallel for schedule(static)
  for (i64 i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void gelu_forward(const T* x, T* y, i64 n) {
#pragma omp parallel for schedule(static)
  for (i64 i = 0; i < n; ++i) y[i] = gelu_scalar(x[i]);
}

template <typename T>
void gelu_backward(const T* x, const T* dy, T* dx, i64 n) {
#pragma omp parallel for schedule(static)
  for (i64 i = 0; i < n; ++i) dx[i] += gelu_grad_scalar(x[i]) * dy[i];
}

template <typename T>
void softmax_rows(const T* x, T* y, i64 rows, i64 cols, const i64* prefix) {
#pragma omp parallel for schedule(static)
  for (i64 r = 0; r < rows; ++r)
    serial::softmax_rows(x + r * cols, y + r * cols, 1, cols,
                         prefix ? prefix + r : nullptr);
}

template <typename T>
void softmax_backward_rows(const T* y, const T* dy, T* dx, i64 rows, i64 cols,
                           const i64* prefix) {
#pragma omp parallel for schedule(static)
  for (i64 r = 0; r < rows; ++r)
    serial::softmax_backward_rows(y + r * cols, dy + r * cols, dx + r * cols,
                                  1, cols, prefix ? prefix + r : nullptr);
}

template <typename T>
void layer_norm_forward(const T* x, const T* gain, const T* bias, T* y,
                        T* mean, T* rstd, i64 rows, i64 cols, T eps) {
#pragma omp parallel for schedule(static)
  for (i64 r = 0; r < rows; ++r)
    serial::layer_norm_forward(x + r * cols, gain, bias, y + r * cols,
                               mean + r, rstd + r, 1, cols, eps);
}

template <typename T>
void layer_norm_backward_dx(const T* x, const T* gain, const T* mean,
                            const T* rstd, const T* dy, T* dx, i64 rows,
                            i64 cols) {
#pragma omp parallel for schedule(static)
  for (i64 r = 0; r < rows; ++r)
    serial::layer_norm_backward_dx(x + r * cols, gain, mean + r, rstd + r,
                                   dy + r * cols, dx + r * cols, 1, cols);
}

template <typename T>
void embedding_gather(const T* table, const std::int32_t* ids, T* out,
                      i64 rows, i64 cols) {
#pragma omp parallel for schedule(static)
  for (i64 r = 0; r < rows; ++r)
    serial::embedding_gather(table, ids + r, out + r * cols, 1, cols);
}

template <typename T>
void adam_step(T* p, const T* g, T* m, T* v, i64 n, T lr, T beta1, T beta2,
               T eps, T bias1, T bias2) {
#pragma omp parallel for schedule(static)
  for (i64 i = 0; i < n; ++i)
    serial::adam_step(p + i, g + i, m + i, v + i, 1, lr, beta1, beta2, eps,
                      bias1, bias2);
}

}  // namespace parallel

// --- dispatch on the process-wide flag ---

template <typename T>
void matmul_nn(const T* a, const T* b, T* c, i64 m, i64 k, i64 n,
               bool accumulate = false) {
  if (parallel_enabled())
    parallel::matmul_nn(a, b, c, m, k, n, accumulate);
  else
    serial::matmul_nn(a, b, c, m, k, n, accumulate);
}

template <typename T>
void matmul_nt(const T* a, const T* b, T* c, i64 m, i64 k, i64 n,
               bool accumulate = false) {
  if (parallel_enabled())
    parallel::matmul_nt(a, b, c, m, k, n, accumulate);
  else
    serial::matmul_nt(a, b, c, m, k, n, accumulate);
}

template <typename T>
void matmul_tn(const T* a, const T* b, T* c, i64 m, i64 k, i64 n,
               bool accumulate = false) {
  if (parallel_enabled())
    parallel::matmul_tn(a, b, c, m, k, n, accumulate);
  else
    serial::matmul_tn(a, b, c, m, k, n, accumulate);
}

template <typename T>
void axpy(T* y, const T* x, T alpha, i64 n) {
  if (parallel_enabled())
    parallel::axpy(y, x, alpha, n);
  else
    serial::axpy(y, x, alpha, n);
}

template <typename T>
void gelu_forward(const T* x, T* y, i64 n) {
  if (parallel_enabled())
    parallel::gelu_forward(x, y, n);
  else
    serial::gelu_forward(x, y, n);
}

template <typename T>
void gelu_backward(const T* x, const T* dy, T* dx, i64 n) {
  if (parallel_enabled())
    parallel::gelu_backward(x, dy, dx, n);
  else
    serial::gelu_backward(x, dy, dx, n);
}

template <typename T>
void softmax_rows(const T* x, T* y, i64 rows, i64 cols,
                  const i64* prefix = nullptr) {
  if (parallel_enabled())
    parallel::softmax_rows(x, y, rows, cols, prefix);
  else
    serial::softmax_rows(x, y, rows, cols, prefix);
}

template <typename T>
void softmax_backward_rows(const T* y, const T* dy, T* dx, i64 rows, i64 cols,
                           const i64* prefix = nullptr) {
  if (parallel_enabled())
    parallel::softmax_backward_rows(y, dy, dx, rows, cols, prefix);
  else
    serial::softmax_backward_rows(y, dy, dx, rows, cols, prefix);
}

template <typename T>
void layer_norm_forward(const T* x, const T* gain, const T* bias, T* y,
                        T* mean, T* rstd, i64 rows, i64 cols, T eps) {
  if (parallel_enabled())
    parallel::layer_norm_forward(x, gain, bias, y, mean, rstd, rows, cols, eps);
  else
    serial::layer_norm_forward(x, gain, bias, y, mean, rstd, rows, cols, eps);
}

template <typename T>
void layer_norm_backward_dx(const T* x, const T* gain, const T* mean,
                            const T* rstd, const T* dy, T* dx, i64 rows,
                            i64 cols) {
  if (parallel_enabled())
    parallel::layer_norm_backward_dx(x, gain, mean, rstd, dy, dx, rows, cols);
  else
    serial::layer_norm_backward_dx(x, gain, mean, rstd, dy, dx, rows, cols);
}

// dgain/dbias reduce across rows; kept serial so the result does not depend
// on thread count.
template <typename T>
void layer_norm_backward_params(const T* x, const T* mean, const T* rstd,
                                const T* dy, T* dgain, T* dbias, i64 rows,
                                i64 cols) {
  for (i64 r = 0; r < rows; ++r) {
    const T* xr = x + r * cols;
    const T* dyr = dy + r * cols;
    for (i64 j = 0; j < cols; ++j) {
      T xh = (xr[j] - mean[r]) * rstd[r];
      dgain[j] += dyr[j] * xh;
      dbias[j] += dyr[j];
    }
  }
}

template <typename T>
void embedding_gather(const T* table, const std::int32_t* ids, T* out,
                      i64 rows, i64 cols) {
  if (parallel_enabled())
    parallel::embedding_gather(table, ids, out, rows, cols);
  else
    serial::embedding_gather(table, ids, out, rows, cols);
}

// scatter-add with possibly repeated ids; serial on purpose
template <typename T>
void embedding_scatter_add(T* table_grad, const std::int32_t* ids,
                           const T* dy, i64 rows, i64 cols) {
  for (i64 r = 0; r < rows; ++r) {
    T* dst = table_grad + static_cast<i64>(ids[r]) * cols;
    const T* src = dy + r * cols;
    for (i64 j = 0; j < cols; ++j) dst[j] += src[j];
  }
}

template <typename T>
void adam_step(T* p, const T* g, T* m, T* v, i64 n, T lr, T beta1, T beta2,
               T eps, T bias1, T bias2) {
  if (parallel_enabled())
    parallel::adam_step(p, g, m, v, n, lr, beta1, beta2, eps, bias1, bias2);
  else
    serial::adam_step(p, g, m, v, n, lr, beta1, beta2, eps, bias1, bias2);
}

// deterministic reductions, serial on purpose
template <typename T>
T sum(const T* x, i64 n) {
  T s = T(0);
  for (i64 i = 0; i < n; ++i) s += x[i];
  return s;
}

template <typename T>
T sum_squares(const T* x, i64 n) {
  T s = T(0);
  for (i64 i = 0; i < n; ++i) s += x[i] * x[i];
  return s;
}

}  // namespace mmd::kernels
