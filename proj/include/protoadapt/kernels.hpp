#pragma once

// Dense product kernels. `serial::` is the reference implementation; the
// `parallel::` versions split work over output rows only, so every output
// element is accumulated in the same order as the serial kernel and results
// are bitwise identical for any thread count.

#include <cstddef>
#include <span>
#include <vector>

namespace protoadapt::kernels {

void set_num_threads(int threads);
int num_threads();

namespace detail {

// C[m x n] = A[m x k] * B[k x n], one output row.
template <typename T>
inline void nn_row(std::span<const T> a, std::span<const T> b, std::span<T> c,
                   std::size_t k, std::size_t n, std::size_t i, std::vector<double>& acc) {
  acc.assign(n, 0.0);
  const T* arow = a.data() + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const double av = static_cast<double>(arow[p]);
    if (av == 0.0) continue;
    const T* brow = b.data() + p * n;
    for (std::size_t j = 0; j < n; ++j) acc[j] += av * static_cast<double>(brow[j]);
  }
  T* crow = c.data() + i * n;
  for (std::size_t j = 0; j < n; ++j) crow[j] = static_cast<T>(acc[j]);
}

// C[k x n] = A[m x k]^T * B[m x n], output row p.
template <typename T>
inline void tn_row(std::span<const T> a, std::span<const T> b, std::span<T> c,
                   std::size_t m, std::size_t k, std::size_t n, std::size_t p,
                   std::vector<double>& acc) {
  acc.assign(n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double av = static_cast<double>(a[i * k + p]);
    if (av == 0.0) continue;
    const T* brow = b.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) acc[j] += av * static_cast<double>(brow[j]);
  }
  T* crow = c.data() + p * n;
  for (std::size_t j = 0; j < n; ++j) crow[j] = static_cast<T>(acc[j]);
}

// C[m x n] = A[m x k] * B[n x k]^T, output row i.
template <typename T>
inline void nt_row(std::span<const T> a, std::span<const T> b, std::span<T> c,
                   std::size_t k, std::size_t n, std::size_t i) {
  const T* arow = a.data() + i * k;
  T* crow = c.data() + i * n;
  for (std::size_t j = 0; j < n; ++j) {
    const T* brow = b.data() + j * k;
    double s = 0.0;
    for (std::size_t p = 0; p < k; ++p) s += static_cast<double>(arow[p]) * static_cast<double>(brow[p]);
    crow[j] = static_cast<T>(s);
  }
}

}  // namespace detail

namespace serial {

template <typename T>
void matmul_nn(std::span<const T> a, std::span<const T> b, std::span<T> c,
               std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> acc;
  for (std::size_t i = 0; i < m; ++i) detail::nn_row(a, b, c, k, n, i, acc);
}

template <typename T>
void matmul_tn(std::span<const T> a, std::span<const T> b, std::span<T> c,
               std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> acc;
  for (std::size_t p = 0; p < k; ++p) detail::tn_row(a, b, c, m, k, n, p, acc);
}

template <typename T>
void matmul_nt(std::span<const T> a, std::span<const T> b, std::span<T> c,
               std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) detail::nt_row(a, b, c, k, n, i);
}

}  // namespace serial

namespace parallel {

template <typename T>
void matmul_nn(std::span<const T> a, std::span<const T> b, std::span<T> c,
               std::size_t m, std::size_t k, std::size_t n) {
#pragma omp parallel
  {
    std::vector<double> acc;
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
      detail::nn_row(a, b, c, k, n, static_cast<std::size_t>(i), acc);
    }
  }
}

template <typename T>
void matmul_tn(std::span<const T> a, std::span<const T> b, std::span<T> c,
               std::size_t m, std::size_t k, std::size_t n) {
#pragma omp parallel
  {
    std::vector<double> acc;
#pragma omp for schedule(static)
    for (std::ptrdiff_t p = 0; p < static_cast<std::ptrdiff_t>(k); ++p) {
      detail::tn_row(a, b, c, m, k, n, static_cast<std::size_t>(p), acc);
    }
  }
}

template <typename T>
void matmul_nt(std::span<const T> a, std::span<const T> b, std::span<T> c,
               std::size_t m, std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
    detail::nt_row(a, b, c, k, n, static_cast<std::size_t>(i));
  }
}

}  // namespace parallel

}  // namespace protoadapt::kernels
