#pragma once

#include <cstddef>

#include "protoadapt/kernels.hpp"
#include "protoadapt/rng.hpp"
#include "protoadapt/tensor.hpp"

namespace protoadapt {

namespace detail {
template <typename T>
void check_matrix(const BasicTensor<T>& t, const char* what) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(what) + ": expected a matrix, got shape " +
                         shape_string(t.shape()));
  }
}
}  // namespace detail

/// a[m x k] * b[k x n], accumulated in double.
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::check_matrix(a, "matmul lhs");
  detail::check_matrix(b, "matmul rhs");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner dimensions differ (" + shape_string(a.shape()) +
                         " x " + shape_string(b.shape()) + ")");
  }
  BasicTensor<T> c({a.dim(0), b.dim(1)});
  kernels::parallel::matmul_nn<T>(a.data(), b.data(), c.data(), a.dim(0), a.dim(1), b.dim(1));
  return c;
}

/// a^T * b for a[m x k], b[m x n].
template <typename T>
BasicTensor<T> matmul_transposed_lhs(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::check_matrix(a, "matmul lhs");
  detail::check_matrix(b, "matmul rhs");
  if (a.dim(0) != b.dim(0)) throw DimensionError("matmul_transposed_lhs: row counts differ");
  BasicTensor<T> c({a.dim(1), b.dim(1)});
  kernels::parallel::matmul_tn<T>(a.data(), b.data(), c.data(), a.dim(0), a.dim(1), b.dim(1));
  return c;
}

/// a * b^T for a[m x k], b[n x k].
template <typename T>
BasicTensor<T> matmul_transposed_rhs(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::check_matrix(a, "matmul lhs");
  detail::check_matrix(b, "matmul rhs");
  if (a.dim(1) != b.dim(1)) throw DimensionError("matmul_transposed_rhs: column counts differ");
  BasicTensor<T> c({a.dim(0), b.dim(0)});
  kernels::parallel::matmul_nt<T>(a.data(), b.data(), c.data(), a.dim(0), a.dim(1), b.dim(0));
  return c;
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  detail::check_matrix(a, "transpose");
  BasicTensor<T> out({a.dim(1), a.dim(0)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < a.dim(1); ++j) out.at(j, i) = a.at(i, j);
  return out;
}

/// Lower-triangular factor together with the diagonal jitter actually used.
struct CholeskyResult {
  TensorD factor;
  double jitter = 0.0;
};

/// 1e-6 * trace(sigma) / d, falling back to 1e-6 when the trace vanishes.
double default_jitter(const TensorD& sigma);

/// Factor sigma + jitter*I. On failure the jitter is multiplied by 10 (or set
/// to default_jitter when it was zero) and the factorization retried, at most
/// three times. `class_index` only labels the error message.
CholeskyResult cholesky(const TensorD& sigma, double jitter, int class_index = -1);

/// Float convenience wrapper returning only the factor.
Tensor cholesky(const Tensor& sigma, float jitter);

/// Rows mu + chol * eps with eps ~ N(0, I) drawn by Box-Muller from `rng`.
Tensor sample_gaussian(std::span<const double> mu, const TensorD& chol, std::size_t n, Rng& rng);
Tensor sample_gaussian(const Tensor& mu, const Tensor& chol, std::size_t n, Rng& rng);

/// Uniform directions on S^{dim-1}: normalized Gaussian vectors.
Tensor sample_unit_sphere(std::size_t dim, std::size_t n, Rng& rng);

}  // namespace protoadapt
