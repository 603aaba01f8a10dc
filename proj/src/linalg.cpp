#include "protoadapt/linalg.hpp"

#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace protoadapt {

namespace kernels {

void set_num_threads(int threads) {
#ifdef _OPENMP
  omp_set_num_threads(threads < 1 ? 1 : threads);
#else
  (void)threads;
#endif
}

int num_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace kernels

namespace {

bool try_factor(const TensorD& sigma, double jitter, TensorD& out) {
  const std::size_t d = sigma.dim(0);
  out = TensorD({d, d});
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = sigma.at(i, j) + (i == j ? jitter : 0.0);
      for (std::size_t p = 0; p < j; ++p) s -= out.at(i, p) * out.at(j, p);
      if (i == j) {
        if (!(s > 0.0) || !std::isfinite(s)) return false;
        out.at(i, i) = std::sqrt(s);
      } else {
        out.at(i, j) = s / out.at(j, j);
      }
    }
  }
  return true;
}

}  // namespace

double default_jitter(const TensorD& sigma) {
  const std::size_t d = sigma.dim(0);
  double trace = 0.0;
  for (std::size_t i = 0; i < d; ++i) trace += sigma.at(i, i);
  const double j = 1e-6 * trace / static_cast<double>(d);
  return j > 0.0 && std::isfinite(j) ? j : 1e-6;
}

CholeskyResult cholesky(const TensorD& sigma, double jitter, int class_index) {
  detail::check_matrix(sigma, "cholesky");
  const std::size_t d = sigma.dim(0);
  if (sigma.dim(1) != d) throw DimensionError("cholesky: matrix is not square");
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (std::abs(sigma.at(i, j) - sigma.at(j, i)) > 1e-5) {
        throw ValueError("cholesky: matrix is not symmetric");
      }
    }
  }
  CholeskyResult result;
  result.jitter = jitter;
  constexpr int kRetries = 3;
  for (int attempt = 0; attempt <= kRetries; ++attempt) {
    if (try_factor(sigma, result.jitter, result.factor)) return result;
    result.jitter = result.jitter > 0.0 ? result.jitter * 10.0 : default_jitter(sigma);
  }
  std::string who = class_index >= 0 ? " for class " + std::to_string(class_index) : "";
  throw FactorizationError("covariance" + who + " is not positive definite after " +
                               std::to_string(kRetries) + " jitter retries",
                           class_index);
}

Tensor cholesky(const Tensor& sigma, float jitter) {
  return cholesky(sigma.cast<double>(), static_cast<double>(jitter)).factor.cast<float>();
}

Tensor sample_gaussian(std::span<const double> mu, const TensorD& chol, std::size_t n, Rng& rng) {
  const std::size_t d = mu.size();
  if (chol.rank() != 2 || chol.dim(0) != d || chol.dim(1) != d) {
    throw DimensionError("sample_gaussian: cholesky factor must be " + std::to_string(d) + "x" +
                         std::to_string(d));
  }
  if (n == 0) throw ValueError("sample_gaussian: n must be at least 1");
  Tensor out({n, d});
  std::vector<double> eps(d);
  for (std::size_t r = 0; r < n; ++r) {
    for (auto& e : eps) e = rng.normal();
    for (std::size_t i = 0; i < d; ++i) {
      double s = mu[i];
      for (std::size_t j = 0; j <= i; ++j) s += chol.at(i, j) * eps[j];
      out.at(r, i) = static_cast<float>(s);
    }
  }
  return out;
}

Tensor sample_gaussian(const Tensor& mu, const Tensor& chol, std::size_t n, Rng& rng) {
  std::vector<double> m(mu.data().begin(), mu.data().end());
  return sample_gaussian(m, chol.cast<double>(), n, rng);
}

Tensor sample_unit_sphere(std::size_t dim, std::size_t n, Rng& rng) {
  if (dim == 0) throw ValueError("sample_unit_sphere: dim must be at least 1");
  Tensor out({n, dim});
  std::vector<double> g(dim);
  for (std::size_t r = 0; r < n; ++r) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (auto& v : g) {
        v = rng.normal();
        norm += v * v;
      }
      norm = std::sqrt(norm);
    } while (!(norm > 1e-12));
    for (std::size_t i = 0; i < dim; ++i) out.at(r, i) = static_cast<float>(g[i] / norm);
  }
  return out;
}

}  // namespace protoadapt
