#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "protoadapt/rng.hpp"
#include "protoadapt/tensor.hpp"

namespace protoadapt {

/// How two sample sets of different size are brought to a common count.
enum class Equalization {
  Subsample,       // draw the larger set down to the smaller count, without replacement
  QuantileInterp,  // compare sorted x against linearly interpolated quantiles of y
};

struct SlicedConfig {
  std::size_t num_projections = 100;
  std::uint64_t rng_seed = 0;
  Equalization equalization = Equalization::Subsample;
};

/// Squared 1-D transport cost between equal-size samples:
/// mean over i of (sort(a)[i] - sort(b)[i])^2. Inputs are not modified.
double wasserstein1d_sq(std::span<const double> a, std::span<const double> b);
double wasserstein1d_sq(std::span<const float> a, std::span<const float> b);

struct SlicedResult {
  double value = 0.0;
  Tensor grad;  // d value / d x, same shape as x
};

/// Squared sliced distance, averaged over projections and matched pairs.
/// Directions are drawn from `rng`; unequal counts follow cfg.equalization.
double sliced_wasserstein_sq(const Tensor& x, const Tensor& y, const SlicedConfig& cfg, Rng& rng);

/// Same, with a fresh Rng seeded from cfg.rng_seed.
double sliced_wasserstein_sq(const Tensor& x, const Tensor& y, const SlicedConfig& cfg);

/// Frozen-projection form; `directions` is [L x d] with unit rows. Unequal
/// counts use quantile interpolation.
double sliced_wasserstein_sq(const Tensor& x, const Tensor& y, const Tensor& directions);

/// Value and gradient with respect to x (y is held fixed). The sorting
/// permutation is treated as locally constant; ties sort by original index.
SlicedResult sliced_wasserstein_grad(const Tensor& x, const Tensor& y, const SlicedConfig& cfg,
                                     Rng& rng);
SlicedResult sliced_wasserstein_grad(const Tensor& x, const Tensor& y, const Tensor& directions);

/// The squared 1-D cost of every individual projection, in direction order.
std::vector<double> sliced_projection_costs(const Tensor& x, const Tensor& y,
                                            const Tensor& directions);

/// Minimum-cost perfect matching under squared Euclidean cost, divided by m.
/// Solved exactly with the Hungarian method; m must not exceed 64.
double exact_wasserstein_sq_small(const Tensor& x, const Tensor& y);

/// Optimal assignment for a square cost matrix (row -> column), O(n^3).
std::vector<std::size_t> solve_assignment(const TensorD& cost);

}  // namespace protoadapt
