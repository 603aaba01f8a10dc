#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "protoadapt/model.hpp"
#include "protoadapt/rng.hpp"
#include "protoadapt/tensor.hpp"

namespace protoadapt {

/// Per-class row indices into a flattened [n x d] embedding array.
struct SupportSets {
  std::vector<std::vector<std::size_t>> members;

  std::size_t num_classes() const { return members.size(); }
  std::size_t count(std::size_t j) const { return members.at(j).size(); }
  std::size_t total() const;
};

/// Pixel i joins S_j iff labels[i] == j, argmax(probs[i]) == j and
/// probs[i][j] > tau.
SupportSets build_support_sets(const Tensor& embeddings, std::span<const int> labels,
                               const Tensor& probs, double tau);

/// Class-conditional Gaussian mixture in the embedding space.
///
/// Parameters are kept in double; the GMM1 file stores them as float32.
/// `sigma` already includes the diagonal jitter recorded in `jitter`.
struct PrototypicalGMM {
  std::size_t num_classes = 0;
  std::size_t dim = 0;
  std::vector<double> alpha;
  TensorD mu;     // [K x d]
  TensorD sigma;  // [K x d x d]
  TensorD chol;   // [K x d x d], lower triangular
  std::vector<double> jitter;
  float tau_fit = 0.0f;

  std::span<const double> mean(std::size_t j) const { return mu.row(j); }
  TensorD covariance(std::size_t j) const;
  TensorD cholesky_factor(std::size_t j) const;

  /// Weights sum to one, covariances symmetric, factors finite.
  void validate() const;
};

struct GmmOptions {
  bool unbiased = false;  // 1/(|S_j|-1) instead of 1/|S_j|
};

/// Closed-form per-class estimates: alpha_j = |S_j| / sum |S|, mu_j the
/// support mean and Sigma_j the support covariance plus jitter. Every class
/// needs more than d members; otherwise an EstimationError names the class.
PrototypicalGMM estimate_gmm(const Tensor& embeddings, const SupportSets& support, double tau_fit,
                             const GmmOptions& opts = {});

/// log sum_j alpha_j N(z | mu_j, Sigma_j), combined with log-sum-exp.
double gmm_log_density(const PrototypicalGMM& gmm, std::span<const float> z);

struct PseudoDataset {
  Tensor z;                // [N_p x d]
  std::vector<int> labels;  // classifier argmax of each retained draw
  std::vector<int> components;  // mixture component each retained draw came from
  double kept_fraction = 0.0;
  std::size_t drawn = 0;
  std::vector<std::size_t> class_counts;

  std::size_t size() const { return labels.size(); }
};

/// Rejection sampler: draw a component from alpha, a point from it, and keep
/// the point under the classifier's argmax label when its top softmax
/// probability exceeds tau. Stops at n_target kept points or after
/// max_draw_factor * n_target draws; fewer than n_target / 2 kept points at
/// the cap is a GenerationError.
PseudoDataset generate_pseudo_dataset(const PrototypicalGMM& gmm, const SegModel& classifier,
                                      std::size_t n_target, double tau, Rng& rng,
                                      std::size_t max_draw_factor = 20);

void save_gmm(const std::filesystem::path& path, const PrototypicalGMM& gmm);
PrototypicalGMM load_gmm(const std::filesystem::path& path);

}  // namespace protoadapt
