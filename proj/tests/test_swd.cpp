#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "protoadapt/errors.hpp"
#include "protoadapt/linalg.hpp"
#include "protoadapt/swd.hpp"

using namespace protoadapt;

namespace {

Tensor random_points(std::size_t n, std::size_t d, Rng& rng, double scale = 1.0) {
  Tensor t({n, d});
  for (auto& v : t.data()) v = static_cast<float>(scale * rng.normal());
  return t;
}

// Minimum mean squared matching cost over every permutation.
double brute_force_matching(const std::vector<std::vector<double>>& x, const std::vector<std::vector<double>>& y) {
  const std::size_t m = x.size();
  std::vector<std::size_t> perm(m);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < x[i].size(); ++k) c += (x[i][k] - y[perm[i]][k]) * (x[i][k] - y[perm[i]][k]);
    best = std::min(best, c / static_cast<double>(m));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

std::vector<std::vector<double>> rows_of(const Tensor& t) {
  std::vector<std::vector<double>> out(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) out[r].assign(t.row(r).begin(), t.row(r).end());
  return out;
}

// Sorting permutation of every projection column, used to skip configurations
// where a finite-difference step would cross a tie.
std::vector<std::vector<std::size_t>> projection_orders(const Tensor& x, const Tensor& dirs) {
  const TensorD p = matmul_transposed_rhs(x.cast<double>(), dirs.cast<double>());
  std::vector<std::vector<std::size_t>> out(p.cols());
  for (std::size_t l = 0; l < p.cols(); ++l) {
    out[l].resize(p.rows());
    std::iota(out[l].begin(), out[l].end(), std::size_t{0});
    std::stable_sort(out[l].begin(), out[l].end(), [&](std::size_t a, std::size_t b) { return p.at(a, l) < p.at(b, l); });
  }
  return out;
}

}  // namespace

TEST(Wasserstein1d, MatchesExhaustiveAssignment) {
  Rng rng(101);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 1 + rng.below(8);
    std::vector<double> a(m), b(m);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = 2.0 * rng.normal() + 0.5;
    std::vector<std::vector<double>> xa, xb;
    for (double v : a) xa.push_back({v});
    for (double v : b) xb.push_back({v});
    EXPECT_NEAR(wasserstein1d_sq(a, b), brute_force_matching(xa, xb), 1e-9);
  }
}

TEST(Wasserstein1d, HandCasesAndErrors) {
  const std::vector<double> a{0.0, 1.0}, b{3.0, 1.0};
  EXPECT_DOUBLE_EQ(wasserstein1d_sq(a, b), (1.0 + 4.0) / 2.0);
  EXPECT_DOUBLE_EQ(wasserstein1d_sq(a, a), 0.0);
  EXPECT_THROW(wasserstein1d_sq(a, std::vector<double>{1.0}), DimensionError);
}

TEST(ExactMatching, MatchesFactorialEnumeration) {
  Rng rng(7);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t m = 1 + rng.below(7), d = 1 + rng.below(4);
    const Tensor x = random_points(m, d, rng), y = random_points(m, d, rng, 2.0);
    EXPECT_NEAR(exact_wasserstein_sq_small(x, y), brute_force_matching(rows_of(x), rows_of(y)), 1e-9);
  }
}

TEST(ExactMatching, AssignmentIsOptimalPermutation) {
  Rng rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 1 + rng.below(7);
    TensorD cost({n, n});
    for (auto& c : cost.data()) c = rng.uniform() * 10.0;
    const auto a = solve_assignment(cost);
    std::vector<std::size_t> sorted = a;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(sorted[i], i);
    double got = 0.0;
    for (std::size_t i = 0; i < n; ++i) got += cost.at(i, a[i]);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    double best = std::numeric_limits<double>::infinity();
    do {
      double c = 0.0;
      for (std::size_t i = 0; i < n; ++i) c += cost.at(i, perm[i]);
      best = std::min(best, c);
    } while (std::next_permutation(perm.begin(), perm.end()));
    EXPECT_NEAR(got, best, 1e-9);
  }
}

TEST(ExactMatching, RejectsLargeOrMismatched) {
  Rng rng(1);
  EXPECT_THROW(exact_wasserstein_sq_small(random_points(65, 2, rng), random_points(65, 2, rng)), ValueError);
  EXPECT_THROW(exact_wasserstein_sq_small(random_points(3, 2, rng), random_points(4, 2, rng)), DimensionError);
}

TEST(Sliced, TranslationGivesSquaredNormOverDimension) {
  // Every projection of a translated copy costs (theta . t)^2 exactly; its
  // mean over the sphere is |t|^2 / d.
  Rng rng(21);
  const std::size_t d = 3, n = 40, l = 20000;
  const Tensor x = random_points(n, d, rng);
  const std::vector<float> t{1.0f, -2.0f, 0.5f};
  Tensor y = x;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t k = 0; k < d; ++k) y.at(r, k) += t[k];
  const Tensor dirs = sample_unit_sphere(d, l, rng);
  const auto costs = sliced_projection_costs(x, y, dirs);
  double mean = 0.0, var = 0.0;
  for (double c : costs) mean += c;
  mean /= static_cast<double>(l);
  for (double c : costs) var += (c - mean) * (c - mean);
  var /= static_cast<double>(l - 1);
  const double t2 = 1.0 + 4.0 + 0.25;
  EXPECT_NEAR(mean, t2 / d, 5.0 * std::sqrt(var / l));
  EXPECT_NEAR(sliced_wasserstein_sq(x, y, dirs), mean, 1e-9);
  for (std::size_t i = 0; i < 50; ++i) {
    double dot = 0.0;
    for (std::size_t k = 0; k < d; ++k) dot += static_cast<double>(dirs.at(i, k)) * t[k];
    EXPECT_NEAR(costs[i], dot * dot, 1e-5);
  }
}

TEST(Sliced, TwoDimensionalMatchesAngularQuadrature) {
  Rng rng(33);
  const std::size_t n = 30, l = 20000, angles = 3600;
  const Tensor x = random_points(n, 2, rng);
  Tensor y = random_points(n, 2, rng, 1.5);
  for (std::size_t r = 0; r < n; ++r) y.at(r, 0) += 1.0f;

  // Midpoint rule over theta in [0, 2 pi).
  double quad = 0.0;
  for (std::size_t a = 0; a < angles; ++a) {
    const double theta = 2.0 * std::numbers::pi * (static_cast<double>(a) + 0.5) / angles;
    std::vector<double> px(n), py(n);
    for (std::size_t r = 0; r < n; ++r) {
      px[r] = std::cos(theta) * x.at(r, 0) + std::sin(theta) * x.at(r, 1);
      py[r] = std::cos(theta) * y.at(r, 0) + std::sin(theta) * y.at(r, 1);
    }
    quad += wasserstein1d_sq(px, py);
  }
  quad /= static_cast<double>(angles);

  const Tensor dirs = sample_unit_sphere(2, l, rng);
  const auto costs = sliced_projection_costs(x, y, dirs);
  double mean = 0.0, var = 0.0;
  for (double c : costs) mean += c;
  mean /= static_cast<double>(l);
  for (double c : costs) var += (c - mean) * (c - mean);
  var /= static_cast<double>(l - 1);
  EXPECT_NEAR(mean, quad, 5.0 * std::sqrt(var / l));
}

TEST(Sliced, BasicProperties) {
  Rng rng(4);
  const Tensor x = random_points(25, 4, rng), y = random_points(25, 4, rng);
  const Tensor dirs = sample_unit_sphere(4, 50, rng);
  EXPECT_NEAR(sliced_wasserstein_sq(x, x, dirs), 0.0, 1e-12);
  EXPECT_NEAR(sliced_wasserstein_sq(x, y, dirs), sliced_wasserstein_sq(y, x, dirs), 1e-12);
  EXPECT_GE(sliced_wasserstein_sq(x, y, dirs), 0.0);
  EXPECT_THROW(sliced_wasserstein_sq(x, random_points(3, 5, rng), dirs), DimensionError);
  SlicedConfig none{0, 0, Equalization::Subsample};
  EXPECT_THROW(sliced_wasserstein_sq(x, y, none), ValueError);
}

TEST(Sliced, SeededRunsRepeat) {
  Rng rng(4);
  const Tensor x = random_points(40, 3, rng), y = random_points(30, 3, rng);
  SlicedConfig cfg{64, 123, Equalization::Subsample};
  EXPECT_EQ(sliced_wasserstein_sq(x, y, cfg), sliced_wasserstein_sq(x, y, cfg));
  Rng r1(5), r2(5);
  const SlicedResult a = sliced_wasserstein_grad(x, y, cfg, r1);
  const SlicedResult b = sliced_wasserstein_grad(x, y, cfg, r2);
  EXPECT_EQ(a.value, b.value);
  EXPECT_TRUE(a.grad == b.grad);
}

TEST(Sliced, SubsampleTouchesOnlyChosenRows) {
  Rng rng(6);
  const Tensor x = random_points(50, 3, rng), y = random_points(20, 3, rng);
  Rng r(1);
  const SlicedResult res = sliced_wasserstein_grad(x, y, SlicedConfig{32, 0, Equalization::Subsample}, r);
  std::size_t nonzero_rows = 0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    bool any = false;
    for (float v : res.grad.row(i)) any = any || v != 0.0f;
    nonzero_rows += any ? 1 : 0;
  }
  EXPECT_EQ(nonzero_rows, 20u);
}

TEST(Sliced, QuantileInterpolationOnDuplicatedTarget) {
  // y holds every point of x twice; the interpolated quantiles of y
  // reproduce x's projections up to the half-step blend between twins.
  Rng rng(9);
  const Tensor x = random_points(10, 2, rng);
  Tensor y({20, 2});
  for (std::size_t r = 0; r < 10; ++r)
    for (std::size_t k = 0; k < 2; ++k) y.at(2 * r, k) = y.at(2 * r + 1, k) = x.at(r, k);
  const Tensor dirs = sample_unit_sphere(2, 16, rng);
  EXPECT_NEAR(sliced_wasserstein_sq(x, y, dirs), 0.0, 1e-10);
}

// Frozen projections make the sliced cost piecewise quadratic in x, so
// central differences are exact away from ties.
TEST(Sliced, GradientMatchesCentralDifferences) {
  Rng rng(55);
  int checked = 0;
  for (int config = 0; config < 100; ++config) {
    const std::size_t m = 2 + rng.below(10), d = 1 + rng.below(5), l = 1 + rng.below(20);
    const std::size_t n = config % 3 == 0 ? m + 1 + rng.below(5) : m;
    const Tensor x = random_points(m, d, rng), y = random_points(n, d, rng, 1.5);
    const Tensor dirs = sample_unit_sphere(d, l, rng);
    const SlicedResult res = sliced_wasserstein_grad(x, y, dirs);
    EXPECT_NEAR(res.value, sliced_wasserstein_sq(x, y, dirs), 1e-12);
    const auto base = projection_orders(x, dirs);
    const float h = 1e-2f;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t k = 0; k < d; ++k) {
        Tensor up = x, down = x;
        up.at(i, k) += h;
        down.at(i, k) -= h;
        if (projection_orders(up, dirs) != base || projection_orders(down, dirs) != base) continue;
        const double step = static_cast<double>(up.at(i, k)) - static_cast<double>(down.at(i, k));
        const double fd = (sliced_wasserstein_sq(up, y, dirs) - sliced_wasserstein_sq(down, y, dirs)) / step;
        const double an = res.grad.at(i, k);
        // Gradients are returned in single precision.
        EXPECT_LE(std::abs(an - fd), 1e-3 * (std::abs(an) + 1e-8) + 1e-6)
            << "config " << config << " row " << i << " dim " << k;
        ++checked;
      }
    }
  }
  EXPECT_GT(checked, 500);
}
