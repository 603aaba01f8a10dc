#include "protoadapt/swd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "protoadapt/linalg.hpp"

namespace protoadapt {

namespace {

void check_pair(const Tensor& x, const Tensor& y) {
  require_rank(x, 2, "sliced distance x");
  require_rank(y, 2, "sliced distance y");
  if (x.dim(1) != y.dim(1)) {
    throw DimensionError("sliced distance: dimension mismatch (" + std::to_string(x.dim(1)) +
                         " vs " + std::to_string(y.dim(1)) + ")");
  }
  if (x.dim(0) == 0 || y.dim(0) == 0) throw ValueError("sliced distance: empty sample set");
}

// Stable order of one column of a row-major [n x L] projection matrix.
void sort_column(const TensorD& proj, std::size_t col, std::vector<std::size_t>& order) {
  const std::size_t n = proj.dim(0);
  const std::size_t stride = proj.dim(1);
  const double* p = proj.data().data();
  order.resize(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return p[a * stride + col] < p[b * stride + col];
  });
}

// Value of the sorted, equalized 1-D target at rank i of m.
double matched_value(const std::vector<double>& ys_sorted, std::size_t i, std::size_t m) {
  const std::size_t n = ys_sorted.size();
  if (n == m) return ys_sorted[i];
  double pos = (static_cast<double>(i) + 0.5) * static_cast<double>(n) / static_cast<double>(m) - 0.5;
  pos = std::clamp(pos, 0.0, static_cast<double>(n - 1));
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, n - 1);
  const double frac = pos - static_cast<double>(lo);
  return ys_sorted[lo] * (1.0 - frac) + ys_sorted[hi] * frac;
}

struct FrozenEval {
  std::vector<double> costs;  // one per projection
  TensorD coef;               // [m x L] d value / d <gamma_l, x_i>
  TensorD directions;
};

FrozenEval evaluate_frozen(const Tensor& x, const Tensor& y, const Tensor& directions, bool want_grad) {
  check_pair(x, y);
  require_rank(directions, 2, "sliced directions");
  if (directions.dim(1) != x.dim(1)) throw DimensionError("sliced directions: dimension mismatch");
  const std::size_t m = x.dim(0);
  const std::size_t n = y.dim(0);
  const std::size_t num_proj = directions.dim(0);
  FrozenEval out;
  out.directions = directions.cast<double>();
  const TensorD px = matmul_transposed_rhs(x.cast<double>(), out.directions);  // [m x L]
  const TensorD py = matmul_transposed_rhs(y.cast<double>(), out.directions);  // [n x L]
  out.costs.assign(num_proj, 0.0);
  if (want_grad) out.coef = TensorD({m, num_proj});
  const double inv_m = 1.0 / static_cast<double>(m);
  const double inv_l = 1.0 / static_cast<double>(num_proj);

#pragma omp parallel
  {
    std::vector<std::size_t> ox, oy;
    std::vector<double> ys;
#pragma omp for schedule(static)
    for (std::ptrdiff_t li = 0; li < static_cast<std::ptrdiff_t>(num_proj); ++li) {
      const auto l = static_cast<std::size_t>(li);
      sort_column(px, l, ox);
      sort_column(py, l, oy);
      ys.resize(n);
      for (std::size_t j = 0; j < n; ++j) ys[j] = py.at(oy[j], l);
      double cost = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const double diff = px.at(ox[i], l) - matched_value(ys, i, m);
        cost += diff * diff;
        if (want_grad) out.coef.at(ox[i], l) = 2.0 * diff * inv_m * inv_l;
      }
      out.costs[l] = cost * inv_m;
    }
  }
  return out;
}

double mean_cost(const std::vector<double>& costs) {
  double s = 0.0;
  for (double c : costs) s += c;
  return s / static_cast<double>(costs.size());
}

// Indices of k distinct rows out of n, partial Fisher-Yates, sorted ascending.
std::vector<std::size_t> choose_rows(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& rows) {
  const std::size_t c = t.cols();
  Tensor out({rows.size(), c});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto src = t.row(rows[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

// Applies cfg.equalization, returning the row subsets to compare. An empty
// index list means "all rows".
struct Equalized {
  std::vector<std::size_t> x_rows;
  std::vector<std::size_t> y_rows;
};

Equalized equalize(const Tensor& x, const Tensor& y, const SlicedConfig& cfg, Rng& rng) {
  Equalized e;
  const std::size_t m = x.dim(0), n = y.dim(0);
  if (m == n || cfg.equalization == Equalization::QuantileInterp) return e;
  if (m > n) e.x_rows = choose_rows(m, n, rng);
  else e.y_rows = choose_rows(n, m, rng);
  return e;
}

}  // namespace

double wasserstein1d_sq(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("wasserstein1d_sq: length mismatch");
  if (a.empty()) throw ValueError("wasserstein1d_sq: empty input");
  std::vector<double> as(a.begin(), a.end()), bs(b.begin(), b.end());
  std::sort(as.begin(), as.end());
  std::sort(bs.begin(), bs.end());
  double s = 0.0;
  for (std::size_t i = 0; i < as.size(); ++i) s += (as[i] - bs[i]) * (as[i] - bs[i]);
  return s / static_cast<double>(as.size());
}

double wasserstein1d_sq(std::span<const float> a, std::span<const float> b) {
  std::vector<double> ad(a.begin(), a.end()), bd(b.begin(), b.end());
  return wasserstein1d_sq(ad, bd);
}

double sliced_wasserstein_sq(const Tensor& x, const Tensor& y, const Tensor& directions) {
  return mean_cost(evaluate_frozen(x, y, directions, false).costs);
}

std::vector<double> sliced_projection_costs(const Tensor& x, const Tensor& y, const Tensor& directions) {
  return evaluate_frozen(x, y, directions, false).costs;
}

SlicedResult sliced_wasserstein_grad(const Tensor& x, const Tensor& y, const Tensor& directions) {
  FrozenEval ev = evaluate_frozen(x, y, directions, true);
  return {mean_cost(ev.costs), matmul(ev.coef, ev.directions).cast<float>()};
}

double sliced_wasserstein_sq(const Tensor& x, const Tensor& y, const SlicedConfig& cfg, Rng& rng) {
  check_pair(x, y);
  if (cfg.num_projections == 0) throw ValueError("sliced distance needs at least one projection");
  const Tensor dirs = sample_unit_sphere(x.dim(1), cfg.num_projections, rng);
  const Equalized e = equalize(x, y, cfg, rng);
  const Tensor xs = e.x_rows.empty() ? x : gather_rows(x, e.x_rows);
  const Tensor ys = e.y_rows.empty() ? y : gather_rows(y, e.y_rows);
  return sliced_wasserstein_sq(xs, ys, dirs);
}

double sliced_wasserstein_sq(const Tensor& x, const Tensor& y, const SlicedConfig& cfg) {
  Rng rng(cfg.rng_seed);
  return sliced_wasserstein_sq(x, y, cfg, rng);
}

SlicedResult sliced_wasserstein_grad(const Tensor& x, const Tensor& y, const SlicedConfig& cfg, Rng& rng) {
  check_pair(x, y);
  if (cfg.num_projections == 0) throw ValueError("sliced distance needs at least one projection");
  const Tensor dirs = sample_unit_sphere(x.dim(1), cfg.num_projections, rng);
  const Equalized e = equalize(x, y, cfg, rng);
  if (e.x_rows.empty()) {
    const Tensor ys = e.y_rows.empty() ? y : gather_rows(y, e.y_rows);
    return sliced_wasserstein_grad(x, ys, dirs);
  }
  SlicedResult sub = sliced_wasserstein_grad(gather_rows(x, e.x_rows), y, dirs);
  SlicedResult out{sub.value, Tensor(x.shape())};
  for (std::size_t r = 0; r < e.x_rows.size(); ++r) {
    auto src = sub.grad.row(r);
    std::copy(src.begin(), src.end(), out.grad.row(e.x_rows[r]).begin());
  }
  return out;
}

std::vector<std::size_t> solve_assignment(const TensorD& cost) {
  require_rank(cost, 2, "solve_assignment");
  const std::size_t n = cost.dim(0);
  if (cost.dim(1) != n) throw DimensionError("solve_assignment: cost matrix must be square");
  // Potentials-based Hungarian method with 1-based sentinel column 0.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost.at(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> assignment(n);
  for (std::size_t j = 1; j <= n; ++j) assignment[p[j] - 1] = j - 1;
  return assignment;
}

double exact_wasserstein_sq_small(const Tensor& x, const Tensor& y) {
  check_pair(x, y);
  const std::size_t m = x.dim(0);
  if (y.dim(0) != m) throw DimensionError("exact_wasserstein_sq_small: sample counts differ");
  if (m > 64) throw ValueError("exact_wasserstein_sq_small: at most 64 points per set");
  const std::size_t d = x.dim(1);
  TensorD cost({m, m});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = static_cast<double>(x.at(i, k)) - static_cast<double>(y.at(j, k));
        s += diff * diff;
      }
      cost.at(i, j) = s;
    }
  }
  const auto assignment = solve_assignment(cost);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) total += cost.at(i, assignment[i]);
  return total / static_cast<double>(m);
}

}  // namespace protoadapt
