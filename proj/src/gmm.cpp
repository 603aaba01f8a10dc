#include "protoadapt/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "protoadapt/linalg.hpp"
#include "protoadapt/tensor_io.hpp"

namespace protoadapt {

namespace {

constexpr std::array<char, 4> kGmmMagic{'G', 'M', 'M', '1'};

TensorD block(const TensorD& stack, std::size_t j, std::size_t d) {
  TensorD out({d, d});
  std::copy_n(stack.data().begin() + static_cast<std::ptrdiff_t>(j * d * d), d * d, out.data().begin());
  return out;
}

void put_block(TensorD& stack, std::size_t j, const TensorD& m) {
  const std::size_t dd = m.size();
  std::copy(m.data().begin(), m.data().end(), stack.data().begin() + static_cast<std::ptrdiff_t>(j * dd));
}

}  // namespace

std::size_t SupportSets::total() const {
  std::size_t t = 0;
  for (const auto& m : members) t += m.size();
  return t;
}

SupportSets build_support_sets(const Tensor& embeddings, std::span<const int> labels,
                               const Tensor& probs, double tau) {
  if (!(tau >= 0.0 && tau < 1.0)) throw ValueError("support threshold must lie in [0, 1)");
  require_rank(probs, 2, "build_support_sets probs");
  const std::size_t n = probs.dim(0);
  const std::size_t k = probs.dim(1);
  if (labels.size() != n || embeddings.rows() != n) {
    throw DimensionError("build_support_sets: embeddings, labels and probs disagree on pixel count");
  }
  SupportSets s;
  s.members.resize(k);
  for (std::size_t i = 0; i < n; ++i) {
    auto p = probs.row(i);
    const auto pred = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= k) throw ValueError("label index out of range");
    if (static_cast<std::size_t>(y) == pred && static_cast<double>(p[pred]) > tau) {
      s.members[pred].push_back(i);
    }
  }
  return s;
}

TensorD PrototypicalGMM::covariance(std::size_t j) const { return block(sigma, j, dim); }
TensorD PrototypicalGMM::cholesky_factor(std::size_t j) const { return block(chol, j, dim); }

void PrototypicalGMM::validate() const {
  if (alpha.size() != num_classes || mu.shape() != Shape{num_classes, dim} ||
      sigma.shape() != Shape{num_classes, dim, dim} || chol.shape() != sigma.shape()) {
    throw DimensionError("prototype mixture: inconsistent parameter shapes");
  }
  double total = 0.0;
  for (double a : alpha) {
    if (!(a >= 0.0)) throw ValueError("prototype mixture: negative weight");
    total += a;
  }
  if (std::abs(total - 1.0) > 1e-6) throw ValueError("prototype mixture: weights do not sum to 1");
  for (std::size_t j = 0; j < num_classes; ++j) {
    const TensorD s = covariance(j);
    for (std::size_t a = 0; a < dim; ++a)
      for (std::size_t b = 0; b < a; ++b)
        if (std::abs(s.at(a, b) - s.at(b, a)) > 1e-5) throw ValueError("prototype mixture: asymmetric covariance");
  }
  if (!mu.all_finite() || !sigma.all_finite() || !chol.all_finite()) {
    throw ValueError("prototype mixture: non-finite parameter");
  }
}

PrototypicalGMM estimate_gmm(const Tensor& embeddings, const SupportSets& support, double tau_fit,
                             const GmmOptions& opts) {
  require_rank(embeddings, 2, "estimate_gmm embeddings");
  const std::size_t d = embeddings.dim(1);
  const std::size_t k = support.num_classes();
  if (k == 0) throw ValueError("estimate_gmm: no classes");

  PrototypicalGMM g;
  g.num_classes = k;
  g.dim = d;
  g.tau_fit = static_cast<float>(tau_fit);
  g.mu = TensorD({k, d});
  g.sigma = TensorD({k, d, d});
  g.chol = TensorD({k, d, d});
  g.jitter.assign(k, 0.0);

  const double total = static_cast<double>(support.total());
  for (std::size_t j = 0; j < k; ++j) {
    const auto& rows = support.members[j];
    if (rows.size() <= d) {
      throw EstimationError("class " + std::to_string(j) + " has only " + std::to_string(rows.size()) +
                                " confident pixels; need more than " + std::to_string(d) +
                                " (lower the threshold)",
                            static_cast<int>(j), rows.size());
    }
    const double count = static_cast<double>(rows.size());
    g.alpha.push_back(count / total);

    auto mean = g.mu.row(j);
    for (auto r : rows) {
      auto e = embeddings.row(r);
      for (std::size_t a = 0; a < d; ++a) mean[a] += static_cast<double>(e[a]);
    }
    for (auto& v : mean) v /= count;

    TensorD cov({d, d});
    std::vector<double> centered(d);
    for (auto r : rows) {
      auto e = embeddings.row(r);
      for (std::size_t a = 0; a < d; ++a) centered[a] = static_cast<double>(e[a]) - mean[a];
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b <= a; ++b) cov.at(a, b) += centered[a] * centered[b];
    }
    const double norm = opts.unbiased ? count - 1.0 : count;
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b <= a; ++b) {
        cov.at(a, b) /= norm;
        cov.at(b, a) = cov.at(a, b);
      }
    }
    const CholeskyResult f = cholesky(cov, default_jitter(cov), static_cast<int>(j));
    for (std::size_t a = 0; a < d; ++a) cov.at(a, a) += f.jitter;
    g.jitter[j] = f.jitter;
    put_block(g.sigma, j, cov);
    put_block(g.chol, j, f.factor);
  }
  return g;
}

double gmm_log_density(const PrototypicalGMM& gmm, std::span<const float> z) {
  const std::size_t d = gmm.dim;
  if (z.size() != d) throw DimensionError("gmm_log_density: point dimension mismatch");
  std::vector<double> terms;
  std::vector<double> w(d);
  for (std::size_t j = 0; j < gmm.num_classes; ++j) {
    if (gmm.alpha[j] <= 0.0) continue;
    const TensorD l = gmm.cholesky_factor(j);
    // Solve L w = z - mu by forward substitution; quad form is |w|^2.
    double quad = 0.0, logdet = 0.0;
    for (std::size_t a = 0; a < d; ++a) {
      double s = static_cast<double>(z[a]) - gmm.mu.at(j, a);
      for (std::size_t b = 0; b < a; ++b) s -= l.at(a, b) * w[b];
      w[a] = s / l.at(a, a);
      quad += w[a] * w[a];
      logdet += std::log(l.at(a, a));
    }
    terms.push_back(std::log(gmm.alpha[j]) - 0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi) -
                    logdet - 0.5 * quad);
  }
  const double mx = *std::max_element(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += std::exp(t - mx);
  return mx + std::log(s);
}

PseudoDataset generate_pseudo_dataset(const PrototypicalGMM& gmm, const SegModel& classifier,
                                      std::size_t n_target, double tau, Rng& rng,
                                      std::size_t max_draw_factor) {
  if (n_target == 0) throw ValueError("pseudo dataset size must be at least 1");
  if (!(tau >= 0.0 && tau < 1.0)) throw ValueError("pseudo dataset threshold must lie in [0, 1)");
  if (classifier.embed_dim != gmm.dim) {
    throw DimensionError("prototype mixture dimension " + std::to_string(gmm.dim) +
                         " differs from classifier input " + std::to_string(classifier.embed_dim));
  }
  const std::size_t d = gmm.dim;
  const std::size_t cap = std::max<std::size_t>(1, max_draw_factor) * n_target;
  std::vector<double> cumulative(gmm.num_classes);
  std::partial_sum(gmm.alpha.begin(), gmm.alpha.end(), cumulative.begin());

  std::vector<TensorD> factors;
  for (std::size_t j = 0; j < gmm.num_classes; ++j) factors.push_back(gmm.cholesky_factor(j));

  PseudoDataset out;
  out.class_counts.assign(gmm.num_classes, 0);
  std::vector<float> kept;
  kept.reserve(n_target * d);
  std::vector<double> eps(d);
  while (out.labels.size() < n_target && out.drawn < cap) {
    const std::size_t chunk = std::min(cap - out.drawn, std::max<std::size_t>(n_target - out.labels.size(), 64));
    Tensor draws({chunk, d});
    std::vector<int> comps(chunk);
    for (std::size_t r = 0; r < chunk; ++r) {
      const double u = rng.uniform() * cumulative.back();
      const auto j = static_cast<std::size_t>(
          std::min<std::ptrdiff_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin(),
                                   static_cast<std::ptrdiff_t>(gmm.num_classes - 1)));
      comps[r] = static_cast<int>(j);
      for (auto& e : eps) e = rng.normal();
      const TensorD& l = factors[j];
      for (std::size_t a = 0; a < d; ++a) {
        double s = gmm.mu.at(j, a);
        for (std::size_t b = 0; b <= a; ++b) s += l.at(a, b) * eps[b];
        draws.at(r, a) = static_cast<float>(s);
      }
    }
    const Tensor probs = forward_classify(classifier, draws);
    for (std::size_t r = 0; r < chunk && out.labels.size() < n_target; ++r) {
      ++out.drawn;
      auto p = probs.row(r);
      const auto pred = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
      if (static_cast<double>(p[pred]) > tau) {
        auto z = draws.row(r);
        kept.insert(kept.end(), z.begin(), z.end());
        out.labels.push_back(static_cast<int>(pred));
        out.components.push_back(comps[r]);
        ++out.class_counts[pred];
      }
    }
  }
  out.kept_fraction = static_cast<double>(out.labels.size()) / static_cast<double>(out.drawn);
  if (2 * out.labels.size() < n_target || out.labels.empty()) {
    throw GenerationError("pseudo dataset generation kept " + std::to_string(out.labels.size()) + " of " +
                              std::to_string(out.drawn) + " draws (kept fraction " +
                              std::to_string(out.kept_fraction) +
                              "); threshold too high or mixture/classifier mismatch",
                          out.kept_fraction);
  }
  out.z = Tensor({out.labels.size(), d}, std::move(kept));
  return out;
}

// GMM1 layout: "GMM1", u32 K, u32 d, f32 tau_fit, then TNS1 alpha [K],
// TNS1 mu [K x d], TNS1 sigma [K x d x d].
void save_gmm(const std::filesystem::path& path, const PrototypicalGMM& gmm) {
  gmm.validate();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  io::write_magic(os, kGmmMagic);
  io::write_u32(os, static_cast<std::uint32_t>(gmm.num_classes));
  io::write_u32(os, static_cast<std::uint32_t>(gmm.dim));
  io::write_f32(os, gmm.tau_fit);
  std::vector<double> a = gmm.alpha;
  io::write_tensor(os, TensorD({gmm.num_classes}, std::move(a)).cast<float>());
  io::write_tensor(os, gmm.mu.cast<float>());
  io::write_tensor(os, gmm.sigma.cast<float>());
  if (!os) throw Error("write failed: " + path.string());
}

PrototypicalGMM load_gmm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  io::expect_magic(is, kGmmMagic, "GMM1");
  PrototypicalGMM g;
  g.num_classes = io::read_u32(is);
  g.dim = io::read_u32(is);
  g.tau_fit = io::read_f32(is);
  const Tensor alpha = io::read_tensor(is);
  const Tensor mu = io::read_tensor(is);
  const Tensor sigma = io::read_tensor(is);
  const std::size_t k = g.num_classes, d = g.dim;
  if (alpha.shape() != Shape{k} || mu.shape() != Shape{k, d} || sigma.shape() != Shape{k, d, d}) {
    throw FormatError("GMM1: tensor shapes disagree with header");
  }
  // Weights were rounded to float; renormalize in double.
  double total = 0.0;
  for (float a : alpha.data()) total += static_cast<double>(a);
  for (float a : alpha.data()) g.alpha.push_back(static_cast<double>(a) / total);
  g.mu = mu.cast<double>();
  g.sigma = sigma.cast<double>();
  g.chol = TensorD({k, d, d});
  g.jitter.assign(k, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    TensorD s = g.covariance(j);
    // Symmetrize away float rounding before refactoring.
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < a; ++b) s.at(a, b) = s.at(b, a) = 0.5 * (s.at(a, b) + s.at(b, a));
    const CholeskyResult f = cholesky(s, 0.0, static_cast<int>(j));
    put_block(g.chol, j, f.factor);
    g.jitter[j] = f.jitter;
  }
  g.validate();
  return g;
}

}  // namespace protoadapt
