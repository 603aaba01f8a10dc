// Acceptance suite: runs the nine acceptance criteria and prints one PASS/FAIL
// line for each. Criteria 1-3 run in-process against independent oracles;
// 4-9 drive the protoadapt CLI end to end.
//
//   acceptance --workdir DIR [--only 1,4,9] [--results FILE] [--record FILE] [--reuse]

#include <CLI11.hpp>

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "protoadapt/autodiff.hpp"
#include "protoadapt/gmm.hpp"
#include "protoadapt/keyval.hpp"
#include "protoadapt/linalg.hpp"
#include "protoadapt/model.hpp"
#include "protoadapt/swd.hpp"
#include "protoadapt/tensor_io.hpp"

namespace fs = std::filesystem;
using namespace protoadapt;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

// --- oracles ----------------------------------------------------------------

using Points = std::vector<std::vector<double>>;

double brute_force_matching(const Points& x, const Points& y) {
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

Tensor random_points(std::size_t n, std::size_t d, Rng& rng, double scale = 1.0) {
  Tensor t({n, d});
  for (auto& v : t.data()) v = static_cast<float>(scale * rng.normal());
  return t;
}

Points rows_of(const Tensor& t) {
  Points out(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) out[r].assign(t.row(r).begin(), t.row(r).end());
  return out;
}

Outcome transport_oracles() {
  Rng rng(2024);
  double worst_1d = 0.0, worst_exact = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 1 + rng.below(8);
    std::vector<double> a(m), b(m);
    Points xa, xb;
    for (auto& v : a) xa.push_back({v = rng.normal()});
    for (auto& v : b) xb.push_back({v = 2.0 * rng.normal() + 0.5});
    worst_1d = std::max(worst_1d, std::abs(wasserstein1d_sq(a, b) - brute_force_matching(xa, xb)));
  }
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 1 + rng.below(7), d = 1 + rng.below(5);
    const Tensor x = random_points(m, d, rng), y = random_points(m, d, rng, 2.0);
    worst_exact = std::max(worst_exact, std::abs(exact_wasserstein_sq_small(x, y) - brute_force_matching(rows_of(x), rows_of(y))));
  }
  return {worst_1d <= 1e-9 && worst_exact <= 1e-9,
          "max |1-D - enumeration| " + fmt("%.2e", worst_1d) + ", max |exact - enumeration| " + fmt("%.2e", worst_exact)};
}

// Sort order of every projection column; a finite-difference step that changes
// it crosses a tie and is excluded.
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

// Rectifier activation pattern of every hidden layer; used to exclude steps
// that cross a kink.
std::vector<bool> relu_pattern(const SegModelD& m, const TensorD& x) {
  std::vector<bool> out;
  TensorD h = x;
  auto run = [&](const std::vector<BasicDenseLayer<double>>& block, bool relu_last) {
    for (std::size_t i = 0; i < block.size(); ++i) {
      TensorD z = matmul(h, block[i].weight);
      for (std::size_t r = 0; r < z.rows(); ++r)
        for (std::size_t c = 0; c < z.cols(); ++c) z.at(r, c) += block[i].bias[c];
      if (i + 1 < block.size() || relu_last) {
        for (auto& v : z.data()) {
          out.push_back(v > 0.0);
          v = std::max(v, 0.0);
        }
      }
      h = std::move(z);
    }
  };
  run(m.encoder, true);
  run(m.decoder, false);
  run(m.classifier, false);
  return out;
}

double network_loss(const SegModelD& m, const TensorD& x, const std::vector<int>& labels) {
  Tape<double> tape;
  const auto vars = bind_parameters(tape, m, false);
  const auto logits = logits_on_tape(tape, vars, embed_on_tape(tape, vars, tape.leaf(x, false)));
  return tape.scalar(tape.softmax_cross_entropy(logits, labels));
}

Outcome gradient_suite() {
  Rng rng(77);
  std::size_t swd_checked = 0, swd_bad = 0, net_checked = 0, net_bad = 0, skipped = 0;
  double worst = 0.0;
  auto record = [&](double an, double fd, std::size_t& checked, std::size_t& bad, double floor) {
    const double err = std::abs(an - fd);
    const double scale = std::max(std::abs(an), std::abs(fd));
    ++checked;
    if (err > 1e-3 * scale + floor) ++bad;
    if (scale > floor * 1e3) worst = std::max(worst, err / scale);
  };

  for (int config = 0; config < 100; ++config) {
    const std::size_t m = 2 + rng.below(10), d = 1 + rng.below(5), l = 1 + rng.below(20);
    const std::size_t n = config % 3 == 0 ? m + 1 + rng.below(5) : m;
    const Tensor x = random_points(m, d, rng), y = random_points(n, d, rng, 1.5);
    const Tensor dirs = sample_unit_sphere(d, l, rng);
    const SlicedResult res = sliced_wasserstein_grad(x, y, dirs);
    const auto base = projection_orders(x, dirs);
    const float h = 1e-2f;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t k = 0; k < d; ++k) {
        Tensor up = x, down = x;
        up.at(i, k) += h;
        down.at(i, k) -= h;
        if (projection_orders(up, dirs) != base || projection_orders(down, dirs) != base) {
          ++skipped;
          continue;
        }
        const double step = static_cast<double>(up.at(i, k)) - static_cast<double>(down.at(i, k));
        const double fd = (sliced_wasserstein_sq(up, y, dirs) - sliced_wasserstein_sq(down, y, dirs)) / step;
        record(res.grad.at(i, k), fd, swd_checked, swd_bad, 1e-6);
      }
    }
  }

  const double h = 1e-6;
  for (int config = 0; config < 100; ++config) {
    const std::size_t in = 1 + rng.below(4), k = 2 + rng.below(3), rows = 2 + rng.below(8);
    ModelSpec spec;
    spec.in_channels = in;
    spec.encoder_widths = {3 + rng.below(6), 2 + rng.below(5)};
    spec.num_classes = k;
    SegModelD mdl = init_model(spec, rng).cast<double>();
    for (auto* p : mdl.parameters())
      for (auto& v : p->data()) v += 0.1 * rng.normal();
    TensorD x({rows, in});
    for (auto& v : x.data()) v = rng.normal();
    std::vector<int> labels(rows);
    for (auto& lab : labels) lab = static_cast<int>(rng.below(k));

    Tape<double> tape;
    const auto vars = bind_parameters(tape, mdl, true);
    const auto logits = logits_on_tape(tape, vars, embed_on_tape(tape, vars, tape.leaf(x, false)));
    tape.backward(tape.softmax_cross_entropy(logits, labels));
    const SegModelD g = collect_gradients(tape, vars, mdl);
    const auto pattern = relu_pattern(mdl, x);

    auto params = mdl.parameters();
    const auto grads = g.parameters();
    for (std::size_t p = 0; p < params.size(); ++p) {
      for (std::size_t i = 0; i < params[p]->size(); ++i) {
        double& w = (*params[p])[i];
        const double saved = w;
        w = saved + h;
        const bool tie_up = relu_pattern(mdl, x) != pattern;
        const double up = network_loss(mdl, x, labels);
        w = saved - h;
        const bool tie_down = relu_pattern(mdl, x) != pattern;
        const double down = network_loss(mdl, x, labels);
        w = saved;
        if (tie_up || tie_down) {
          ++skipped;
          continue;
        }
        record((*grads[p])[i], (up - down) / (2.0 * h), net_checked, net_bad, 1e-9);
      }
    }
  }
  return {swd_bad == 0 && net_bad == 0 && swd_checked > 0 && net_checked > 0,
          std::to_string(swd_checked) + " swd + " + std::to_string(net_checked) + " network partials, " +
              std::to_string(swd_bad + net_bad) + " outside 1e-3, " + std::to_string(skipped) +
              " tie steps excluded, worst relative " + fmt("%.2e", worst)};
}

Outcome gmm_oracle() {
  Rng rng(909);
  double worst = 0.0, worst_alpha = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 1 + rng.below(5), k = 1 + rng.below(3);
    const std::size_t n = (d + 1) * k + rng.below(100 - (d + 1) * k + 1);
    Tensor emb({n, d});
    for (auto& v : emb.data()) v = static_cast<float>(3.0 * rng.normal() + 1.0);
    SupportSets s;
    s.members.resize(k);
    std::size_t next = 0;
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t c = 0; c <= d; ++c) s.members[j].push_back(next++);
    for (; next < n; ++next) s.members[rng.below(k)].push_back(next);
    for (auto& mem : s.members) std::sort(mem.begin(), mem.end());

    const PrototypicalGMM g = estimate_gmm(emb, s, 0.5);
    double alpha_sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const auto& rows = s.members[j];
      const double cnt = static_cast<double>(rows.size());
      alpha_sum += g.alpha[j];
      worst = std::max(worst, std::abs(g.alpha[j] - cnt / static_cast<double>(n)));
      std::vector<double> mu(d, 0.0);
      for (auto r : rows)
        for (std::size_t a = 0; a < d; ++a) mu[a] += emb.at(r, a);
      for (auto& v : mu) v /= cnt;
      std::vector<double> cov(d * d, 0.0);
      double trace = 0.0;
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b) {
          for (auto r : rows) cov[a * d + b] += (emb.at(r, a) - mu[a]) * (emb.at(r, b) - mu[b]);
          cov[a * d + b] /= cnt;
          if (a == b) trace += cov[a * d + b];
        }
      const double jitter = trace > 0.0 ? 1e-6 * trace / static_cast<double>(d) : 1e-6;
      const TensorD got = g.covariance(j);
      for (std::size_t a = 0; a < d; ++a) {
        worst = std::max(worst, std::abs(g.mu.at(j, a) - mu[a]));
        for (std::size_t b = 0; b < d; ++b) {
          const double expect = cov[a * d + b] + (a == b ? jitter : 0.0);
          worst = std::max(worst, std::abs(got.at(a, b) - expect));
        }
      }
    }
    worst_alpha = std::max(worst_alpha, std::abs(alpha_sum - 1.0));
  }
  return {worst <= 1e-9 && worst_alpha <= 1e-6,
          "max elementwise deviation " + fmt("%.2e", worst) + ", max |sum alpha - 1| " + fmt("%.2e", worst_alpha)};
}

// --- CLI pipeline -------------------------------------------------------------

class Runner {
 public:
  explicit Runner(fs::path work) : work_(std::move(work)) { fs::create_directories(work_ / "logs"); }

  int run(const std::string& args, const std::string& log) {
    const fs::path log_path = work_ / "logs" / (log + ".log");
    const std::string cmd = std::string("\"") + PROTOADAPT_CLI + "\" " + args + " > \"" + log_path.string() + "\" 2>&1";
    const int raw = std::system(cmd.c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  }

  void must(const std::string& args, const std::string& log) {
    const int code = run(args, log);
    if (code != 0) {
      std::ifstream in(work_ / "logs" / (log + ".log"));
      std::stringstream ss;
      ss << in.rdbuf();
      throw std::runtime_error("command failed (exit " + std::to_string(code) + "): " + args + "\n" + ss.str());
    }
  }

  const fs::path& work() const { return work_; }

 private:
  fs::path work_;
};

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

std::string config_path(const std::string& name) {
  return (fs::path(PROTOADAPT_SOURCE_DIR) / "configs" / name).string();
}

double eval_miou(Runner& r, const fs::path& ckpt, const fs::path& data, const fs::path& out, const std::string& log) {
  if (!fs::exists(out)) r.must("eval --ckpt " + q(ckpt) + " --data " + q(data) + " --out " + q(out), log);
  return parse_double("miou", KeyValues::load(out).require("miou"));
}

constexpr std::array<const char*, 3> kTaus = {"0.97", "0.8", "0"};
constexpr int kSeeds = 5;

// Everything criteria 4-7 read, per seed.
struct SeedRun {
  double pre = 0.0;
  std::map<std::string, double> post;  // by tau
  double w_pre = 0.0, w_post = 0.0;    // exact estimates at tau 0.97
  double noshift_pre = 0.0, noshift_post = 0.0;
  std::vector<std::string> negative_fields;
};

struct Experiment {
  std::vector<SeedRun> seeds;
  double seconds_main = 0.0;  // train, estimate, adapt and eval at the default tau
  double seconds_total = 0.0;
};

// Every distance, error and count field of the bound diagnostics must be >= 0.
void collect_negatives(const fs::path& summary, const std::string& tag, std::vector<std::string>& out) {
  for (const auto& [k, v] : KeyValues::load(summary).entries()) {
    const bool diagnostic = k.rfind("w_", 0) == 0 || k.rfind("e_", 0) == 0 || k.rfind("n_", 0) == 0 || k == "one_minus_tau";
    if (!diagnostic || v == "unavailable") continue;
    if (!(parse_double(k, v) >= 0.0)) out.push_back(tag + ":" + k + "=" + v);
  }
}

Experiment run_standard_experiment(Runner& r) {
  Experiment ex;
  const auto t0 = Clock::now();
  const fs::path std_data = r.work() / "standard", noshift_data = r.work() / "noshift";
  const std::string cfg = " --config " + q(config_path("standard.cfg"));
  if (!fs::exists(std_data / "manifest.txt")) r.must("gen-data --preset standard-shift --out " + q(std_data), "gen_standard");
  if (!fs::exists(noshift_data / "manifest.txt")) r.must("gen-data --preset no-shift --out " + q(noshift_data), "gen_noshift");
  const bool same_source =
      io::file_fingerprint(std_data / "source" / "images.tns1") == io::file_fingerprint(noshift_data / "source" / "images.tns1") &&
      io::file_fingerprint(std_data / "source" / "labels.tns1") == io::file_fingerprint(noshift_data / "source" / "labels.tns1");

  for (int s = 0; s < kSeeds; ++s) {
    SeedRun run;
    const std::string seed = " --seed " + std::to_string(s);
    const fs::path dir = r.work() / ("seed" + std::to_string(s));
    fs::create_directories(dir);
    const std::string tag = "s" + std::to_string(s) + "_";
    const auto ts = Clock::now();

    const fs::path ckpt = dir / "source.mdl";
    if (!fs::exists(ckpt)) r.must("train" + cfg + seed + " --data " + q(std_data) + " --out " + q(ckpt), tag + "train");
    run.pre = eval_miou(r, ckpt, std_data, dir / "pre.txt", tag + "eval_pre");
    ex.seconds_main += seconds_since(ts);

    for (const char* tau : kTaus) {
      const auto tt = Clock::now();
      const fs::path gmm = dir / ("tau" + std::string(tau) + ".gmm");
      const fs::path out = dir / ("adapt_tau" + std::string(tau));
      if (!fs::exists(gmm))
        r.must("estimate" + cfg + seed + " --ckpt " + q(ckpt) + " --data " + q(std_data) + " --tau " + tau + " --out " + q(gmm),
               tag + "estimate_" + tau);
      if (!fs::exists(out / "summary.txt")) {
        r.must("adapt" + cfg + seed + " --ckpt " + q(ckpt) + " --gmm " + q(gmm) + " --target " + q(std_data / "target_train") +
                   " --tau " + tau + " --out " + q(out),
               tag + "adapt_" + tau);
        r.must("diagnose --report " + q(out) + " --eval " + q(std_data), tag + "diagnose_" + tau);
      }
      run.post[tau] = eval_miou(r, out / "adapted.mdl", std_data, dir / ("post_tau" + std::string(tau) + ".txt"),
                                tag + "eval_post_" + tau);
      collect_negatives(out / "summary.txt", tag + tau, run.negative_fields);
      if (std::string(tau) == "0.97") {
        const KeyValues sm = KeyValues::load(out / "summary.txt");
        run.w_pre = parse_double("w_tp_pre_exact", sm.require("w_tp_pre_exact"));
        run.w_post = parse_double("w_tp_post_exact", sm.require("w_tp_post_exact"));
        ex.seconds_main += seconds_since(tt);
      }
    }

    // No-shift control. The no-shift preset shares the source split with the
    // standard one, so the source checkpoint and mixture carry over; otherwise
    // they are rebuilt on the no-shift source.
    fs::path ns_ckpt = ckpt, ns_gmm = dir / "tau0.97.gmm";
    if (!same_source) {
      ns_ckpt = dir / "noshift_source.mdl";
      ns_gmm = dir / "noshift.gmm";
      if (!fs::exists(ns_ckpt))
        r.must("train" + cfg + seed + " --data " + q(noshift_data) + " --out " + q(ns_ckpt), tag + "train_noshift");
      if (!fs::exists(ns_gmm))
        r.must("estimate" + cfg + seed + " --ckpt " + q(ns_ckpt) + " --data " + q(noshift_data) + " --out " + q(ns_gmm),
               tag + "estimate_noshift");
    }
    const fs::path ns_out = dir / "adapt_noshift";
    if (!fs::exists(ns_out / "summary.txt")) {
      r.must("adapt" + cfg + seed + " --ckpt " + q(ns_ckpt) + " --gmm " + q(ns_gmm) + " --target " +
                 q(noshift_data / "target_train") + " --out " + q(ns_out),
             tag + "adapt_noshift");
    }
    collect_negatives(ns_out / "summary.txt", tag + "noshift", run.negative_fields);
    run.noshift_pre = eval_miou(r, ns_ckpt, noshift_data, dir / "noshift_pre.txt", tag + "eval_noshift_pre");
    run.noshift_post = eval_miou(r, ns_out / "adapted.mdl", noshift_data, dir / "noshift_post.txt", tag + "eval_noshift_post");
    ex.seeds.push_back(run);
    std::printf("  seed %d: pre %.4f post %.4f / %.4f / %.4f (tau 0.97 / 0.8 / 0), w_tp %.4f -> %.4f, no-shift %.4f -> %.4f\n",
                s, run.pre, run.post["0.97"], run.post["0.8"], run.post["0"], run.w_pre, run.w_post, run.noshift_pre,
                run.noshift_post);
    std::fflush(stdout);
  }
  ex.seconds_total = seconds_since(t0);
  return ex;
}

double mean_of(const Experiment& ex, const std::function<double(const SeedRun&)>& f) {
  double s = 0.0;
  for (const auto& r : ex.seeds) s += f(r);
  return s / static_cast<double>(ex.seeds.size());
}

KeyValues experiment_values(const Experiment& ex) {
  KeyValues kv;
  for (std::size_t s = 0; s < ex.seeds.size(); ++s) {
    const auto& r = ex.seeds[s];
    const std::string p = "seed" + std::to_string(s) + "_";
    kv.set(p + "pre", r.pre);
    for (const char* tau : kTaus) kv.set(p + "post_tau" + tau, r.post.at(tau));
    kv.set(p + "w_tp_pre", r.w_pre);
    kv.set(p + "w_tp_post", r.w_post);
    kv.set(p + "noshift_pre", r.noshift_pre);
    kv.set(p + "noshift_post", r.noshift_post);
  }
  return kv;
}

// Values committed in results/; reports how far the rerun drifted from them.
std::string committed_drift(const Experiment& ex, const fs::path& results) {
  if (!fs::exists(results)) return "no committed results at " + results.string();
  const KeyValues committed = KeyValues::load(results);
  double worst = 0.0;
  std::size_t missing = 0;
  for (const auto& [k, v] : experiment_values(ex).entries()) {
    auto c = committed.get(k);
    if (!c) {
      ++missing;
      continue;
    }
    worst = std::max(worst, std::abs(parse_double(k, *c) - parse_double(k, v)));
  }
  return "committed values reproduced to within " + fmt("%.1e", worst) +
         (missing ? " (" + std::to_string(missing) + " keys missing)" : std::string());
}

Outcome adaptation_gain(const Experiment& ex, const std::string& drift) {
  const double pre = mean_of(ex, [](const SeedRun& r) { return r.pre; });
  const double post = mean_of(ex, [](const SeedRun& r) { return r.post.at("0.97"); });
  const double gain = 100.0 * (post - pre);
  return {gain >= 10.0 && ex.seconds_main < 600.0,
          "mean mIoU " + fmt("%.4f", pre) + " -> " + fmt("%.4f", post) + ", gain " + fmt("%.2f", gain) +
              " points (need >= 10), pipeline " + fmt("%.0f", ex.seconds_main) + " s (need < 600); " + drift};
}

Outcome tau_ablation(const Experiment& ex) {
  const double m97 = 100.0 * mean_of(ex, [](const SeedRun& r) { return r.post.at("0.97"); });
  const double m80 = 100.0 * mean_of(ex, [](const SeedRun& r) { return r.post.at("0.8"); });
  const double m0 = 100.0 * mean_of(ex, [](const SeedRun& r) { return r.post.at("0"); });
  return {m97 >= m80 && m80 >= m0 - 1.0,
          "mIoU points tau 0.97 " + fmt("%.2f", m97) + ", tau 0.8 " + fmt("%.2f", m80) + ", tau 0 " + fmt("%.2f", m0)};
}

Outcome alignment(const Experiment& ex) {
  int decreased = 0;
  std::vector<std::string> negatives;
  for (const auto& r : ex.seeds) {
    decreased += r.w_post < r.w_pre ? 1 : 0;
    negatives.insert(negatives.end(), r.negative_fields.begin(), r.negative_fields.end());
  }
  std::string detail = "w_tp_post < w_tp_pre in " + std::to_string(decreased) + " of " + std::to_string(ex.seeds.size()) +
                       " seeds (need >= 4), negative diagnostic fields: " + std::to_string(negatives.size());
  if (!negatives.empty()) detail += " (first " + negatives.front() + ")";
  return {decreased >= 4 && negatives.empty(), detail};
}

Outcome no_harm(const Experiment& ex) {
  const double pre = mean_of(ex, [](const SeedRun& r) { return r.noshift_pre; });
  const double post = mean_of(ex, [](const SeedRun& r) { return r.noshift_post; });
  const double diff = 100.0 * std::abs(post - pre);
  return {diff <= 2.0, "zero shift mIoU " + fmt("%.4f", pre) + " -> " + fmt("%.4f", post) + ", |difference| " +
                           fmt("%.2f", diff) + " points (need <= 2)"};
}

// Small dataset plus source model and mixture for criteria 8 and 9.
void smoke_pipeline(Runner& r, const fs::path& dir, bool adapt) {
  const std::string cfg = " --config " + q(config_path("smoke.cfg")) + " --threads 1";
  const std::string tag = dir.filename().string() + "_";
  r.must("gen-data --spec " + q(config_path("smoke_data.txt")) + " --out " + q(dir / "data") + " --force", tag + "gen");
  r.must("train" + cfg + " --force --data " + q(dir / "data") + " --out " + q(dir / "source.mdl"), tag + "train");
  r.must("estimate" + cfg + " --force --ckpt " + q(dir / "source.mdl") + " --data " + q(dir / "data") + " --out " +
             q(dir / "mix.gmm"),
         tag + "estimate");
  if (adapt) {
    r.must("adapt" + cfg + " --force --ckpt " + q(dir / "source.mdl") + " --gmm " + q(dir / "mix.gmm") + " --target " +
               q(dir / "data" / "target_train") + " --out " + q(dir / "adapt"),
           tag + "adapt");
  }
}

Outcome source_freeness(Runner& r) {
  const fs::path dir = r.work() / "source_free";
  fs::remove_all(dir);
  smoke_pipeline(r, dir, false);
  fs::copy(dir / "data" / "source", dir / "source_copy", fs::copy_options::recursive);
  fs::remove_all(dir / "data" / "source");
  const std::string cfg = " --config " + q(config_path("smoke.cfg"));
  const std::string base = "adapt" + cfg + " --ckpt " + q(dir / "source.mdl") + " --gmm " + q(dir / "mix.gmm");
  const int ok = r.run(base + " --target " + q(dir / "data" / "target_train") + " --out " + q(dir / "adapt"), "source_free_adapt");
  const bool artifacts = fs::exists(dir / "adapt" / "adapted.mdl") && fs::exists(dir / "adapt" / "report.csv");
  const int refused = r.run(base + " --target " + q(dir / "source_copy") + " --out " + q(dir / "refused"), "source_free_refused");
  return {ok == 0 && artifacts && refused == 4,
          "adapt without source files exited " + std::to_string(ok) + (artifacts ? " with" : " without") +
              " outputs; source path as target exited " + std::to_string(refused) + " (need 0 and 4)"};
}

bool same_bytes(const fs::path& a, const fs::path& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  if (!fa || !fb) return false;
  return std::equal(std::istreambuf_iterator<char>(fa), {}, std::istreambuf_iterator<char>(fb), {});
}

Outcome determinism(Runner& r) {
  const fs::path a = r.work() / "determinism_a", b = r.work() / "determinism_b";
  fs::remove_all(a);
  fs::remove_all(b);
  smoke_pipeline(r, a, true);
  smoke_pipeline(r, b, true);
  std::vector<std::string> differ;
  for (const char* f : {"source.mdl", "mix.gmm", "adapt/adapted.mdl", "adapt/report.csv", "data/source/images.tns1"}) {
    if (!same_bytes(a / f, b / f)) differ.push_back(f);
  }
  std::string detail = "checkpoints, mixture and report CSV compared byte for byte: ";
  detail += differ.empty() ? "identical" : "differ in " + differ.front();
  return {differ.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria for the protoadapt workflow"};
  std::string workdir;
  std::string only;
  std::string results = (fs::path(PROTOADAPT_SOURCE_DIR) / "results" / "standard_shift.txt").string();
  std::string record;
  bool reuse = false;
  app.add_option("--workdir", workdir, "scratch directory for datasets and runs")->required();
  app.add_option("--only", only, "comma-separated criteria to run (default all)");
  app.add_option("--results", results, "committed standard-shift values to compare against");
  app.add_option("--record", record, "write the standard-shift values to this file");
  app.add_flag("--reuse", reuse, "keep outputs already present in the workdir");
  CLI11_PARSE(app, argc, argv);
  if (!reuse) fs::remove_all(workdir);

  std::set<int> selected;
  for (const double v : parse_double_list("--only", only)) selected.insert(static_cast<int>(v));
  auto wanted = [&](int id) { return selected.empty() || selected.count(id) > 0; };

  Runner runner{fs::path(workdir)};
  int failures = 0;
  auto report = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
    if (!wanted(id)) return;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("[%s] %d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  };

  report(1, "transport oracle equivalence", [] {
    const auto t0 = Clock::now();
    Outcome o = transport_oracles();
    const double s = seconds_since(t0);
    o.pass = o.pass && s < 10.0;
    return o;
  });
  report(2, "gradient suite", [] {
    const auto t0 = Clock::now();
    Outcome o = gradient_suite();
    const double s = seconds_since(t0);
    o.pass = o.pass && s < 60.0;
    return o;
  });
  report(3, "mixture estimator", [] { return gmm_oracle(); });

  if (wanted(4) || wanted(5) || wanted(6) || wanted(7)) {
    std::optional<Experiment> ex;
    std::string error;
    std::printf("running the standard-shift experiment (%d seeds)\n", kSeeds);
    std::fflush(stdout);
    try {
      ex = run_standard_experiment(runner);
      std::printf("  experiment finished in %.0f s\n", ex->seconds_total);
      if (!record.empty()) experiment_values(*ex).save(record);
    } catch (const std::exception& e) {
      error = e.what();
    }
    auto with = [&](const std::function<Outcome(const Experiment&)>& f) {
      return [&, f] {
        if (!ex) return Outcome{false, "experiment failed: " + error};
        return f(*ex);
      };
    };
    const std::string drift = ex ? committed_drift(*ex, results) : std::string();
    report(4, "adaptation gain", with([&](const Experiment& e) { return adaptation_gain(e, drift); }));
    report(5, "confidence threshold ordering", with(tau_ablation));
    report(6, "alignment diagnostic", with(alignment));
    report(7, "no-harm control", with(no_harm));
  }
  report(8, "source-freeness", [&] { return source_freeness(runner); });
  report(9, "determinism", [&] { return determinism(runner); });

  std::printf("%s: %d criteria failed\n", failures ? "FAILED" : "ALL PASSED", failures);
  return failures ? 1 : 0;
}
