#include "protoadapt/adaptation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "protoadapt/optim.hpp"
#include "protoadapt/tensor_io.hpp"

namespace protoadapt {

namespace {

// Independent random streams of one run, all derived from cfg.seed.
enum Stream : std::uint64_t {
  kInitStream = 1,
  kSourceBatchStream = 2,
  kEstimateDiagStream = 3,
  kDiagPseudoStream = 4,
  kTargetBatchStream = 5,
  kPseudoStream = 6,
  kProjectionStream = 7,
  kTargetDiagStream = 8,
  kTargetDistanceStream = 9,
};

constexpr std::array<char, 4> kEmbeddingMagic{'E', 'M', 'B', '1'};
constexpr std::size_t kEvalChunkImages = 64;

Rng stream(const ExperimentConfig& cfg, Stream s) { return Rng(cfg.seed).derive(s); }

Tensor gather_images(const Tensor& images, std::span<const std::size_t> idx) {
  const std::size_t per = images.size() / images.dim(0);
  Shape shape = images.shape();
  shape[0] = idx.size();
  Tensor out(shape);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(images.data().begin() + static_cast<std::ptrdiff_t>(idx[i] * per), per,
                out.data().begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}

std::vector<int> gather_labels(const std::vector<int>& labels, std::size_t pixels_per_image,
                               std::span<const std::size_t> idx) {
  std::vector<int> out;
  out.reserve(idx.size() * pixels_per_image);
  for (auto i : idx) {
    auto first = labels.begin() + static_cast<std::ptrdiff_t>(i * pixels_per_image);
    out.insert(out.end(), first, first + static_cast<std::ptrdiff_t>(pixels_per_image));
  }
  return out;
}

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows) {
  const std::size_t c = t.cols();
  Tensor out({rows.size(), c});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto src = t.row(rows[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

// k distinct indices from [0, n) in draw order (partial Fisher-Yates).
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
  k = std::min(k, n);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + static_cast<std::size_t>(rng.below(n - i))]);
  idx.resize(k);
  return idx;
}

std::vector<std::size_t> sample_with_replacement(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(k);
  for (auto& i : idx) i = static_cast<std::size_t>(rng.below(n));
  return idx;
}

std::size_t infer_classes(const ExperimentConfig& cfg, const LabeledImages& data) {
  if (cfg.num_classes) return cfg.num_classes;
  float mx = 0.0f;
  for (float v : data.labels.data()) mx = std::max(mx, v);
  return static_cast<std::size_t>(std::lround(mx)) + 1;
}

void check_finite_loss(double v, long step, const char* what) {
  if (!std::isfinite(v)) {
    throw DivergenceError(std::string(what) + " loss became non-finite at step " + std::to_string(step), step);
  }
}

Tensor flatten_embeddings(const Tensor& emb) { return emb.reshaped({emb.size() / emb.shape().back(), emb.shape().back()}); }

// Fixed diagnostic subset of target pixels, as feature rows.
Tensor diagnostic_target_features(const Tensor& images, bool neighborhood, const ExperimentConfig& cfg) {
  Rng rng = stream(cfg, kTargetDiagStream);
  const std::size_t n = images.dim(0);
  const std::size_t per = images.dim(1) * images.dim(2);
  const std::size_t want_images = std::min(n, (cfg.diag_batch + per - 1) / per * 2);
  auto idx = sample_without_replacement(n, want_images, rng);
  std::sort(idx.begin(), idx.end());
  Tensor feats = pixel_features(gather_images(images, idx), neighborhood);
  auto rows = sample_without_replacement(feats.rows(), cfg.diag_batch, rng);
  std::sort(rows.begin(), rows.end());
  return gather_rows(feats, rows);
}

}  // namespace

void ExperimentConfig::validate() const {
  auto unit = [](double t) { return t >= 0.0 && t < 1.0; };
  if (!unit(tau_fit) || !unit(tau_filter)) throw UsageError("tau_fit and tau_filter must lie in [0, 1)");
  if (!std::isfinite(lambda) || lambda < 0.0) throw UsageError("lambda must be finite and non-negative");
  if (num_projections == 0 || batch_source == 0 || batch_target == 0 || pseudo_batch == 0) {
    throw UsageError("projection and batch counts must be at least 1");
  }
  if (!(lr >= 0.0) || !(adapt_lr >= 0.0) || !(adam_eps > 0.0)) throw UsageError("learning rates must be >= 0");
  if (encoder_widths.empty()) throw UsageError("encoder needs at least one layer");
  if (diag_subsample == 0 || diag_subsample > 64 || diag_resamples == 0 || diag_batch == 0) {
    throw UsageError("diagnostic sample sizes must be positive (diag_subsample <= 64)");
  }
  if (max_draw_factor == 0) throw UsageError("max_draw_factor must be at least 1");
}

namespace {

const std::vector<std::string> kConfigKeys = {
    "tau_fit",        "tau_filter",     "lambda",         "num_projections", "source_steps",
    "adapt_steps",    "batch_source",   "batch_target",   "pseudo_batch",    "lr",
    "adapt_lr",       "adam_eps",       "seed",           "num_classes",     "neighborhood",
    "encoder_widths", "embed_dim",      "max_draw_factor", "freeze_classifier", "equalization",
    "diag_subsample", "diag_resamples", "diag_batch",     "threads",         "dataset"};

}  // namespace

KeyValues config_to_keyvalues(const ExperimentConfig& c) {
  KeyValues kv;
  kv.set("tau_fit", c.tau_fit);
  kv.set("tau_filter", c.tau_filter);
  kv.set("lambda", c.lambda);
  kv.set("num_projections", static_cast<unsigned long long>(c.num_projections));
  kv.set("source_steps", static_cast<unsigned long long>(c.source_steps));
  kv.set("adapt_steps", static_cast<unsigned long long>(c.adapt_steps));
  kv.set("batch_source", static_cast<unsigned long long>(c.batch_source));
  kv.set("batch_target", static_cast<unsigned long long>(c.batch_target));
  kv.set("pseudo_batch", static_cast<unsigned long long>(c.pseudo_batch));
  kv.set("lr", c.lr);
  kv.set("adapt_lr", c.adapt_lr);
  kv.set("adam_eps", c.adam_eps);
  kv.set("seed", static_cast<unsigned long long>(c.seed));
  kv.set("num_classes", static_cast<unsigned long long>(c.num_classes));
  kv.set("neighborhood", c.neighborhood);
  std::string widths;
  for (std::size_t i = 0; i < c.encoder_widths.size(); ++i) {
    widths += (i ? "," : "") + std::to_string(c.encoder_widths[i]);
  }
  kv.set("encoder_widths", widths);
  kv.set("embed_dim", static_cast<unsigned long long>(c.embed_dim));
  kv.set("max_draw_factor", static_cast<unsigned long long>(c.max_draw_factor));
  kv.set("freeze_classifier", c.freeze_classifier);
  kv.set("equalization", c.equalization == Equalization::Subsample ? "subsample" : "quantile-interp");
  kv.set("diag_subsample", static_cast<unsigned long long>(c.diag_subsample));
  kv.set("diag_resamples", static_cast<unsigned long long>(c.diag_resamples));
  kv.set("diag_batch", static_cast<unsigned long long>(c.diag_batch));
  kv.set("threads", static_cast<unsigned long long>(c.threads));
  kv.set("dataset", c.dataset);
  return kv;
}

ExperimentConfig config_from_keyvalues(const KeyValues& kv, ExperimentConfig c) {
  if (auto unknown = kv.unknown_keys(kConfigKeys); !unknown.empty()) {
    throw UsageError("unknown config key: " + unknown.front());
  }
  auto real = [&](const char* k, double& dst) {
    if (auto v = kv.get(k)) dst = parse_double(k, *v);
  };
  auto size = [&](const char* k, std::size_t& dst) {
    if (auto v = kv.get(k)) dst = static_cast<std::size_t>(parse_uint(k, *v));
  };
  real("tau_fit", c.tau_fit);
  real("tau_filter", c.tau_filter);
  real("lambda", c.lambda);
  size("num_projections", c.num_projections);
  size("source_steps", c.source_steps);
  size("adapt_steps", c.adapt_steps);
  size("batch_source", c.batch_source);
  size("batch_target", c.batch_target);
  size("pseudo_batch", c.pseudo_batch);
  real("lr", c.lr);
  real("adapt_lr", c.adapt_lr);
  real("adam_eps", c.adam_eps);
  if (auto v = kv.get("seed")) c.seed = parse_uint("seed", *v);
  size("num_classes", c.num_classes);
  if (auto v = kv.get("neighborhood")) c.neighborhood = parse_bool("neighborhood", *v);
  if (auto v = kv.get("encoder_widths")) {
    c.encoder_widths.clear();
    for (double w : parse_double_list("encoder_widths", *v)) {
      if (w < 1.0 || w != std::floor(w)) throw UsageError("bad value for encoder_widths: " + *v);
      c.encoder_widths.push_back(static_cast<std::size_t>(w));
    }
  }
  size("embed_dim", c.embed_dim);
  size("max_draw_factor", c.max_draw_factor);
  if (auto v = kv.get("freeze_classifier")) c.freeze_classifier = parse_bool("freeze_classifier", *v);
  if (auto v = kv.get("equalization")) {
    if (*v == "subsample") c.equalization = Equalization::Subsample;
    else if (*v == "quantile-interp") c.equalization = Equalization::QuantileInterp;
    else throw UsageError("bad value for equalization: " + *v);
  }
  size("diag_subsample", c.diag_subsample);
  size("diag_resamples", c.diag_resamples);
  size("diag_batch", c.diag_batch);
  size("threads", c.threads);
  if (auto v = kv.get("dataset")) c.dataset = *v;
  c.validate();
  return c;
}

SegModel train_source(const ExperimentConfig& cfg, const LabeledImages& source, TrainLog* log) {
  if (source.count() == 0 || !source.has_labels()) throw UsageError("source training needs labeled images");
  ModelSpec spec;
  spec.in_channels = source.images.dim(3);
  spec.neighborhood = cfg.neighborhood;
  spec.encoder_widths = cfg.encoder_widths;
  spec.num_classes = infer_classes(cfg, source);
  spec.embed_dim = cfg.embed_dim;
  Rng init = stream(cfg, kInitStream);
  return train_source(cfg, source, init_model(spec, init), log);
}

SegModel train_source(const ExperimentConfig& cfg, const LabeledImages& source, SegModel model, TrainLog* log) {
  cfg.validate();
  if (source.count() == 0 || !source.has_labels()) throw UsageError("source training needs labeled images");
  const auto labels = labels_to_indices(source.labels, model.num_classes);
  const std::size_t per = source.images.dim(1) * source.images.dim(2);
  Rng rng = stream(cfg, kSourceBatchStream);
  AdamState state;
  const AdamOptions opts{cfg.lr, 0.9, 0.999, cfg.adam_eps};
  for (std::size_t step = 0; step < cfg.source_steps; ++step) {
    const auto idx = sample_with_replacement(source.count(), cfg.batch_source, rng);
    const auto batch_labels = gather_labels(labels, per, idx);
    Tape<float> tape;
    const auto vars = bind_parameters(tape, model, true);
    const auto x = tape.leaf(pixel_features(gather_images(source.images, idx), model.neighborhood), false);
    const auto loss = tape.softmax_cross_entropy(logits_on_tape(tape, vars, embed_on_tape(tape, vars, x)),
                                                 batch_labels);
    const double value = tape.scalar(loss);
    check_finite_loss(value, static_cast<long>(step), "source");
    if (log) log->losses.push_back(value);
    tape.backward(loss);
    SegModel grads = collect_gradients(tape, vars, model);
    const auto params = model.parameters();
    const auto gptrs = std::as_const(grads).parameters();
    adam_step(params, gptrs, state, opts);
  }
  return model;
}

DistanceEstimate measure_distance(const Tensor& a, const Tensor& b, const ExperimentConfig& cfg, Rng& rng) {
  require_rank(a, 2, "measure_distance");
  require_rank(b, 2, "measure_distance");
  DistanceEstimate out;
  const std::size_t m = std::min({cfg.diag_subsample, a.rows(), b.rows()});
  std::vector<double> costs;
  for (std::size_t r = 0; r < cfg.diag_resamples; ++r) {
    const auto ia = sample_without_replacement(a.rows(), m, rng);
    const auto ib = sample_without_replacement(b.rows(), m, rng);
    costs.push_back(exact_wasserstein_sq_small(gather_rows(a, ia), gather_rows(b, ib)));
  }
  const double mean = std::accumulate(costs.begin(), costs.end(), 0.0) / static_cast<double>(costs.size());
  double var = 0.0;
  for (double c : costs) var += (c - mean) * (c - mean);
  if (costs.size() > 1) var /= static_cast<double>(costs.size() - 1);
  out.exact = mean;
  out.exact_se = std::sqrt(var / static_cast<double>(costs.size()));

  const std::size_t n = std::min({cfg.diag_batch, a.rows(), b.rows()});
  const auto sa = sample_without_replacement(a.rows(), n, rng);
  const auto sb = sample_without_replacement(b.rows(), n, rng);
  SlicedConfig sc{cfg.num_projections, 0, cfg.equalization};
  out.sliced = sliced_wasserstein_sq(gather_rows(a, sa), gather_rows(b, sb), sc, rng);
  return out;
}

PseudoDataset diagnostic_pseudo_samples(const PrototypicalGMM& gmm, const SegModel& classifier,
                                        const ExperimentConfig& cfg) {
  Rng rng = stream(cfg, kDiagPseudoStream);
  return generate_pseudo_dataset(gmm, classifier, cfg.diag_batch, cfg.tau_filter, rng, cfg.max_draw_factor);
}

EstimationResult estimate_prototypes(const SegModel& model, const LabeledImages& source,
                                     const ExperimentConfig& cfg) {
  cfg.validate();
  if (!source.has_labels()) throw UsageError("prototype estimation needs labeled source data");
  const Tensor emb = flatten_embeddings(forward_embed(model, source.images));
  const Tensor probs = forward_classify(model, emb);
  const auto labels = labels_to_indices(source.labels, model.num_classes);
  const SupportSets support = build_support_sets(emb, labels, probs, cfg.tau_fit);

  EstimationResult out;
  out.gmm = estimate_gmm(emb, support, cfg.tau_fit);
  for (std::size_t j = 0; j < support.num_classes(); ++j) out.summary.support_counts.push_back(support.count(j));

  const auto pred = argmax_rows(probs);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) wrong += pred[i] != labels[i] ? 1 : 0;
  out.summary.e_source = static_cast<double>(wrong) / static_cast<double>(pred.size());
  out.summary.n_source = pred.size();

  const PseudoDataset pseudo = diagnostic_pseudo_samples(out.gmm, model, cfg);
  Rng rng = stream(cfg, kEstimateDiagStream);
  out.summary.w_sp = measure_distance(emb, pseudo.z, cfg, rng);
  return out;
}

SegmentationScores score_predictions(std::span<const int> predicted, std::span<const int> truth,
                                     std::size_t k) {
  if (predicted.size() != truth.size()) throw DimensionError("score_predictions: length mismatch");
  SegmentationScores s;
  s.confusion.assign(k * k, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i], p = predicted[i];
    if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= k || static_cast<std::size_t>(p) >= k) {
      throw ValueError("score_predictions: class index out of range");
    }
    ++s.confusion[static_cast<std::size_t>(t) * k + static_cast<std::size_t>(p)];
    correct += t == p ? 1 : 0;
  }
  s.pixel_accuracy = truth.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(truth.size());
  double sum = 0.0;
  std::size_t defined = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::uint64_t tp = s.confusion[c * k + c], fp = 0, fn = 0;
    for (std::size_t o = 0; o < k; ++o) {
      if (o == c) continue;
      fp += s.confusion[o * k + c];
      fn += s.confusion[c * k + o];
    }
    const std::uint64_t denom = tp + fp + fn;
    if (denom == 0) {
      s.iou.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    s.iou.push_back(static_cast<double>(tp) / static_cast<double>(denom));
    sum += s.iou.back();
    ++defined;
  }
  s.miou = defined ? sum / static_cast<double>(defined) : 0.0;
  return s;
}

SegmentationScores evaluate_miou(const SegModel& model, const LabeledImages& data) {
  if (!data.has_labels()) throw UsageError("evaluation needs labeled data");
  const auto truth = labels_to_indices(data.labels, model.num_classes);
  std::vector<int> pred;
  pred.reserve(truth.size());
  const std::size_t n = data.count();
  for (std::size_t begin = 0; begin < n; begin += kEvalChunkImages) {
    std::vector<std::size_t> idx(std::min(n, begin + kEvalChunkImages) - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const Tensor emb = forward_embed(model, gather_images(data.images, idx));
    const auto p = argmax_rows(forward_classify(model, emb));
    pred.insert(pred.end(), p.begin(), p.end());
  }
  return score_predictions(pred, truth, model.num_classes);
}

BoundDiagnostics compute_bound_diagnostics(const SourceSummary& source, const PrototypicalGMM& gmm,
                                           const Tensor& target_pre, const Tensor& target_post,
                                           const SegModel& initial_model, const ExperimentConfig& cfg) {
  BoundDiagnostics d;
  d.w_sp = source.w_sp;
  d.e_source = source.e_source;
  d.n_source = source.n_source;
  d.one_minus_tau = 1.0 - cfg.tau_filter;
  const PseudoDataset pseudo = diagnostic_pseudo_samples(gmm, initial_model, cfg);
  d.n_pseudo = pseudo.size();
  d.n_target = target_pre.rows();
  // Same stream for both so pre and post see identical subsample indices.
  Rng pre_rng = stream(cfg, kTargetDistanceStream);
  d.w_tp_pre = measure_distance(target_pre, pseudo.z, cfg, pre_rng);
  Rng post_rng = stream(cfg, kTargetDistanceStream);
  d.w_tp_post = measure_distance(target_post, pseudo.z, cfg, post_rng);
  return d;
}

AdaptationResult adapt_source_free(const SegModel& initial, const PrototypicalGMM& gmm, const Tensor& target_images,
                                   const ExperimentConfig& cfg, const SourceSummary* source_summary) {
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();
  if (gmm.dim != initial.embed_dim) {
    throw DimensionError("prototype mixture dimension " + std::to_string(gmm.dim) + " differs from model embedding " +
                         std::to_string(initial.embed_dim));
  }
  require_rank(target_images, 4, "adapt_source_free target images");
  if (target_images.dim(0) == 0) throw UsageError("adaptation needs target images");

  SegModel model = initial;
  AdaptationResult result;
  AdaptationReport& report = result.report;

  Rng batch_rng = stream(cfg, kTargetBatchStream);
  Rng pseudo_rng = stream(cfg, kPseudoStream);
  Rng proj_rng = stream(cfg, kProjectionStream);
  const SlicedConfig sliced{cfg.num_projections, 0, cfg.equalization};
  AdamState state;
  const AdamOptions opts{cfg.adapt_lr, 0.9, 0.999, cfg.adam_eps};
  double kept_sum = 0.0;

  for (std::size_t step = 0; step < cfg.adapt_steps; ++step) {
    const auto idx = sample_with_replacement(target_images.dim(0), cfg.batch_target, batch_rng);
    Tensor feats = pixel_features(gather_images(target_images, idx), model.neighborhood);
    if (feats.rows() > cfg.pseudo_batch) {
      auto rows = sample_without_replacement(feats.rows(), cfg.pseudo_batch, batch_rng);
      std::sort(rows.begin(), rows.end());
      feats = gather_rows(feats, rows);
    }
    const PseudoDataset pseudo =
        generate_pseudo_dataset(gmm, initial, cfg.pseudo_batch, cfg.tau_filter, pseudo_rng, cfg.max_draw_factor);
    kept_sum += pseudo.kept_fraction;

    Tape<float> tape;
    const auto vars = bind_parameters(tape, model, true);
    const auto target_emb = embed_on_tape(tape, vars, tape.leaf(std::move(feats), false));
    SlicedResult swd = sliced_wasserstein_grad(tape.value(target_emb), pseudo.z, sliced, proj_rng);
    const auto swd_node = tape.external(target_emb, static_cast<float>(swd.value), std::move(swd.grad));
    const auto logits = logits_on_tape(tape, vars, tape.leaf(pseudo.z, false));
    const auto ce = tape.softmax_cross_entropy(logits, pseudo.labels);
    const auto total = tape.add(ce, tape.scale(swd_node, static_cast<float>(cfg.lambda)));

    StepRecord rec{step, tape.scalar(ce), swd.value, tape.scalar(total)};
    check_finite_loss(rec.total, static_cast<long>(step), "adaptation");
    report.steps.push_back(rec);

    tape.backward(total);
    SegModel grads = collect_gradients(tape, vars, model);
    if (cfg.freeze_classifier) {
      for (auto& layer : grads.classifier) {
        std::fill(layer.weight.data().begin(), layer.weight.data().end(), 0.0f);
        std::fill(layer.bias.data().begin(), layer.bias.data().end(), 0.0f);
      }
    }
    const auto params = model.parameters();
    const auto gptrs = std::as_const(grads).parameters();
    adam_step(params, gptrs, state, opts);
  }
  report.kept_fraction = cfg.adapt_steps ? kept_sum / static_cast<double>(cfg.adapt_steps) : 0.0;

  const Tensor diag_feats = diagnostic_target_features(target_images, initial.neighborhood, cfg);
  const SourceSummary empty_summary{};
  report.diagnostics = compute_bound_diagnostics(source_summary ? *source_summary : empty_summary, gmm,
                                                 embed_features(initial, diag_feats),
                                                 embed_features(model, diag_feats), initial, cfg);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  result.model = std::move(model);
  return result;
}

void write_report_csv(const std::filesystem::path& path, const AdaptationReport& report) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os << "step,ce,swd,total\n";
  for (const auto& r : report.steps) {
    os << r.step << ',' << format_double(r.ce) << ',' << format_double(r.swd) << ',' << format_double(r.total)
       << '\n';
  }
  if (!os) throw Error("write failed: " + path.string());
}

std::vector<StepRecord> read_report_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != "step,ce,swd,total") throw FormatError("report CSV: bad header");
  std::vector<StepRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream in(line);
    std::string f[4];
    for (auto& field : f) {
      if (!std::getline(in, field, ',')) throw FormatError("report CSV: short row");
    }
    out.push_back({static_cast<std::size_t>(parse_uint("step", f[0])), parse_double("ce", f[1]),
                   parse_double("swd", f[2]), parse_double("total", f[3])});
  }
  return out;
}

namespace {

void put_distance(KeyValues& kv, const std::string& prefix, const DistanceEstimate& d) {
  kv.set(prefix + "_exact", d.exact);
  kv.set(prefix + "_exact_se", d.exact_se);
  kv.set(prefix + "_sliced", d.sliced);
}

DistanceEstimate get_distance(const KeyValues& kv, const std::string& prefix) {
  DistanceEstimate d;
  d.exact = parse_double(prefix + "_exact", kv.require(prefix + "_exact"));
  d.exact_se = parse_double(prefix + "_exact_se", kv.require(prefix + "_exact_se"));
  d.sliced = parse_double(prefix + "_sliced", kv.require(prefix + "_sliced"));
  return d;
}

std::string format_scores(const std::vector<double>& iou) {
  std::string out;
  for (std::size_t i = 0; i < iou.size(); ++i) {
    if (i) out += ',';
    out += std::isnan(iou[i]) ? std::string("undefined") : format_double(iou[i]);
  }
  return out;
}

}  // namespace

KeyValues summary_to_keyvalues(const AdaptationReport& report) {
  KeyValues kv;
  const auto& d = report.diagnostics;
  kv.set("steps", static_cast<unsigned long long>(report.steps.size()));
  if (!report.steps.empty()) {
    kv.set("final_ce", report.steps.back().ce);
    kv.set("final_swd", report.steps.back().swd);
    kv.set("final_total", report.steps.back().total);
  }
  kv.set("kept_fraction", report.kept_fraction);
  put_distance(kv, "w_sp", d.w_sp);
  put_distance(kv, "w_tp_pre", d.w_tp_pre);
  put_distance(kv, "w_tp_post", d.w_tp_post);
  kv.set("one_minus_tau", d.one_minus_tau);
  kv.set("e_source", d.e_source);
  kv.set("e_target_pre", d.e_target_pre ? format_double(*d.e_target_pre) : std::string("unavailable"));
  kv.set("e_target_post", d.e_target_post ? format_double(*d.e_target_post) : std::string("unavailable"));
  kv.set("n_source", static_cast<unsigned long long>(d.n_source));
  kv.set("n_target", static_cast<unsigned long long>(d.n_target));
  kv.set("n_pseudo", static_cast<unsigned long long>(d.n_pseudo));
  if (report.pre) {
    kv.set("miou_pre", report.pre->miou);
    kv.set("iou_pre", format_scores(report.pre->iou));
  }
  if (report.post) {
    kv.set("miou_post", report.post->miou);
    kv.set("iou_post", format_scores(report.post->iou));
  }
  kv.set("wall_seconds", report.wall_seconds);
  return kv;
}

KeyValues source_summary_to_keyvalues(const SourceSummary& s) {
  KeyValues kv;
  put_distance(kv, "w_sp", s.w_sp);
  kv.set("e_source", s.e_source);
  kv.set("n_source", static_cast<unsigned long long>(s.n_source));
  std::string counts;
  for (std::size_t i = 0; i < s.support_counts.size(); ++i) counts += (i ? "," : "") + std::to_string(s.support_counts[i]);
  kv.set("support_counts", counts);
  return kv;
}

SourceSummary source_summary_from_keyvalues(const KeyValues& kv) {
  SourceSummary s;
  s.w_sp = get_distance(kv, "w_sp");
  s.e_source = parse_double("e_source", kv.require("e_source"));
  s.n_source = static_cast<std::size_t>(parse_uint("n_source", kv.require("n_source")));
  if (auto v = kv.get("support_counts")) {
    for (double c : parse_double_list("support_counts", *v)) s.support_counts.push_back(static_cast<std::size_t>(c));
  }
  return s;
}

void write_embedding_export(const std::filesystem::path& path, const Tensor& embeddings,
                            std::span<const int> true_labels, std::span<const int> predicted) {
  require_rank(embeddings, 2, "embedding export");
  const std::size_t n = embeddings.rows(), d = embeddings.cols();
  if (true_labels.size() != n || predicted.size() != n) throw DimensionError("embedding export: label count mismatch");
  Tensor out({n, d + 2});
  for (std::size_t r = 0; r < n; ++r) {
    auto src = embeddings.row(r);
    auto dst = out.row(r);
    std::copy(src.begin(), src.end(), dst.begin());
    dst[d] = static_cast<float>(true_labels[r]);
    dst[d + 1] = static_cast<float>(predicted[r]);
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  io::write_magic(os, kEmbeddingMagic);
  io::write_tensor(os, out);
  if (!os) throw Error("write failed: " + path.string());
}

Tensor read_embedding_export(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  io::expect_magic(is, kEmbeddingMagic, "EMB1");
  Tensor t = io::read_tensor(is);
  if (t.rank() != 2 || t.dim(1) < 3) throw FormatError("EMB1: expected an [n x (d+2)] tensor");
  return t;
}

EmbeddingSample sample_embeddings(const SegModel& model, const LabeledImages& data, std::size_t max_rows,
                                  std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t per = data.images.dim(1) * data.images.dim(2);
  const std::size_t want_images = std::min(data.count(), (max_rows + per - 1) / per * 2);
  auto idx = sample_without_replacement(data.count(), want_images, rng);
  std::sort(idx.begin(), idx.end());
  const Tensor emb = flatten_embeddings(forward_embed(model, gather_images(data.images, idx)));
  auto rows = sample_without_replacement(emb.rows(), max_rows, rng);
  std::sort(rows.begin(), rows.end());
  EmbeddingSample out;
  out.embeddings = gather_rows(emb, rows);
  out.predicted = argmax_rows(forward_classify(model, out.embeddings));
  if (data.has_labels()) {
    const auto truth = gather_labels(labels_to_indices(data.labels, model.num_classes), per, idx);
    for (auto r : rows) out.truth.push_back(truth[r]);
  } else {
    out.truth.assign(rows.size(), -1);
  }
  return out;
}

}  // namespace protoadapt
