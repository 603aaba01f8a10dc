// protoadapt: command-line driver for the source-free adaptation workflow.
//
//   gen-data           write source / target_train / target_eval splits
//   train              supervised training on the labeled source split
//   estimate           fit the per-class embedding mixture (last use of source data)
//   adapt              adapt a checkpoint using the mixture and unlabeled target images
//   eval               per-class IoU and mIoU on a labeled split
//   diagnose           print the distance and error terms of an adaptation run
//   export-embeddings  write EMB1 embedding dumps for plotting

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "protoadapt/adaptation.hpp"
#include "protoadapt/datasets.hpp"
#include "protoadapt/errors.hpp"
#include "protoadapt/kernels.hpp"
#include "protoadapt/tensor_io.hpp"
#include "protoadapt/workflow.hpp"

namespace fs = std::filesystem;
using namespace protoadapt;

namespace {

constexpr std::size_t kExportRows = 2048;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  bool force = false;
};

void add_common(CLI::App* cmd, Common& c, bool with_config = true) {
  if (with_config) cmd->add_option("--config", c.config, "key=value config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "run seed (overrides the config)");
  cmd->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_flag("--force", c.force, "overwrite existing outputs");
}

ExperimentConfig resolve_config(const Common& c) {
  ExperimentConfig cfg;
  if (!c.config.empty()) cfg = config_from_keyvalues(KeyValues::load(c.config));
  if (c.seed) cfg.seed = *c.seed;
  cfg.threads = c.threads;
  cfg.validate();
  kernels::set_num_threads(static_cast<int>(cfg.threads));
  return cfg;
}

fs::path sibling(const fs::path& file, const std::string& suffix) {
  fs::path p = file;
  p += suffix;
  return p;
}

void prepare_file(const fs::path& path, bool force) {
  if (fs::exists(path) && !force) throw UsageError(path.string() + " exists (use --force to overwrite)");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

void prepare_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_directory(dir)) throw UsageError(dir.string() + " is not a directory");
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) throw UsageError(dir.string() + " is not empty (use --force to overwrite)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

std::string format_iou(const std::vector<double>& iou) {
  std::string out;
  for (std::size_t c = 0; c < iou.size(); ++c) {
    char buf[48];
    if (std::isnan(iou[c])) std::snprintf(buf, sizeof buf, "  class %zu: undefined\n", c);
    else std::snprintf(buf, sizeof buf, "  class %zu: %.4f\n", c, iou[c]);
    out += buf;
  }
  return out;
}

// --- gen-data ---------------------------------------------------------------

struct GenArgs {
  std::string spec, preset, out;
  std::optional<std::uint64_t> seed;
  bool force = false;
};

int run_gen_data(const GenArgs& a) {
  DomainSpec spec;
  if (!a.spec.empty()) {
    spec = domain_spec_from_keyvalues(KeyValues::load(a.spec));
  } else if (a.preset == "standard-shift") {
    spec = standard_shift_preset();
  } else if (a.preset == "no-shift") {
    spec = no_shift_preset();
  } else {
    throw UsageError("unknown preset '" + a.preset + "' (standard-shift, no-shift)");
  }
  if (a.seed) spec.seed = *a.seed;
  spec.validate();
  prepare_dir(a.out, a.force);
  write_dataset(a.out, spec);
  std::cout << KeyValues::load(fs::path(a.out) / "manifest.txt").str();
  return kExitOk;
}

// --- train ------------------------------------------------------------------

struct TrainArgs {
  Common common;
  std::string data, out;
  std::optional<std::size_t> steps;
  std::optional<double> lr;
};

int run_train(const TrainArgs& a) {
  ExperimentConfig cfg = resolve_config(a.common);
  if (a.steps) cfg.source_steps = *a.steps;
  if (a.lr) cfg.lr = *a.lr;
  cfg.validate();
  const fs::path dir = resolve_split(a.data, kSourceSplit);
  const LabeledImages source = read_split(dir, true);
  const fs::path out = a.out;
  prepare_file(out, a.common.force);

  TrainLog log;
  const SegModel model = train_source(cfg, source, &log);
  save_model(out, model);
  std::ofstream csv(sibling(out, ".train.csv"), std::ios::trunc);
  csv << "step,loss\n";
  for (std::size_t i = 0; i < log.losses.size(); ++i) csv << i << ',' << format_double(log.losses[i]) << '\n';
  KeyValues echo = config_to_keyvalues(cfg);
  echo.set("data", normalized_path(dir).string());
  echo.save(sibling(out, ".config.txt"));

  std::cout << "trained " << cfg.source_steps << " steps on " << source.count() << " images";
  if (!log.losses.empty()) std::cout << ", final loss " << log.losses.back();
  std::cout << "\ncheckpoint: " << out.string() << '\n';
  return kExitOk;
}

// --- estimate ---------------------------------------------------------------

struct EstimateArgs {
  Common common;
  std::string ckpt, data, out;
  std::optional<double> tau;
};

int run_estimate(const EstimateArgs& a) {
  ExperimentConfig cfg = resolve_config(a.common);
  if (a.tau) cfg.tau_fit = cfg.tau_filter = *a.tau;
  cfg.validate();
  const SegModel model = load_model(a.ckpt);
  const fs::path dir = resolve_split(a.data, kSourceSplit);
  const LabeledImages source = read_split(dir, true);
  const fs::path out = a.out;
  prepare_file(out, a.common.force);

  EstimationResult est;
  try {
    est = estimate_prototypes(model, source, cfg);
  } catch (const EstimationError& e) {
    std::cerr << "estimation failed for class " << e.class_index() << ": " << e.what() << '\n';
    return kExitEstimation;
  }
  save_gmm(out, est.gmm);
  GmmManifest manifest;
  manifest.source_dir = dir;
  manifest.source_images_fingerprint = io::file_fingerprint(dir / "images.tns1");
  manifest.tau_fit = cfg.tau_fit;
  manifest.summary = est.summary;
  save_gmm_manifest(out, manifest);
  config_to_keyvalues(cfg).save(sibling(out, ".config.txt"));

  std::cout << "mixture: " << est.gmm.num_classes << " components in R^" << est.gmm.dim << '\n';
  for (std::size_t j = 0; j < est.summary.support_counts.size(); ++j) {
    std::cout << "  class " << j << ": support " << est.summary.support_counts[j] << ", weight "
              << est.gmm.alpha[j] << '\n';
  }
  std::cout << "source error " << est.summary.e_source << ", w_sp exact " << est.summary.w_sp.exact << " (se "
            << est.summary.w_sp.exact_se << "), sliced " << est.summary.w_sp.sliced << '\n';
  return kExitOk;
}

// --- adapt ------------------------------------------------------------------

struct AdaptArgs {
  Common common;
  std::string ckpt, gmm, target, out;
  std::optional<double> lambda, tau;
  std::optional<std::size_t> iters;
};

int run_adapt(const AdaptArgs& a) {
  ExperimentConfig cfg = resolve_config(a.common);
  if (a.lambda) cfg.lambda = *a.lambda;
  if (a.tau) cfg.tau_filter = *a.tau;
  if (a.iters) cfg.adapt_steps = *a.iters;
  cfg.validate();

  // Guard before any target or model file is read.
  const GmmManifest manifest = load_gmm_manifest(a.gmm);
  check_source_free(a.target, manifest);
  const fs::path target_dir = resolve_split(a.target, kTargetTrainSplit);
  check_source_free(target_dir, manifest);

  const SegModel model = load_model(a.ckpt);
  const PrototypicalGMM gmm = load_gmm(a.gmm);
  const Tensor target = read_split_images(target_dir);
  const fs::path out = a.out;
  prepare_dir(out, a.common.force);

  const AdaptationResult result = adapt_source_free(model, gmm, target, cfg, &manifest.summary);
  save_model(out / "adapted.mdl", result.model);
  write_report_csv(out / "report.csv", result.report);
  KeyValues summary = summary_to_keyvalues(result.report);
  summary.set("initial_checkpoint", normalized_path(a.ckpt).string());
  summary.set("gmm", normalized_path(a.gmm).string());
  summary.set("target", normalized_path(target_dir).string());
  summary.save(out / "summary.txt");
  KeyValues echo = config_to_keyvalues(cfg);
  echo.set("dataset", normalized_path(target_dir).string());
  echo.save(out / "config.txt");

  const PseudoDataset pseudo = diagnostic_pseudo_samples(gmm, model, cfg);
  write_embedding_export(out / "gmm_samples.emb1", pseudo.z, pseudo.components, pseudo.labels);
  LabeledImages unlabeled{target, Tensor{}};
  const EmbeddingSample pre = sample_embeddings(model, unlabeled, kExportRows, cfg.seed);
  const EmbeddingSample post = sample_embeddings(result.model, unlabeled, kExportRows, cfg.seed);
  write_embedding_export(out / "target_pre.emb1", pre.embeddings, pre.truth, pre.predicted);
  write_embedding_export(out / "target_post.emb1", post.embeddings, post.truth, post.predicted);

  const auto& d = result.report.diagnostics;
  std::cout << "adapted " << result.report.steps.size() << " steps in " << result.report.wall_seconds << " s\n";
  if (!result.report.steps.empty()) {
    const auto& last = result.report.steps.back();
    std::cout << "final ce " << last.ce << ", swd " << last.swd << ", total " << last.total << '\n';
  }
  std::cout << "w_tp exact " << d.w_tp_pre.exact << " -> " << d.w_tp_post.exact << ", sliced " << d.w_tp_pre.sliced
            << " -> " << d.w_tp_post.sliced << '\n';
  std::cout << "outputs in " << out.string() << '\n';
  return kExitOk;
}

// --- eval -------------------------------------------------------------------

struct EvalArgs {
  Common common;
  std::string ckpt, data, out;
};

int run_eval(const EvalArgs& a) {
  resolve_config(a.common);
  const SegModel model = load_model(a.ckpt);
  const LabeledImages data = read_split(resolve_split(a.data, kTargetEvalSplit), true);
  const SegmentationScores s = evaluate_miou(model, data);
  std::cout << "per-class IoU:\n" << format_iou(s.iou);
  std::printf("mIoU %.4f\npixel accuracy %.4f\n", s.miou, s.pixel_accuracy);
  if (!a.out.empty()) {
    prepare_file(a.out, a.common.force);
    KeyValues kv;
    kv.set("checkpoint", normalized_path(a.ckpt).string());
    kv.set("miou", s.miou);
    kv.set("pixel_accuracy", s.pixel_accuracy);
    for (std::size_t c = 0; c < s.iou.size(); ++c) {
      kv.set("iou_" + std::to_string(c), std::isnan(s.iou[c]) ? std::string("undefined") : format_double(s.iou[c]));
    }
    kv.save(a.out);
  }
  return kExitOk;
}

// --- diagnose ---------------------------------------------------------------

struct DiagnoseArgs {
  std::string report, eval;
  std::size_t threads = 1;
};

int run_diagnose(const DiagnoseArgs& a) {
  kernels::set_num_threads(static_cast<int>(a.threads));
  const fs::path dir = a.report;
  const fs::path summary_path = dir / "summary.txt";
  if (!fs::exists(summary_path)) throw UsageError("no summary.txt in " + dir.string());
  KeyValues summary = KeyValues::load(summary_path);

  if (!a.eval.empty()) {
    const LabeledImages data = read_split(resolve_split(a.eval, kTargetEvalSplit), true);
    const SegmentationScores pre = evaluate_miou(load_model(summary.require("initial_checkpoint")), data);
    const SegmentationScores post = evaluate_miou(load_model(dir / "adapted.mdl"), data);
    summary.set("e_target_pre", 1.0 - pre.pixel_accuracy);
    summary.set("e_target_post", 1.0 - post.pixel_accuracy);
    summary.set("miou_pre", pre.miou);
    summary.set("miou_post", post.miou);
    summary.save(summary_path);
  }

  const std::vector<std::string> keys = {
      "w_sp_exact",     "w_sp_exact_se",  "w_sp_sliced",   "w_tp_pre_exact", "w_tp_pre_exact_se",
      "w_tp_pre_sliced", "w_tp_post_exact", "w_tp_post_exact_se", "w_tp_post_sliced", "one_minus_tau",
      "e_source",       "e_target_pre",   "e_target_post", "miou_pre",       "miou_post",
      "n_source",       "n_target",       "n_pseudo",      "kept_fraction"};
  for (const auto& k : keys) {
    if (auto v = summary.get(k)) std::cout << k << " = " << *v << '\n';
  }
  return kExitOk;
}

// --- export-embeddings ------------------------------------------------------

struct ExportArgs {
  Common common;
  std::string ckpt, data, out, gmm, adapted;
  std::size_t rows = kExportRows;
};

int run_export(const ExportArgs& a) {
  const ExperimentConfig cfg = resolve_config(a.common);
  const SegModel model = load_model(a.ckpt);
  const LabeledImages data = read_split(resolve_split(a.data, kTargetEvalSplit), false);
  const fs::path out = a.out;
  prepare_dir(out, a.common.force);

  const EmbeddingSample pre = sample_embeddings(model, data, a.rows, cfg.seed);
  write_embedding_export(out / "target_pre.emb1", pre.embeddings, pre.truth, pre.predicted);
  std::cout << out / "target_pre.emb1" << '\n';
  if (!a.adapted.empty()) {
    const EmbeddingSample post = sample_embeddings(load_model(a.adapted), data, a.rows, cfg.seed);
    write_embedding_export(out / "target_post.emb1", post.embeddings, post.truth, post.predicted);
    std::cout << out / "target_post.emb1" << '\n';
  }
  if (!a.gmm.empty()) {
    ExperimentConfig c = cfg;
    c.diag_batch = a.rows;
    const PseudoDataset pseudo = diagnostic_pseudo_samples(load_gmm(a.gmm), model, c);
    write_embedding_export(out / "gmm_samples.emb1", pseudo.z, pseudo.components, pseudo.labels);
    std::cout << out / "gmm_samples.emb1" << '\n';
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Source-free domain adaptation with a prototypical embedding mixture"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic dataset");
  auto* spec_opt = gen_cmd->add_option("--spec", gen.spec, "dataset spec file")->check(CLI::ExistingFile);
  gen_cmd->add_option("--preset", gen.preset, "standard-shift or no-shift")->excludes(spec_opt);
  gen_cmd->add_option("--out", gen.out, "output directory")->required();
  gen_cmd->add_option("--seed", gen.seed, "override the spec seed");
  gen_cmd->add_flag("--force", gen.force, "replace an existing directory");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train on the labeled source split");
  add_common(train_cmd, train.common);
  train_cmd->add_option("--data", train.data, "dataset root or source split")->required();
  train_cmd->add_option("--out", train.out, "checkpoint path")->required();
  train_cmd->add_option("--steps", train.steps, "source training steps");
  train_cmd->add_option("--lr", train.lr, "learning rate");

  EstimateArgs est;
  auto* est_cmd = app.add_subcommand("estimate", "fit the prototypical mixture on source embeddings");
  add_common(est_cmd, est.common);
  est_cmd->add_option("--ckpt", est.ckpt, "trained checkpoint")->required()->check(CLI::ExistingFile);
  est_cmd->add_option("--data", est.data, "dataset root or source split")->required();
  est_cmd->add_option("--tau", est.tau, "confidence threshold");
  est_cmd->add_option("--out", est.out, "mixture file")->required();

  AdaptArgs adapt;
  auto* adapt_cmd = app.add_subcommand("adapt", "adapt to unlabeled target images");
  add_common(adapt_cmd, adapt.common);
  adapt_cmd->add_option("--ckpt", adapt.ckpt, "source checkpoint")->required()->check(CLI::ExistingFile);
  adapt_cmd->add_option("--gmm", adapt.gmm, "mixture file")->required()->check(CLI::ExistingFile);
  adapt_cmd->add_option("--target", adapt.target, "unlabeled target split")->required();
  adapt_cmd->add_option("--lambda", adapt.lambda, "weight of the distribution matching term");
  adapt_cmd->add_option("--tau", adapt.tau, "pseudo-sample confidence threshold");
  adapt_cmd->add_option("--iters", adapt.iters, "adaptation steps");
  adapt_cmd->add_option("--out", adapt.out, "output directory")->required();

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on a labeled split");
  add_common(eval_cmd, eval.common, false);
  eval_cmd->add_option("--ckpt", eval.ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", eval.data, "dataset root or labeled split")->required();
  eval_cmd->add_option("--out", eval.out, "write scores as key=value");

  DiagnoseArgs diag;
  auto* diag_cmd = app.add_subcommand("diagnose", "print diagnostics of an adaptation run");
  diag_cmd->add_option("--report", diag.report, "adapt output directory")->required()->check(CLI::ExistingDirectory);
  diag_cmd->add_option("--eval", diag.eval, "labeled target split for error terms");
  diag_cmd->add_option("--threads", diag.threads, "worker threads")->check(CLI::PositiveNumber);

  ExportArgs exp;
  auto* exp_cmd = app.add_subcommand("export-embeddings", "write EMB1 embedding dumps");
  add_common(exp_cmd, exp.common, false);
  exp_cmd->add_option("--ckpt", exp.ckpt, "source checkpoint")->required()->check(CLI::ExistingFile);
  exp_cmd->add_option("--data", exp.data, "dataset root or split")->required();
  exp_cmd->add_option("--out", exp.out, "output directory")->required();
  exp_cmd->add_option("--gmm", exp.gmm, "mixture file for pseudo samples")->check(CLI::ExistingFile);
  exp_cmd->add_option("--adapted", exp.adapted, "adapted checkpoint")->check(CLI::ExistingFile);
  exp_cmd->add_option("--rows", exp.rows, "rows per export")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*gen_cmd) {
      if (gen.spec.empty() && gen.preset.empty()) throw UsageError("gen-data needs --spec or --preset");
      return run_gen_data(gen);
    }
    if (*train_cmd) return run_train(train);
    if (*est_cmd) return run_estimate(est);
    if (*adapt_cmd) return run_adapt(adapt);
    if (*eval_cmd) return run_eval(eval);
    if (*diag_cmd) return run_diagnose(diag);
    if (*exp_cmd) return run_export(exp);
  } catch (const EstimationError& e) {
    std::cerr << "error: class " << e.class_index() << ": " << e.what() << '\n';
    return kExitEstimation;
  } catch (const DivergenceError& e) {
    std::cerr << "error: diverged at step " << e.step() << ": " << e.what() << '\n';
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kExitUsage;
}
