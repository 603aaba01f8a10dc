#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "protoadapt/datasets.hpp"
#include "protoadapt/gmm.hpp"
#include "protoadapt/keyval.hpp"
#include "protoadapt/model.hpp"
#include "protoadapt/swd.hpp"

namespace protoadapt {

/// Every knob of the train / estimate / adapt workflow.
struct ExperimentConfig {
  double tau_fit = 0.97;
  double tau_filter = 0.97;
  double lambda = 0.5;
  std::size_t num_projections = 100;
  std::size_t source_steps = 2000;
  std::size_t adapt_steps = 500;
  std::size_t batch_source = 4;
  std::size_t batch_target = 2;
  std::size_t pseudo_batch = 512;
  double lr = 1e-4;
  double adapt_lr = 1e-4;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  std::size_t num_classes = 0;  // 0 means one more than the largest source label
  bool neighborhood = true;
  std::vector<std::size_t> encoder_widths{64, 32};
  std::size_t embed_dim = 0;  // 0 means the class count
  std::size_t max_draw_factor = 20;
  bool freeze_classifier = false;
  Equalization equalization = Equalization::Subsample;
  std::size_t diag_subsample = 64;   // points per exact-matching estimate
  std::size_t diag_resamples = 10;   // exact-matching repetitions
  std::size_t diag_batch = 2048;     // points per sliced estimate
  std::size_t threads = 1;
  std::string dataset;

  void validate() const;
};

KeyValues config_to_keyvalues(const ExperimentConfig& cfg);
/// Overlays the keys in `kv` on `base`; unknown keys are a UsageError.
ExperimentConfig config_from_keyvalues(const KeyValues& kv, ExperimentConfig base = {});

// --- source phase -----------------------------------------------------------

struct TrainLog {
  std::vector<double> losses;  // one per step
};

/// Adam on the mean per-pixel cross-entropy over random source batches.
/// Zero steps returns the initialised model. A NaN loss throws
/// DivergenceError with the step index.
SegModel train_source(const ExperimentConfig& cfg, const LabeledImages& source, TrainLog* log = nullptr);

/// Same, continuing from an existing model.
SegModel train_source(const ExperimentConfig& cfg, const LabeledImages& source, SegModel model, TrainLog* log);

struct DistanceEstimate {
  double exact = 0.0;     // mean exact matching cost over resamples
  double exact_se = 0.0;  // standard error of that mean
  double sliced = 0.0;    // sliced estimate on full batches
};

/// Squared transport distance between two embedding clouds: exact matching
/// on `cfg.diag_resamples` subsamples of `cfg.diag_subsample` points, plus a
/// sliced estimate on up to `cfg.diag_batch` points per side.
DistanceEstimate measure_distance(const Tensor& a, const Tensor& b, const ExperimentConfig& cfg, Rng& rng);

/// Pseudo samples used for every distance diagnostic of a run. Depends only
/// on (gmm, classifier, cfg.seed).
PseudoDataset diagnostic_pseudo_samples(const PrototypicalGMM& gmm, const SegModel& classifier,
                                        const ExperimentConfig& cfg);

/// What the source phase hands to adaptation besides the mixture itself.
struct SourceSummary {
  DistanceEstimate w_sp;
  double e_source = 0.0;
  std::size_t n_source = 0;  // source pixels
  std::vector<std::size_t> support_counts;
};

struct EstimationResult {
  PrototypicalGMM gmm;
  SourceSummary summary;
};

/// Builds support sets at cfg.tau_fit, fits the mixture and measures the
/// source-to-prototype distance. This is the last step that sees source data.
EstimationResult estimate_prototypes(const SegModel& model, const LabeledImages& source,
                                     const ExperimentConfig& cfg);

// --- adaptation -------------------------------------------------------------

struct StepRecord {
  std::size_t step = 0;
  double ce = 0.0;
  double swd = 0.0;
  double total = 0.0;
};

struct SegmentationScores {
  std::vector<double> iou;  // NaN where the class is absent from prediction and truth
  double miou = 0.0;
  double pixel_accuracy = 0.0;
  std::vector<std::uint64_t> confusion;  // [K x K], row = truth, column = prediction
};

/// Observable terms of the target error bound. Error fields are filled only
/// when labeled target data is scored after adaptation.
struct BoundDiagnostics {
  DistanceEstimate w_sp;
  DistanceEstimate w_tp_pre;
  DistanceEstimate w_tp_post;
  double one_minus_tau = 0.0;
  double e_source = 0.0;
  std::optional<double> e_target_pre;
  std::optional<double> e_target_post;
  std::size_t n_source = 0;
  std::size_t n_target = 0;
  std::size_t n_pseudo = 0;
};

struct AdaptationReport {
  std::vector<StepRecord> steps;
  std::optional<SegmentationScores> pre;
  std::optional<SegmentationScores> post;
  BoundDiagnostics diagnostics;
  double kept_fraction = 0.0;  // mean over steps
  double wall_seconds = 0.0;
};

struct AdaptationResult {
  SegModel model;
  AdaptationReport report;
};

/// Source-free adaptation: per step, a target batch is embedded, a pseudo
/// batch is drawn from the mixture and labeled by the initial classifier,
/// and encoder, decoder and classifier take an Adam step on
/// ce(pseudo) + lambda * sliced_w2(target embeddings, pseudo points).
AdaptationResult adapt_source_free(const SegModel& model, const PrototypicalGMM& gmm,
                                   const Tensor& target_images, const ExperimentConfig& cfg,
                                   const SourceSummary* source_summary = nullptr);

/// Per-class IoU = TP / (TP + FP + FN) over all pixels; classes absent from
/// both prediction and truth are NaN and left out of the mean.
SegmentationScores score_predictions(std::span<const int> predicted, std::span<const int> truth,
                                     std::size_t num_classes);
SegmentationScores evaluate_miou(const SegModel& model, const LabeledImages& data);

/// Fills w_tp_pre / w_tp_post and the remaining bound terms.
BoundDiagnostics compute_bound_diagnostics(const SourceSummary& source, const PrototypicalGMM& gmm,
                                           const Tensor& target_embeddings_pre,
                                           const Tensor& target_embeddings_post,
                                           const SegModel& initial_model, const ExperimentConfig& cfg);

// --- reports and exports ----------------------------------------------------

/// CSV with header "step,ce,swd,total".
void write_report_csv(const std::filesystem::path& path, const AdaptationReport& report);
std::vector<StepRecord> read_report_csv(const std::filesystem::path& path);

KeyValues summary_to_keyvalues(const AdaptationReport& report);
KeyValues source_summary_to_keyvalues(const SourceSummary& s);
SourceSummary source_summary_from_keyvalues(const KeyValues& kv);

/// EMB1: "EMB1" then one TNS1 tensor [n x (d+2)] holding the embedding, the
/// true label (-1 when unknown) and the predicted label of each row.
void write_embedding_export(const std::filesystem::path& path, const Tensor& embeddings,
                            std::span<const int> true_labels, std::span<const int> predicted);
Tensor read_embedding_export(const std::filesystem::path& path);

/// Embeddings of up to `max_rows` pixels chosen deterministically from `seed`.
struct EmbeddingSample {
  Tensor embeddings;
  std::vector<int> truth;      // -1 when the data is unlabeled
  std::vector<int> predicted;
};
EmbeddingSample sample_embeddings(const SegModel& model, const LabeledImages& data, std::size_t max_rows,
                                  std::uint64_t seed);

}  // namespace protoadapt
