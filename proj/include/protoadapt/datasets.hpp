#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "protoadapt/keyval.hpp"
#include "protoadapt/tensor.hpp"

namespace protoadapt {

enum class DomainKind { Blobs, GridSeg };

/// Appearance change applied to the target domain.
struct DomainShift {
  double mean_shift = 0.0;       // added to every channel
  double rotation = 0.0;         // radians, in the plane of channels 0 and 1
  std::vector<double> gain;      // per-channel multiplier; empty means 1
  double noise_sigma = 0.0;      // additive Gaussian noise
  double texture = 0.0;          // amplitude of a per-image sinusoidal pattern (grid-seg)

  bool is_zero() const;
};

struct DomainSpec {
  DomainKind kind = DomainKind::GridSeg;
  std::size_t num_classes = 5;
  std::size_t channels = 3;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t tile = 4;            // grid-seg cell size
  std::size_t n_train = 2000;      // source and unlabeled target images (points for blobs)
  std::size_t n_eval = 500;        // labeled target evaluation images
  double class_noise = 0.05;       // within-class spread in the source domain
  std::vector<double> class_priors;  // grid-seg tile class probabilities; empty means default
  std::vector<double> palette;       // [K x channels] colours / blob centres; empty means default
  DomainShift shift;
  std::uint64_t seed = 0;
  std::string preset;

  std::vector<double> resolved_priors() const;
  std::vector<double> resolved_palette() const;
  void validate() const;
};

/// Frozen "standard synthetic shift" preset (version 1): grid-seg, K=5,
/// 16x16, 2000 train / 500 eval images, channel gain (1.4, 0.7, 1.0),
/// noise 0.1.
DomainSpec standard_shift_preset();

/// The same preset with the shift removed.
DomainSpec no_shift_preset();

enum class Domain { Source, Target };

/// Images [n x H x W x C] with labels [n x H x W]; `labels` is empty for
/// unlabeled splits.
struct LabeledImages {
  Tensor images;
  Tensor labels;

  std::size_t count() const { return images.empty() ? 0 : images.dim(0); }
  bool has_labels() const { return !labels.empty(); }
};

/// K Gaussian clusters in R^C around the palette centres, stored as 1x1
/// images. Labels cycle 0..K-1 so classes are balanced.
LabeledImages gen_blobs(const DomainSpec& spec, Domain domain, std::size_t n, std::uint64_t seed);

/// Tiled scenes: each tile holds one axis-aligned rectangle or ellipse of a
/// class drawn from the tile priors over a background (class 0). Content is
/// a function of (seed, image index) only, so source and target variants of
/// the same seed share layouts.
LabeledImages gen_grid_seg(const DomainSpec& spec, Domain domain, std::size_t n, std::uint64_t seed);

LabeledImages generate(const DomainSpec& spec, Domain domain, std::size_t n, std::uint64_t seed);

/// Expected fraction of pixels of each class under the grid-seg generator.
std::vector<double> expected_class_frequencies(const DomainSpec& spec);

KeyValues domain_spec_to_keyvalues(const DomainSpec& spec);
/// Throws UsageError naming the first unknown or malformed key.
DomainSpec domain_spec_from_keyvalues(const KeyValues& kv);

// --- on-disk splits ---------------------------------------------------------

inline constexpr const char* kSourceSplit = "source";
inline constexpr const char* kTargetTrainSplit = "target_train";
inline constexpr const char* kTargetEvalSplit = "target_eval";
inline constexpr int kDatasetFormatVersion = 1;

/// Writes manifest.txt, images.tns1 and (when labeled) labels.tns1.
void write_split(const std::filesystem::path& dir, const LabeledImages& data, const DomainSpec& spec,
                 const std::string& split, std::uint64_t split_seed);

/// Reads a split. With `require_labels` a missing labels file is a UsageError.
LabeledImages read_split(const std::filesystem::path& dir, bool require_labels);

/// Reads images only; never opens labels.tns1.
Tensor read_split_images(const std::filesystem::path& dir);

/// Seed of each split derived from the spec seed.
std::uint64_t split_seed(const DomainSpec& spec, const std::string& split);

/// Writes source/, target_train/ (unlabeled) and target_eval/ under `root`
/// plus a top-level manifest.txt.
void write_dataset(const std::filesystem::path& root, const DomainSpec& spec);

}  // namespace protoadapt
