#include "protoadapt/datasets.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

#include "protoadapt/errors.hpp"
#include "protoadapt/rng.hpp"
#include "protoadapt/tensor_io.hpp"

namespace protoadapt {

namespace {

constexpr std::uint64_t kTargetStream = 0x7461726765740000ULL;

// Shape sizes inside a tile run from tile/2 to tile inclusive.
std::size_t min_extent(std::size_t tile) { return std::max<std::size_t>(1, tile / 2); }

bool inside_ellipse(std::size_t px, std::size_t py, std::size_t w, std::size_t h) {
  const double cx = 0.5 * static_cast<double>(w);
  const double cy = 0.5 * static_cast<double>(h);
  const double dx = (static_cast<double>(px) + 0.5 - cx) / cx;
  const double dy = (static_cast<double>(py) + 0.5 - cy) / cy;
  return dx * dx + dy * dy <= 1.0;
}

std::size_t draw_category(const std::vector<double>& cumulative, Rng& rng) {
  const double u = rng.uniform() * cumulative.back();
  std::size_t c = 0;
  while (c + 1 < cumulative.size() && u >= cumulative[c]) ++c;
  return c;
}

struct TargetTransform {
  const DomainShift& shift;
  std::size_t channels;

  // Pixel-independent part: rotation, gain, mean shift.
  void apply(float* px) const {
    double v[16];
    for (std::size_t c = 0; c < channels; ++c) v[c] = px[c];
    if (channels >= 2 && shift.rotation != 0.0) {
      const double cr = std::cos(shift.rotation), sr = std::sin(shift.rotation);
      const double a = v[0], b = v[1];
      v[0] = cr * a - sr * b;
      v[1] = sr * a + cr * b;
    }
    for (std::size_t c = 0; c < channels; ++c) {
      const double g = c < shift.gain.size() ? shift.gain[c] : 1.0;
      px[c] = static_cast<float>(g * v[c] + shift.mean_shift);
    }
  }
};

}  // namespace

bool DomainShift::is_zero() const {
  for (double g : gain) {
    if (g != 1.0) return false;
  }
  return mean_shift == 0.0 && rotation == 0.0 && noise_sigma == 0.0 && texture == 0.0;
}

std::vector<double> DomainSpec::resolved_priors() const {
  if (!class_priors.empty()) return class_priors;
  std::vector<double> p(num_classes, 0.8 / static_cast<double>(num_classes - 1));
  p[0] = 0.2;
  return p;
}

std::vector<double> DomainSpec::resolved_palette() const {
  if (!palette.empty()) return palette;
  std::vector<double> out(num_classes * channels, 0.0);
  if (kind == DomainKind::Blobs) {
    for (std::size_t k = 0; k < num_classes; ++k) {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(num_classes);
      out[k * channels] = 3.0 * std::cos(angle);
      if (channels > 1) out[k * channels + 1] = 3.0 * std::sin(angle);
    }
    return out;
  }
  if (num_classes == 5 && channels == 3) {
    return {0.25, 0.25, 0.25,   // background
            0.70, 0.20, 0.20,   //
            0.20, 0.70, 0.20,   //
            0.20, 0.20, 0.70,   //
            0.60, 0.60, 0.20};
  }
  for (std::size_t k = 0; k < num_classes; ++k) {
    for (std::size_t c = 0; c < channels; ++c) {
      if (k == 0) {
        out[c] = 0.25;
        continue;
      }
      const double phase = 2.0 * std::numbers::pi *
                           (static_cast<double>(k - 1) / static_cast<double>(num_classes - 1) +
                            static_cast<double>(c) / static_cast<double>(channels));
      out[k * channels + c] = 0.45 + 0.3 * std::cos(phase);
    }
  }
  return out;
}

void DomainSpec::validate() const {
  if (num_classes < 2) throw UsageError("num_classes must be at least 2");
  if (channels == 0 || channels > 16) throw UsageError("channels must be in [1, 16]");
  if (kind == DomainKind::GridSeg) {
    if (height == 0 || width == 0 || tile == 0) throw UsageError("image size and tile must be positive");
  }
  if (!class_priors.empty() && class_priors.size() != num_classes) {
    throw UsageError("class_priors needs one value per class");
  }
  if (!palette.empty() && palette.size() != num_classes * channels) {
    throw UsageError("palette needs num_classes * channels values");
  }
  if (!shift.gain.empty() && shift.gain.size() != channels) throw UsageError("gain needs one value per channel");
  auto finite = [](double v) { return std::isfinite(v); };
  if (!finite(shift.mean_shift) || !finite(shift.rotation) || !finite(shift.noise_sigma) ||
      !finite(shift.texture) || !finite(class_noise)) {
    throw UsageError("shift parameters must be finite");
  }
  for (double g : shift.gain) {
    if (!finite(g)) throw UsageError("gain must be finite");
  }
}

DomainSpec standard_shift_preset() {
  DomainSpec s;
  s.kind = DomainKind::GridSeg;
  s.num_classes = 5;
  s.channels = 3;
  s.height = 16;
  s.width = 16;
  s.n_train = 2000;
  s.n_eval = 500;
  s.shift.gain = {1.4, 0.7, 1.0};
  s.shift.noise_sigma = 0.1;
  s.shift.texture = 0.03;
  s.seed = 1;
  s.preset = "standard-shift-v1";
  return s;
}

DomainSpec no_shift_preset() {
  DomainSpec s = standard_shift_preset();
  s.shift = DomainShift{};
  s.preset = "no-shift-v1";
  return s;
}

LabeledImages gen_blobs(const DomainSpec& spec, Domain domain, std::size_t n, std::uint64_t seed) {
  spec.validate();
  const std::size_t c = spec.channels;
  const auto centres = spec.resolved_palette();
  LabeledImages out{Tensor({n, 1, 1, c}), Tensor({n, 1, 1})};
  const Rng base(seed);
  const TargetTransform transform{spec.shift, c};
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = base.derive(i);
    const std::size_t k = i % spec.num_classes;
    out.labels[i] = static_cast<float>(k);
    float* px = out.images.data().data() + i * c;
    for (std::size_t ch = 0; ch < c; ++ch) {
      px[ch] = static_cast<float>(centres[k * c + ch] + spec.class_noise * rng.normal());
    }
    if (domain == Domain::Target) {
      Rng perturb = base.derive(i ^ kTargetStream);
      transform.apply(px);
      for (std::size_t ch = 0; ch < c; ++ch) {
        px[ch] = static_cast<float>(px[ch] + spec.shift.noise_sigma * perturb.normal());
      }
    }
  }
  return out;
}

LabeledImages gen_grid_seg(const DomainSpec& spec, Domain domain, std::size_t n, std::uint64_t seed) {
  spec.validate();
  const std::size_t h = spec.height, w = spec.width, c = spec.channels, tile = spec.tile;
  const auto palette = spec.resolved_palette();
  auto priors = spec.resolved_priors();
  std::vector<double> cumulative(priors.size());
  std::partial_sum(priors.begin(), priors.end(), cumulative.begin());
  const std::size_t lo = min_extent(tile);

  LabeledImages out{Tensor({n, h, w, c}), Tensor({n, h, w})};
  const Rng base(seed);
  const TargetTransform transform{spec.shift, c};

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    Rng rng = base.derive(i);
    float* labels = out.labels.data().data() + i * h * w;
    float* image = out.images.data().data() + i * h * w * c;
    for (std::size_t ty = 0; ty < h; ty += tile) {
      for (std::size_t tx = 0; tx < w; tx += tile) {
        const std::size_t cls = draw_category(cumulative, rng);
        const bool ellipse = rng.uniform() < 0.5;
        const std::size_t sw = lo + static_cast<std::size_t>(rng.below(tile - lo + 1));
        const std::size_t sh = lo + static_cast<std::size_t>(rng.below(tile - lo + 1));
        const std::size_t ox = static_cast<std::size_t>(rng.below(tile - sw + 1));
        const std::size_t oy = static_cast<std::size_t>(rng.below(tile - sh + 1));
        for (std::size_t y = ty; y < std::min(h, ty + tile); ++y) {
          for (std::size_t x = tx; x < std::min(w, tx + tile); ++x) {
            const std::size_t ly = y - ty, lx = x - tx;
            bool in = cls != 0 && lx >= ox && lx < ox + sw && ly >= oy && ly < oy + sh;
            if (in && ellipse) in = inside_ellipse(lx - ox, ly - oy, sw, sh);
            labels[y * w + x] = static_cast<float>(in ? cls : 0);
          }
        }
      }
    }
    for (std::size_t p = 0; p < h * w; ++p) {
      const auto k = static_cast<std::size_t>(labels[p]);
      for (std::size_t ch = 0; ch < c; ++ch) {
        image[p * c + ch] = static_cast<float>(palette[k * c + ch] + spec.class_noise * rng.normal());
      }
    }
    if (domain == Domain::Target) {
      Rng perturb = base.derive(i ^ kTargetStream);
      const double fx = 2.0 * perturb.uniform(), fy = 2.0 * perturb.uniform();
      const double phase = 2.0 * std::numbers::pi * perturb.uniform();
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          float* px = image + (y * w + x) * c;
          transform.apply(px);
          const double pattern =
              spec.shift.texture *
              std::sin(2.0 * std::numbers::pi *
                           (fx * static_cast<double>(x) / static_cast<double>(w) +
                            fy * static_cast<double>(y) / static_cast<double>(h)) +
                       phase);
          for (std::size_t ch = 0; ch < c; ++ch) {
            px[ch] = static_cast<float>(px[ch] + pattern + spec.shift.noise_sigma * perturb.normal());
          }
        }
      }
    }
  }
  return out;
}

LabeledImages generate(const DomainSpec& spec, Domain domain, std::size_t n, std::uint64_t seed) {
  return spec.kind == DomainKind::Blobs ? gen_blobs(spec, domain, n, seed) : gen_grid_seg(spec, domain, n, seed);
}

std::vector<double> expected_class_frequencies(const DomainSpec& spec) {
  const std::size_t tile = spec.tile;
  const std::size_t lo = min_extent(tile);
  const auto priors = spec.resolved_priors();
  double prior_total = 0.0;
  for (double p : priors) prior_total += p;
  // Mean covered area of a shape over all sizes, offsets do not matter.
  double area = 0.0;
  std::size_t configs = 0;
  for (std::size_t sw = lo; sw <= tile; ++sw) {
    for (std::size_t sh = lo; sh <= tile; ++sh) {
      std::size_t ell = 0;
      for (std::size_t y = 0; y < sh; ++y)
        for (std::size_t x = 0; x < sw; ++x) ell += inside_ellipse(x, y, sw, sh) ? 1 : 0;
      area += 0.5 * static_cast<double>(sw * sh) + 0.5 * static_cast<double>(ell);
      ++configs;
    }
  }
  const double fill = area / static_cast<double>(configs) / static_cast<double>(tile * tile);
  std::vector<double> freq(spec.num_classes, 0.0);
  double fg = 0.0;
  for (std::size_t k = 1; k < spec.num_classes; ++k) {
    freq[k] = priors[k] / prior_total * fill;
    fg += freq[k];
  }
  freq[0] = 1.0 - fg;
  return freq;
}

namespace {

const std::vector<std::string> kSpecKeys = {
    "kind",  "num_classes", "channels",   "height", "width",   "tile",     "n_train",
    "n_eval", "class_noise", "class_priors", "palette", "gain", "mean_shift", "rotation",
    "noise",  "texture",     "seed",       "preset"};

}  // namespace

KeyValues domain_spec_to_keyvalues(const DomainSpec& s) {
  KeyValues kv;
  kv.set("kind", s.kind == DomainKind::Blobs ? "blobs" : "grid-seg");
  kv.set("num_classes", static_cast<unsigned long long>(s.num_classes));
  kv.set("channels", static_cast<unsigned long long>(s.channels));
  kv.set("height", static_cast<unsigned long long>(s.height));
  kv.set("width", static_cast<unsigned long long>(s.width));
  kv.set("tile", static_cast<unsigned long long>(s.tile));
  kv.set("n_train", static_cast<unsigned long long>(s.n_train));
  kv.set("n_eval", static_cast<unsigned long long>(s.n_eval));
  kv.set("class_noise", s.class_noise);
  kv.set("class_priors", format_double_list(s.resolved_priors()));
  kv.set("palette", format_double_list(s.resolved_palette()));
  std::vector<double> gain = s.shift.gain;
  if (gain.empty()) gain.assign(s.channels, 1.0);
  kv.set("gain", format_double_list(gain));
  kv.set("mean_shift", s.shift.mean_shift);
  kv.set("rotation", s.shift.rotation);
  kv.set("noise", s.shift.noise_sigma);
  kv.set("texture", s.shift.texture);
  kv.set("seed", static_cast<unsigned long long>(s.seed));
  if (!s.preset.empty()) kv.set("preset", s.preset);
  return kv;
}

DomainSpec domain_spec_from_keyvalues(const KeyValues& kv) {
  if (auto unknown = kv.unknown_keys(kSpecKeys); !unknown.empty()) {
    throw UsageError("unknown dataset spec key: " + unknown.front());
  }
  DomainSpec s;
  if (auto preset = kv.get("preset")) {
    if (*preset == "standard-shift-v1" || *preset == "standard") s = standard_shift_preset();
    else if (*preset == "no-shift-v1" || *preset == "no-shift") s = no_shift_preset();
    else if (*preset != "custom") throw UsageError("unknown value for preset: " + *preset);
    if (*preset == "custom") s.preset = "custom";
  }
  if (auto v = kv.get("kind")) {
    if (*v == "blobs") s.kind = DomainKind::Blobs;
    else if (*v == "grid-seg") s.kind = DomainKind::GridSeg;
    else throw UsageError("bad value for kind: " + *v);
  }
  auto size = [&](const char* key, std::size_t& dst) {
    if (auto v = kv.get(key)) dst = static_cast<std::size_t>(parse_uint(key, *v));
  };
  auto real = [&](const char* key, double& dst) {
    if (auto v = kv.get(key)) dst = parse_double(key, *v);
  };
  size("num_classes", s.num_classes);
  size("channels", s.channels);
  size("height", s.height);
  size("width", s.width);
  size("tile", s.tile);
  size("n_train", s.n_train);
  size("n_eval", s.n_eval);
  real("class_noise", s.class_noise);
  if (auto v = kv.get("class_priors")) s.class_priors = parse_double_list("class_priors", *v);
  if (auto v = kv.get("palette")) s.palette = parse_double_list("palette", *v);
  if (auto v = kv.get("gain")) s.shift.gain = parse_double_list("gain", *v);
  real("mean_shift", s.shift.mean_shift);
  real("rotation", s.shift.rotation);
  real("noise", s.shift.noise_sigma);
  real("texture", s.shift.texture);
  if (auto v = kv.get("seed")) s.seed = parse_uint("seed", *v);
  s.validate();
  return s;
}

std::uint64_t split_seed(const DomainSpec& spec, const std::string& split) {
  std::uint64_t stream = 0;
  if (split == kSourceSplit) stream = 1;
  else if (split == kTargetTrainSplit) stream = 2;
  else if (split == kTargetEvalSplit) stream = 3;
  else throw ValueError("unknown split " + split);
  return mix64(spec.seed ^ (stream * 0x9e3779b97f4a7c15ULL));
}

void write_split(const std::filesystem::path& dir, const LabeledImages& data, const DomainSpec& spec,
                 const std::string& split, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  KeyValues m = domain_spec_to_keyvalues(spec);
  m.set("split", split);
  m.set("split_seed", static_cast<unsigned long long>(seed));
  m.set("count", static_cast<unsigned long long>(data.count()));
  m.set("labeled", data.has_labels());
  m.set("format_version", kDatasetFormatVersion);
  io::save_tensor(dir / "images.tns1", data.images);
  if (data.has_labels()) io::save_tensor(dir / "labels.tns1", data.labels);
  m.save(dir / "manifest.txt");
}

Tensor read_split_images(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "images.tns1")) {
    throw UsageError("no images.tns1 in " + dir.string());
  }
  Tensor images = io::load_tensor(dir / "images.tns1");
  if (images.rank() != 4) throw FormatError("images.tns1 must be [n x H x W x C]");
  return images;
}

LabeledImages read_split(const std::filesystem::path& dir, bool require_labels) {
  LabeledImages out;
  out.images = read_split_images(dir);
  const auto labels = dir / "labels.tns1";
  if (std::filesystem::exists(labels)) {
    out.labels = io::load_tensor(labels);
    const auto& s = out.images.shape();
    if (out.labels.shape() != Shape{s[0], s[1], s[2]}) {
      throw FormatError("labels.tns1 shape does not match images in " + dir.string());
    }
  } else if (require_labels) {
    throw UsageError("split " + dir.string() + " has no labels.tns1");
  }
  return out;
}

void write_dataset(const std::filesystem::path& root, const DomainSpec& spec) {
  spec.validate();
  const std::uint64_t s_seed = split_seed(spec, kSourceSplit);
  const std::uint64_t t_seed = split_seed(spec, kTargetTrainSplit);
  const std::uint64_t e_seed = split_seed(spec, kTargetEvalSplit);
  write_split(root / kSourceSplit, generate(spec, Domain::Source, spec.n_train, s_seed), spec, kSourceSplit, s_seed);
  LabeledImages target = generate(spec, Domain::Target, spec.n_train, t_seed);
  target.labels = Tensor{};
  write_split(root / kTargetTrainSplit, target, spec, kTargetTrainSplit, t_seed);
  write_split(root / kTargetEvalSplit, generate(spec, Domain::Target, spec.n_eval, e_seed), spec,
              kTargetEvalSplit, e_seed);
  KeyValues top = domain_spec_to_keyvalues(spec);
  top.set("splits", std::string(kSourceSplit) + "," + kTargetTrainSplit + "," + kTargetEvalSplit);
  top.set("format_version", kDatasetFormatVersion);
  top.save(root / "manifest.txt");
}

}  // namespace protoadapt
