#include "protoadapt/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "protoadapt/linalg.hpp"
#include "protoadapt/tensor_io.hpp"

namespace protoadapt {

namespace {

constexpr std::array<char, 4> kModelMagic{'M', 'D', 'L', '1'};
constexpr std::size_t kInferenceChunk = 8192;

DenseLayer glorot_layer(std::size_t in, std::size_t out, Rng& rng) {
  DenseLayer layer{Tensor({in, out}), Tensor({out})};
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  for (auto& w : layer.weight.data()) w = static_cast<float>((2.0 * rng.uniform() - 1.0) * limit);
  return layer;
}

Tensor apply_layers(const std::vector<DenseLayer>& layers, Tensor x, bool relu_after_last) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Tensor y = matmul(x, layers[i].weight);
    const bool relu = i + 1 < layers.size() || relu_after_last;
    const auto& b = layers[i].bias;
    for (std::size_t r = 0; r < y.rows(); ++r) {
      auto row = y.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) {
        const float v = row[c] + b[c];
        row[c] = relu && v < 0.0f ? 0.0f : v;
      }
    }
    x = std::move(y);
  }
  return x;
}

// Rows [begin, end) of a row-major matrix.
Tensor slice_rows(const Tensor& m, std::size_t begin, std::size_t end) {
  const std::size_t cols = m.cols();
  std::vector<float> data(m.data().begin() + static_cast<std::ptrdiff_t>(begin * cols),
                          m.data().begin() + static_cast<std::ptrdiff_t>(end * cols));
  return Tensor({end - begin, cols}, std::move(data));
}

template <typename F>
Tensor chunked(const Tensor& rows, std::size_t out_cols, F&& fn) {
  const std::size_t n = rows.rows();
  Tensor out({n, out_cols});
  for (std::size_t begin = 0; begin < n; begin += kInferenceChunk) {
    const std::size_t end = std::min(n, begin + kInferenceChunk);
    Tensor part = fn(slice_rows(rows, begin, end));
    std::copy(part.data().begin(), part.data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(begin * out_cols));
  }
  return out;
}

}  // namespace

template <typename T>
void BasicSegModel<T>::validate() const {
  if (encoder.empty() || decoder.empty() || classifier.empty()) {
    throw ValueError("model needs at least one layer in each of encoder, decoder, classifier");
  }
  std::size_t width = input_dim();
  auto check_block = [&](const std::vector<BasicDenseLayer<T>>& block, const char* name) {
    for (const auto& l : block) {
      if (l.weight.rank() != 2 || l.bias.rank() != 1 || l.weight.dim(1) != l.bias.dim(0)) {
        throw DimensionError(std::string(name) + ": malformed layer");
      }
      if (l.weight.dim(0) != width) {
        throw DimensionError(std::string(name) + ": layer expects " +
                             std::to_string(l.weight.dim(0)) + " inputs, previous layer gives " +
                             std::to_string(width));
      }
      if (!l.weight.all_finite() || !l.bias.all_finite()) {
        throw ValueError(std::string(name) + ": non-finite parameter");
      }
      width = l.weight.dim(1);
    }
  };
  check_block(encoder, "encoder");
  check_block(decoder, "decoder");
  if (width != embed_dim) throw DimensionError("decoder output differs from embed_dim");
  check_block(classifier, "classifier");
  if (width != num_classes) throw DimensionError("classifier output differs from class count");
}

template struct BasicSegModel<float>;
template struct BasicSegModel<double>;

SegModel init_model(const ModelSpec& spec, Rng& rng) {
  if (spec.num_classes < 2) throw ValueError("model needs at least two classes");
  SegModel m;
  m.num_classes = spec.num_classes;
  m.embed_dim = spec.embed_dim ? spec.embed_dim : spec.num_classes;
  m.in_channels = spec.in_channels;
  m.neighborhood = spec.neighborhood;
  std::size_t width = m.input_dim();
  for (auto w : spec.encoder_widths) {
    m.encoder.push_back(glorot_layer(width, w, rng));
    width = w;
  }
  for (auto w : spec.decoder_hidden) {
    m.decoder.push_back(glorot_layer(width, w, rng));
    width = w;
  }
  m.decoder.push_back(glorot_layer(width, m.embed_dim, rng));
  const std::size_t hidden = spec.classifier_hidden ? spec.classifier_hidden : m.num_classes;
  m.classifier.push_back(glorot_layer(m.embed_dim, hidden, rng));
  m.classifier.push_back(glorot_layer(hidden, m.num_classes, rng));
  m.validate();
  return m;
}

Tensor pixel_features(const Tensor& images, bool neighborhood) {
  if (images.rank() == 2) {
    if (neighborhood) throw DimensionError("pixel_features: neighbourhood needs [B x H x W x C] images");
    return images;
  }
  require_rank(images, 4, "pixel_features");
  const std::size_t b = images.dim(0), h = images.dim(1), w = images.dim(2), c = images.dim(3);
  if (!neighborhood) return images.reshaped({b * h * w, c});
  Tensor out({b * h * w, 9 * c});
  for (std::size_t img = 0; img < b; ++img) {
    const std::size_t base = img * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        auto dst = out.row(base + y * w + x);
        std::size_t k = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          const auto yy = static_cast<std::size_t>(
              std::clamp<long>(static_cast<long>(y) + dy, 0, static_cast<long>(h) - 1));
          for (int dx = -1; dx <= 1; ++dx) {
            const auto xx = static_cast<std::size_t>(
                std::clamp<long>(static_cast<long>(x) + dx, 0, static_cast<long>(w) - 1));
            const float* src = images.data().data() + ((base + yy * w + xx) * c);
            for (std::size_t ch = 0; ch < c; ++ch) dst[k++] = src[ch];
          }
        }
      }
    }
  }
  return out;
}

Tensor embed_features(const SegModel& model, const Tensor& features) {
  require_rank(features, 2, "embed_features");
  if (features.dim(1) != model.input_dim()) {
    throw DimensionError("model expects " + std::to_string(model.input_dim()) +
                         " features per pixel, got " + std::to_string(features.dim(1)));
  }
  return chunked(features, model.embed_dim, [&](Tensor x) {
    return apply_layers(model.decoder, apply_layers(model.encoder, std::move(x), true), false);
  });
}

Tensor forward_embed(const SegModel& model, const Tensor& images) {
  if (images.rank() == 4 && images.dim(3) != model.in_channels) {
    throw DimensionError("image channel count " + std::to_string(images.dim(3)) +
                         " differs from model input " + std::to_string(model.in_channels));
  }
  Tensor emb = embed_features(model, pixel_features(images, model.neighborhood));
  if (images.rank() != 4) return emb;
  return emb.reshaped({images.dim(0), images.dim(1), images.dim(2), model.embed_dim});
}

Tensor classifier_logits(const SegModel& model, const Tensor& embeddings) {
  if (embeddings.empty() || embeddings.shape().back() != model.embed_dim) {
    throw DimensionError("classifier expects last dimension " + std::to_string(model.embed_dim));
  }
  Tensor rows = embeddings.reshaped({embeddings.size() / model.embed_dim, model.embed_dim});
  return chunked(rows, model.num_classes,
                 [&](Tensor x) { return apply_layers(model.classifier, std::move(x), false); });
}

Tensor forward_classify(const SegModel& model, const Tensor& embeddings) {
  Tensor probs = Tape<float>::softmax_rows(classifier_logits(model, embeddings));
  Shape shape = embeddings.shape();
  shape.back() = model.num_classes;
  return probs.reshaped(shape);
}

std::vector<int> argmax_rows(const Tensor& probs) {
  const std::size_t k = probs.shape().back();
  const std::size_t n = probs.size() / k;
  std::vector<int> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    const float* p = probs.data().data() + r * k;
    out[r] = static_cast<int>(std::max_element(p, p + k) - p);
  }
  return out;
}

double cross_entropy_loss(const Tensor& probs, std::span<const int> labels) {
  const std::size_t k = probs.shape().back();
  const std::size_t n = probs.size() / k;
  if (labels.size() != n) throw DimensionError("cross_entropy_loss: label count differs from pixel count");
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw ValueError("label index " + std::to_string(y) + " out of range");
    }
    const double p = probs[r * k + static_cast<std::size_t>(y)];
    loss -= std::log(std::max(p, kProbabilityFloor));
  }
  return loss / static_cast<double>(n);
}

double cross_entropy_loss(const Tensor& probs, const Tensor& labels) {
  return cross_entropy_loss(probs, labels_to_indices(labels, probs.shape().back()));
}

std::vector<int> labels_to_indices(const Tensor& labels, std::size_t num_classes) {
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const float v = labels[i];
    const auto idx = static_cast<int>(std::lround(v));
    if (!std::isfinite(v) || idx < 0 || static_cast<std::size_t>(idx) >= num_classes) {
      throw ValueError("label index " + std::to_string(v) + " out of range for " +
                       std::to_string(num_classes) + " classes");
    }
    out[i] = idx;
  }
  return out;
}

// MDL1 layout: "MDL1", u32 layer count, per layer TNS1 weight then TNS1 bias
// (encoder, decoder, classifier order), u32 K, u32 embed_dim, then a trailer
// of u32 encoder layer count, u32 decoder layer count, u32 input channels and
// u32 neighbourhood flag.
void save_model(const std::filesystem::path& path, const SegModel& model) {
  model.validate();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  io::write_magic(os, kModelMagic);
  const std::size_t layers = model.encoder.size() + model.decoder.size() + model.classifier.size();
  io::write_u32(os, static_cast<std::uint32_t>(layers));
  for (const auto* p : model.parameters()) io::write_tensor(os, *p);
  io::write_u32(os, static_cast<std::uint32_t>(model.num_classes));
  io::write_u32(os, static_cast<std::uint32_t>(model.embed_dim));
  io::write_u32(os, static_cast<std::uint32_t>(model.encoder.size()));
  io::write_u32(os, static_cast<std::uint32_t>(model.decoder.size()));
  io::write_u32(os, static_cast<std::uint32_t>(model.in_channels));
  io::write_u32(os, model.neighborhood ? 1u : 0u);
  if (!os) throw Error("write failed: " + path.string());
}

SegModel load_model(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  io::expect_magic(is, kModelMagic, "MDL1");
  const std::uint32_t layers = io::read_u32(is);
  if (layers < 3 || layers > 1024) throw FormatError("MDL1: implausible layer count");
  std::vector<DenseLayer> all;
  for (std::uint32_t i = 0; i < layers; ++i) {
    Tensor w = io::read_tensor(is);
    Tensor b = io::read_tensor(is);
    all.push_back({std::move(w), std::move(b)});
  }
  SegModel m;
  m.num_classes = io::read_u32(is);
  m.embed_dim = io::read_u32(is);
  const std::uint32_t n_enc = io::read_u32(is);
  const std::uint32_t n_dec = io::read_u32(is);
  m.in_channels = io::read_u32(is);
  m.neighborhood = io::read_u32(is) != 0;
  if (n_enc + n_dec >= layers) throw FormatError("MDL1: layer split exceeds layer count");
  m.encoder.assign(all.begin(), all.begin() + n_enc);
  m.decoder.assign(all.begin() + n_enc, all.begin() + n_enc + n_dec);
  m.classifier.assign(all.begin() + n_enc + n_dec, all.end());
  try {
    m.validate();
  } catch (const Error& e) {
    throw FormatError(std::string("MDL1: ") + e.what());
  }
  return m;
}

}  // namespace protoadapt
