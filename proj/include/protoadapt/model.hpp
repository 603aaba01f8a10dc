#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "protoadapt/autodiff.hpp"
#include "protoadapt/rng.hpp"
#include "protoadapt/tensor.hpp"

namespace protoadapt {

/// Dense layer computing x * weight + bias with weight stored [in x out].
template <typename T>
struct BasicDenseLayer {
  BasicTensor<T> weight;
  BasicTensor<T> bias;

  std::size_t in_dim() const { return weight.dim(0); }
  std::size_t out_dim() const { return weight.dim(1); }
};

/// Per-pixel segmentation network: encoder -> decoder -> classifier.
///
/// The decoder output is the embedding space the prototype mixture lives in.
/// Rectifiers sit between layers inside every block and after the last
/// encoder layer; the embedding and the logits are affine outputs.
template <typename T>
struct BasicSegModel {
  std::vector<BasicDenseLayer<T>> encoder;
  std::vector<BasicDenseLayer<T>> decoder;
  std::vector<BasicDenseLayer<T>> classifier;
  std::size_t num_classes = 0;
  std::size_t embed_dim = 0;
  std::size_t in_channels = 0;
  bool neighborhood = false;  // concatenate the 3x3 neighbourhood of each pixel

  std::size_t input_dim() const { return neighborhood ? 9 * in_channels : in_channels; }

  std::vector<BasicTensor<T>*> parameters() {
    std::vector<BasicTensor<T>*> out;
    for (auto* block : {&encoder, &decoder, &classifier}) {
      for (auto& layer : *block) {
        out.push_back(&layer.weight);
        out.push_back(&layer.bias);
      }
    }
    return out;
  }

  std::vector<const BasicTensor<T>*> parameters() const {
    std::vector<const BasicTensor<T>*> out;
    for (auto* block : {&encoder, &decoder, &classifier}) {
      for (auto& layer : *block) {
        out.push_back(&layer.weight);
        out.push_back(&layer.bias);
      }
    }
    return out;
  }

  template <typename U>
  BasicSegModel<U> cast() const {
    BasicSegModel<U> out;
    auto convert = [](const std::vector<BasicDenseLayer<T>>& in) {
      std::vector<BasicDenseLayer<U>> layers;
      for (const auto& l : in) layers.push_back({l.weight.template cast<U>(), l.bias.template cast<U>()});
      return layers;
    };
    out.encoder = convert(encoder);
    out.decoder = convert(decoder);
    out.classifier = convert(classifier);
    out.num_classes = num_classes;
    out.embed_dim = embed_dim;
    out.in_channels = in_channels;
    out.neighborhood = neighborhood;
    return out;
  }

  /// Checks layer chaining and the embedding/classifier dimension contract.
  void validate() const;
};

using DenseLayer = BasicDenseLayer<float>;
using SegModel = BasicSegModel<float>;
using SegModelD = BasicSegModel<double>;

struct ModelSpec {
  std::size_t in_channels = 3;
  bool neighborhood = false;
  std::vector<std::size_t> encoder_widths{64, 32};
  std::vector<std::size_t> decoder_hidden{};  // output width is embed_dim
  std::size_t num_classes = 2;
  std::size_t embed_dim = 0;  // 0 means num_classes
  std::size_t classifier_hidden = 0;  // 0 means num_classes; one hidden layer
};

/// Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases.
SegModel init_model(const ModelSpec& spec, Rng& rng);

/// [B x H x W x C] images (or [n x C] pixel rows) to one feature row per pixel.
/// With the neighbourhood flag each row holds the 3x3 patch, edges clamped.
Tensor pixel_features(const Tensor& images, bool neighborhood);

/// Embeddings for pixel feature rows [n x input_dim] -> [n x embed_dim].
Tensor embed_features(const SegModel& model, const Tensor& features);

/// Per-pixel embeddings, shaped [B x H x W x embed_dim].
Tensor forward_embed(const SegModel& model, const Tensor& images);

/// Classifier logits for embeddings [..., embed_dim] -> [n x K].
Tensor classifier_logits(const SegModel& model, const Tensor& embeddings);

/// Softmax class probabilities with the same leading shape as `embeddings`.
Tensor forward_classify(const SegModel& model, const Tensor& embeddings);

/// Per-pixel argmax over a [..., K] probability tensor.
std::vector<int> argmax_rows(const Tensor& probs);

/// Mean over pixels of -log p[label], probabilities floored at 1e-12.
double cross_entropy_loss(const Tensor& probs, std::span<const int> labels);
double cross_entropy_loss(const Tensor& probs, const Tensor& labels);

/// Labels stored as float class indices; throws ValueError outside [0, K).
std::vector<int> labels_to_indices(const Tensor& labels, std::size_t num_classes);

// --- taped evaluation -----------------------------------------------------

template <typename T>
struct LayerVars {
  typename Tape<T>::Var weight;
  typename Tape<T>::Var bias;
};

template <typename T>
struct TapedModel {
  std::vector<LayerVars<T>> encoder;
  std::vector<LayerVars<T>> decoder;
  std::vector<LayerVars<T>> classifier;
};

/// Registers every parameter of `model` as a leaf on `tape`.
template <typename T>
TapedModel<T> bind_parameters(Tape<T>& tape, const BasicSegModel<T>& model, bool requires_grad) {
  TapedModel<T> out;
  auto bind = [&](const std::vector<BasicDenseLayer<T>>& layers, std::vector<LayerVars<T>>& dst) {
    for (const auto& l : layers) {
      dst.push_back({tape.leaf(l.weight, requires_grad), tape.leaf(l.bias, requires_grad)});
    }
  };
  bind(model.encoder, out.encoder);
  bind(model.decoder, out.decoder);
  bind(model.classifier, out.classifier);
  return out;
}

template <typename T>
typename Tape<T>::Var run_layers(Tape<T>& tape, const std::vector<LayerVars<T>>& layers,
                                 typename Tape<T>::Var x, bool relu_after_last) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = tape.add_bias(tape.matmul(x, layers[i].weight), layers[i].bias);
    if (i + 1 < layers.size() || relu_after_last) x = tape.relu(x);
  }
  return x;
}

template <typename T>
typename Tape<T>::Var embed_on_tape(Tape<T>& tape, const TapedModel<T>& vars,
                                    typename Tape<T>::Var features) {
  auto h = run_layers(tape, vars.encoder, features, true);
  return run_layers(tape, vars.decoder, h, false);
}

template <typename T>
typename Tape<T>::Var logits_on_tape(Tape<T>& tape, const TapedModel<T>& vars,
                                     typename Tape<T>::Var embeddings) {
  return run_layers(tape, vars.classifier, embeddings, false);
}

/// Collects parameter gradients after `tape.backward`, shaped like `model`.
template <typename T>
BasicSegModel<T> collect_gradients(const Tape<T>& tape, const TapedModel<T>& vars,
                                   const BasicSegModel<T>& model) {
  BasicSegModel<T> out = model;
  auto fill = [&](const std::vector<LayerVars<T>>& src, std::vector<BasicDenseLayer<T>>& dst) {
    for (std::size_t i = 0; i < src.size(); ++i) {
      dst[i].weight = tape.grad(src[i].weight);
      dst[i].bias = tape.grad(src[i].bias);
    }
  };
  fill(vars.encoder, out.encoder);
  fill(vars.decoder, out.decoder);
  fill(vars.classifier, out.classifier);
  return out;
}

// --- checkpoints ----------------------------------------------------------

void save_model(const std::filesystem::path& path, const SegModel& model);
SegModel load_model(const std::filesystem::path& path);

}  // namespace protoadapt
