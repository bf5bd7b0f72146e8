#pragma once

// Single-image colorization model split into a feature extractor and a color
// mapping head. The propagation machinery only ever talks to this interface.

#include <cstdint>
#include <memory>
#include <random>
#include <stdexcept>
#include <vector>

#include "chromaprop/colorspace.hpp"
#include "chromaprop/nn.hpp"
#include "chromaprop/tensor.hpp"

namespace chromaprop {

/// C x H x W deep features of one frame.
using FeatureMap = Tensor<double>;

/// Adapter contract for colorization backbones.
///
/// `extract` must return features at the frame's own resolution (adapters
/// for down-sampling models resample inside `extract`), and `map_colors`
/// applied to them must reproduce `predict` bit for bit. Parameters are
/// treated as frozen by everything in this library.
class Backbone {
 public:
  virtual ~Backbone() = default;

  virtual int feature_channels() const = 0;
  virtual FeatureMap extract(const Frame& frame) const = 0;
  virtual ChromaMap map_colors(const FeatureMap& features) const = 0;

  /// Gradient of <grad_chroma, map_colors(features)> with respect to the
  /// features. Needed to train anything that sits in front of the head.
  virtual FeatureMap map_colors_vjp(const FeatureMap& features, const ChromaMap& grad_chroma) const = 0;

  /// Monolithic single-image prediction.
  virtual ChromaMap predict(const Frame& frame) const { return map_colors(extract(frame)); }

  /// Throws DimensionError when the frame cannot be processed.
  virtual void check_frame(const Frame& frame) const {
    if (frame.channels() != 1) throw DimensionError("backbone: frame must have one luminance channel");
    if (frame.height() < 1 || frame.width() < 1) throw DimensionError("backbone: empty frame");
  }
};

struct AnchorOutput {
  FeatureMap features;
  ChromaMap chroma;
};

/// Colorize an anchor frame directly and keep its features for propagation.
inline AnchorOutput process_anchor(const Frame& frame, const Backbone& backbone) {
  backbone.check_frame(frame);
  AnchorOutput out;
  out.features = backbone.extract(frame);
  out.chroma = backbone.map_colors(out.features);
  return out;
}

/// Small resolution-preserving colorizer: four 3x3 SiLU convolutions as the
/// extractor, one 3x3 convolution with tanh as the head.
class ToyBackbone final : public Backbone {
 public:
  static constexpr int kExtractorLayers = 4;

  ToyBackbone() = default;
  ToyBackbone(nn::ConvStack extractor, nn::Conv2d head) : extractor_(std::move(extractor)), head_(std::move(head)) {
    if (extractor_.layers.empty() || extractor_.layers.front().in != 1)
      throw std::invalid_argument("ToyBackbone: extractor must start from one channel");
    if (head_.in != extractor_.layers.back().out || head_.out != 2)
      throw std::invalid_argument("ToyBackbone: head must map extractor features to two channels");
  }

  int feature_channels() const override { return head_.in; }

  FeatureMap extract(const Frame& frame) const override {
    check_frame(frame);
    return extractor_.forward(frame);
  }

  ChromaMap map_colors(const FeatureMap& features) const override {
    return nn::activate(nn::Activation::tanh, nn::conv_forward(head_, features));
  }

  FeatureMap map_colors_vjp(const FeatureMap& features, const ChromaMap& grad_chroma) const override {
    const auto pre = nn::conv_forward(head_, features);
    const auto g = nn::activate_backward(nn::Activation::tanh, pre, grad_chroma);
    return nn::conv_backward(head_, features, g, nullptr, true);
  }

  ChromaMap predict(const Frame& frame) const override {
    check_frame(frame);
    nn::ConvStack whole = extractor_;
    whole.layers.push_back(head_);
    whole.acts.push_back(nn::Activation::tanh);
    return whole.forward(frame);
  }

  const nn::ConvStack& extractor() const { return extractor_; }
  const nn::Conv2d& head() const { return head_; }
  nn::ConvStack& extractor() { return extractor_; }
  nn::Conv2d& head() { return head_; }

  friend bool operator==(const ToyBackbone& a, const ToyBackbone& b) {
    return a.extractor_ == b.extractor_ && a.head_ == b.head_;
  }

 private:
  nn::ConvStack extractor_;
  nn::Conv2d head_;
};

struct ToyBackboneOptions {
  int channels = 32;
  bool zero_head = false;
};

inline ToyBackbone build_toy_backbone(std::uint64_t seed, ToyBackboneOptions opts = {}) {
  std::mt19937_64 rng(seed);
  nn::ConvStack ext;
  int in = 1;
  for (int l = 0; l < ToyBackbone::kExtractorLayers; ++l) {
    nn::Conv2d c(in, opts.channels, 3);
    c.init_kaiming(rng);
    ext.layers.push_back(std::move(c));
    ext.acts.push_back(nn::Activation::silu);
    in = opts.channels;
  }
  nn::Conv2d head(opts.channels, 2, 3);
  if (opts.zero_head)
    head.zero();
  else
    head.init_kaiming(rng, 1.0);
  return ToyBackbone(std::move(ext), std::move(head));
}

struct ColorSample {
  Frame frame;
  ChromaMap chroma;
};

struct BackboneTrainOptions {
  int steps = 500;
  int batch = 4;
  double learning_rate = 2e-3;
  std::uint64_t seed = 1;
};

struct BackboneTrainResult {
  ToyBackbone backbone;
  std::vector<double> loss;  // minibatch MSE before each update
};

/// Fits the toy backbone to (frame, chroma) pairs by Adam on mean squared ab
/// error. The dataset is only read.
inline BackboneTrainResult train_toy_backbone(ToyBackbone backbone, const std::vector<ColorSample>& data,
                                              const BackboneTrainOptions& opts) {
  if (data.empty()) throw std::invalid_argument("train_toy_backbone: empty dataset");
  nn::ConvStack net = backbone.extractor();
  net.layers.push_back(backbone.head());
  net.acts.push_back(nn::Activation::tanh);

  std::mt19937_64 rng(opts.seed);
  nn::Adam adam;
  BackboneTrainResult result;
  for (int step = 0; step < opts.steps; ++step) {
    auto grads = net.make_grads();
    double loss = 0.0;
    for (int b = 0; b < opts.batch; ++b) {
      const auto& s = data[rng() % data.size()];
      require_shape(s.chroma.shape(), Shape{2, s.frame.height(), s.frame.width()}, "backbone sample");
      const auto trace = net.forward_traced(s.frame);
      Tensor<double> g(trace.output.shape());
      const double scale = 1.0 / (static_cast<double>(g.size()) * opts.batch);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double d = trace.output[i] - s.chroma[i];
        loss += d * d * scale;
        g[i] = 2.0 * d * scale;
      }
      net.backward(trace, std::move(g), &grads, false);
    }
    result.loss.push_back(loss);
    std::vector<std::span<double>> p;
    std::vector<std::span<const double>> gs;
    nn::collect(net.layers, p);
    nn::collect(grads, gs);
    adam.step(p, gs, opts.learning_rate);
  }
  nn::Conv2d head = net.layers.back();
  net.layers.pop_back();
  net.acts.pop_back();
  result.backbone = ToyBackbone(std::move(net), std::move(head));
  return result;
}

}  // namespace chromaprop
