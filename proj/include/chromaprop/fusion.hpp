#pragma once

// Feature fusion: a weighting network blends forward- and backward-propagated
// features, and a refine network adds a residual correction computed from the
// blended feature, the frame context and the neighbouring propagated features.

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "chromaprop/backbone.hpp"
#include "chromaprop/nn.hpp"

namespace chromaprop {

/// H x W x 1 blending weights in [0,1].
using WeightMap = Tensor<double>;

struct FfmConfig {
  int feature_channels = 32;
  int hidden = 64;
  int projection = 16;  // width of the 1x1 projections of the neighbour features
  friend bool operator==(const FfmConfig&, const FfmConfig&) = default;
};

struct FfmInit {
  std::uint64_t seed = 0;
  bool zero_weight_head = false;
  bool zero_refine_head = true;
};

/// The trainable parameters of the fusion module.
struct FfmParams {
  FfmConfig config;
  nn::ConvStack weighting;  // [ctx(3C), F_f, F_b] -> hidden -> hidden -> 1, sigmoid
  nn::Conv2d project_next;  // 1x1, C -> projection
  nn::Conv2d project_prev;  // 1x1, C -> projection
  nn::ConvStack refine;     // [ctx(3C), F_fb, P(F_next_b), P(F_prev_f)] -> hidden -> hidden -> C

  int weighting_inputs() const { return 5 * config.feature_channels; }
  int refine_inputs() const { return 4 * config.feature_channels + 2 * config.projection; }

  /// Every trainable vector, in a fixed order shared with FfmGrads::spans.
  std::vector<std::span<double>> spans() {
    std::vector<std::span<double>> out;
    nn::collect(weighting.layers, out);
    out.emplace_back(project_next.weight);
    out.emplace_back(project_next.bias);
    out.emplace_back(project_prev.weight);
    out.emplace_back(project_prev.bias);
    nn::collect(refine.layers, out);
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto s : spans()) n += s.size();
    return n;
  }

  friend bool operator==(const FfmParams&, const FfmParams&) = default;
};

inline FfmParams make_ffm(const FfmConfig& cfg, const FfmInit& init = {}) {
  std::mt19937_64 rng(init.seed);
  const int c = cfg.feature_channels, h = cfg.hidden;
  FfmParams p;
  p.config = cfg;
  auto stack = [&](int in, int out, nn::Activation last, bool zero_last) {
    nn::ConvStack s;
    s.layers = {nn::Conv2d(in, h, 3), nn::Conv2d(h, h, 3), nn::Conv2d(h, out, 3)};
    s.acts = {nn::Activation::silu, nn::Activation::silu, last};
    s.layers[0].init_kaiming(rng);
    s.layers[1].init_kaiming(rng);
    if (zero_last)
      s.layers[2].zero();
    else
      s.layers[2].init_kaiming(rng, 1.0);
    return s;
  };
  p.weighting = stack(p.weighting_inputs(), 1, nn::Activation::sigmoid, init.zero_weight_head);
  p.project_next = nn::Conv2d(c, cfg.projection, 1);
  p.project_prev = nn::Conv2d(c, cfg.projection, 1);
  p.project_next.init_kaiming(rng, 1.0);
  p.project_prev.init_kaiming(rng, 1.0);
  p.refine = stack(p.refine_inputs(), c, nn::Activation::identity, init.zero_refine_head);
  return p;
}

struct FfmGrads {
  std::vector<nn::ConvGrad> weighting;
  nn::ConvGrad project_next;
  nn::ConvGrad project_prev;
  std::vector<nn::ConvGrad> refine;

  FfmGrads() = default;
  explicit FfmGrads(const FfmParams& p)
      : weighting(p.weighting.make_grads()),
        project_next(p.project_next),
        project_prev(p.project_prev),
        refine(p.refine.make_grads()) {}

  std::vector<std::span<const double>> spans() const {
    std::vector<std::span<const double>> out;
    nn::collect(weighting, out);
    out.emplace_back(project_next.weight);
    out.emplace_back(project_next.bias);
    out.emplace_back(project_prev.weight);
    out.emplace_back(project_prev.bias);
    nn::collect(refine, out);
    return out;
  }

  FfmGrads& operator+=(const FfmGrads& o) {
    auto add = [](AlignedVector<double>& a, const AlignedVector<double>& b) {
      for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    };
    auto add_conv = [&](nn::ConvGrad& a, const nn::ConvGrad& b) {
      add(a.weight, b.weight);
      add(a.bias, b.bias);
    };
    for (std::size_t l = 0; l < weighting.size(); ++l) add_conv(weighting[l], o.weighting[l]);
    add_conv(project_next, o.project_next);
    add_conv(project_prev, o.project_prev);
    for (std::size_t l = 0; l < refine.size(); ++l) add_conv(refine[l], o.refine[l]);
    return *this;
  }
};

/// Features of the previous, current and next frame from the extractor.
struct FrameContext {
  const FeatureMap* prev = nullptr;
  const FeatureMap* cur = nullptr;
  const FeatureMap* next = nullptr;

  FeatureMap stacked() const { return concat_channels<double>({prev, cur, next}); }
};

/// Inputs of one fusion step at internal frame i.
struct FusionInputs {
  FrameContext context;
  const FeatureMap* forward = nullptr;        // F_i^f, warped from the previous frame
  const FeatureMap* backward = nullptr;       // F_i^b
  const FeatureMap* next_backward = nullptr;  // F_{i+1}^b
  const FeatureMap* prev_forward = nullptr;   // fused feature (or anchor feature) of frame i-1
};

/// Ablation switches. Defaults run the learned module.
struct FuseOptions {
  std::optional<double> fixed_weight;
  bool refine = true;
};

namespace detail {

inline void check_fusion_inputs(const FusionInputs& in, const FfmParams& p) {
  const Shape ref{p.config.feature_channels, in.forward->height(), in.forward->width()};
  for (const FeatureMap* f : {in.context.prev, in.context.cur, in.context.next, in.forward, in.backward,
                              in.next_backward, in.prev_forward})
    require_shape(f->shape(), ref, "fusion input");
}

}  // namespace detail

inline WeightMap compute_weight(const FrameContext& ctx, const FeatureMap& forward, const FeatureMap& backward,
                                const FfmParams& params) {
  const auto ctx3 = ctx.stacked();
  return params.weighting.forward(concat_channels<double>({&ctx3, &forward, &backward}));
}

/// w * F_f + (1 - w) * F_b with w broadcast over channels. Equal inputs pass
/// through unchanged for any w.
inline FeatureMap blend(const FeatureMap& forward, const FeatureMap& backward, const WeightMap& w) {
  require_shape(forward.shape(), backward.shape(), "blend");
  if (w.channels() != 1) throw DimensionError("blend: weight map must have one channel");
  require_spatial(forward.shape(), w.shape(), "blend");
  FeatureMap out(forward.shape());
  const std::size_t n = w.plane();
  for (int c = 0; c < forward.channels(); ++c)
    for (std::size_t p = 0; p < n; ++p) {
      const std::size_t i = c * n + p;
      out[i] = forward[i] == backward[i] ? forward[i] : w[p] * forward[i] + (1.0 - w[p]) * backward[i];
    }
  return out;
}

/// Residual correction for the blended feature.
inline FeatureMap refine(const FrameContext& ctx, const FeatureMap& blended, const FeatureMap& next_backward,
                         const FeatureMap& prev_forward, const FfmParams& params) {
  const auto ctx3 = ctx.stacked();
  const auto pn = nn::conv_forward(params.project_next, next_backward);
  const auto pp = nn::conv_forward(params.project_prev, prev_forward);
  return params.refine.forward(concat_channels<double>({&ctx3, &blended, &pn, &pp}));
}

/// Everything the backward pass of one fusion step needs.
struct FuseTrace {
  nn::ConvStack::Trace weighting;
  nn::ConvStack::Trace refine;
  WeightMap weight;
  FeatureMap blended;
  FeatureMap output;
  bool refined = true;
  bool learned_weight = true;
};

inline FuseTrace fuse_traced(const FusionInputs& in, const FfmParams& params, const FuseOptions& opts = {}) {
  detail::check_fusion_inputs(in, params);
  FuseTrace t;
  const auto ctx3 = in.context.stacked();
  t.learned_weight = !opts.fixed_weight.has_value();
  if (t.learned_weight) {
    t.weighting = params.weighting.forward_traced(concat_channels<double>({&ctx3, in.forward, in.backward}));
    t.weight = t.weighting.output;
  } else {
    t.weight = WeightMap(1, in.forward->height(), in.forward->width(), *opts.fixed_weight);
  }
  t.blended = blend(*in.forward, *in.backward, t.weight);
  t.output = t.blended;
  t.refined = opts.refine;
  if (t.refined) {
    const auto pn = nn::conv_forward(params.project_next, *in.next_backward);
    const auto pp = nn::conv_forward(params.project_prev, *in.prev_forward);
    t.refine = params.refine.forward_traced(concat_channels<double>({&ctx3, &t.blended, &pn, &pp}));
    t.output += t.refine.output;
  }
  return t;
}

/// F~ = blend(F_f, F_b, w) + refine(...).
inline FeatureMap fuse(const FusionInputs& in, const FfmParams& params, const FuseOptions& opts = {}) {
  return fuse_traced(in, params, opts).output;
}

/// Gradients of a scalar with respect to the propagated inputs of a fusion
/// step (the context is frozen and gets none).
struct FusionInputGrads {
  FeatureMap forward;
  FeatureMap backward;
  FeatureMap next_backward;
  FeatureMap prev_forward;
};

inline FusionInputGrads fuse_backward(const FuseTrace& t, const FusionInputs& in, const FfmParams& params,
                                      const FeatureMap& grad_output, FfmGrads* grads) {
  const int c = params.config.feature_channels;
  const int proj = params.config.projection;
  FusionInputGrads g;
  FeatureMap g_blend = grad_output;
  g.next_backward = FeatureMap(in.next_backward->shape());
  g.prev_forward = FeatureMap(in.prev_forward->shape());

  if (t.refined) {
    const auto dx = params.refine.backward(t.refine, grad_output, grads ? &grads->refine : nullptr, true);
    g_blend += slice_channels(dx, 3 * c, c);
    const auto d_pn = slice_channels(dx, 4 * c, proj);
    const auto d_pp = slice_channels(dx, 4 * c + proj, proj);
    g.next_backward =
        nn::conv_backward(params.project_next, *in.next_backward, d_pn, grads ? &grads->project_next : nullptr);
    g.prev_forward =
        nn::conv_backward(params.project_prev, *in.prev_forward, d_pp, grads ? &grads->project_prev : nullptr);
  }

  const std::size_t n = t.weight.plane();
  g.forward = FeatureMap(in.forward->shape());
  g.backward = FeatureMap(in.backward->shape());
  WeightMap g_w(1, t.weight.height(), t.weight.width());
  for (int ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < n; ++p) {
      const std::size_t i = ch * n + p;
      g.forward[i] = t.weight[p] * g_blend[i];
      g.backward[i] = (1.0 - t.weight[p]) * g_blend[i];
      g_w[p] += g_blend[i] * ((*in.forward)[i] - (*in.backward)[i]);
    }

  if (t.learned_weight) {
    const auto dx = params.weighting.backward(t.weighting, std::move(g_w), grads ? &grads->weighting : nullptr, true);
    g.forward += slice_channels(dx, 3 * c, c);
    g.backward += slice_channels(dx, 4 * c, c);
  }
  return g;
}

}  // namespace chromaprop
