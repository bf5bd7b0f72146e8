#pragma once

// Bidirectional feature propagation over one interval of frames: the last
// anchor's features are warped backward frame by frame, then the first
// anchor's features are warped forward and fused with the backward chain at
// every internal frame before the color head is applied.

#include <vector>

#include "chromaprop/backbone.hpp"
#include "chromaprop/flowfield.hpp"
#include "chromaprop/fusion.hpp"

namespace chromaprop {

/// N consecutive frames with the flows between neighbours (0-based):
/// flows_fw[k] lives on grid k+1 and samples frame k; flows_bw[k] lives on
/// grid k and samples frame k+1.
struct Interval {
  std::vector<Frame> frames;
  std::vector<FlowField> flows_fw;
  std::vector<FlowField> flows_bw;

  int size() const { return static_cast<int>(frames.size()); }

  void validate() const {
    if (frames.size() < 2) throw std::invalid_argument("interval needs at least two frames");
    if (flows_fw.size() + 1 != frames.size() || flows_bw.size() + 1 != frames.size())
      throw std::invalid_argument("interval needs N-1 forward and N-1 backward flows");
    const Shape s{1, frames.front().height(), frames.front().width()};
    for (const auto& f : frames) require_shape(f.shape(), s, "interval frame");
    for (const auto& f : flows_fw) require_spatial(f.spatial(), s, "interval forward flow");
    for (const auto& f : flows_bw) require_spatial(f.spatial(), s, "interval backward flow");
  }
};

/// Extractor features of every frame (anchors included), computed once.
inline std::vector<FeatureMap> extract_all(const Interval& interval, const Backbone& backbone) {
  std::vector<FeatureMap> out;
  out.reserve(interval.frames.size());
  for (const auto& f : interval.frames) out.push_back(backbone.extract(f));
  return out;
}

/// Backward chain seeded with the last anchor's features. Returns N-1 maps;
/// element k belongs to frame k+1, so the last element is the seed itself.
inline std::vector<FeatureMap> backward_pass(const FeatureMap& last_features, const Interval& interval) {
  interval.validate();
  const int n = interval.size();
  std::vector<FeatureMap> out(n - 1);
  out[n - 2] = last_features;
  for (int k = n - 2; k >= 1; --k) out[k - 1] = warp(out[k], interval.flows_bw[k]).warped;
  return out;
}

struct ForwardResult {
  std::vector<FeatureMap> fused;   // one per internal frame, frames 1..N-2
  std::vector<ChromaMap> chroma;   // head output of each fused feature
  std::vector<FeatureMap> warped;  // F_i^f before fusion
  std::vector<FuseTrace> traces;   // filled only when traced
};

struct PropagationOptions {
  FuseOptions fusion;
};

/// Forward chain: warp, fuse with the backward chain, colorize, repeat.
/// `context` holds the extractor features of all N frames and `backward`
/// the output of backward_pass.
inline ForwardResult forward_pass(const FeatureMap& first_features, const std::vector<FeatureMap>& backward,
                                  const std::vector<FeatureMap>& context, const Interval& interval,
                                  const FfmParams& ffm, const Backbone& backbone, const PropagationOptions& opts = {},
                                  bool keep_traces = false) {
  interval.validate();
  const int n = interval.size();
  if (static_cast<int>(backward.size()) != n - 1) throw DimensionError("forward_pass: backward chain length");
  if (static_cast<int>(context.size()) != n) throw DimensionError("forward_pass: context length");
  ForwardResult r;
  // Reserved up front: `prev` points into r.fused across iterations.
  r.fused.reserve(n - 2);
  r.warped.reserve(n - 2);
  const FeatureMap* prev = &first_features;
  for (int i = 1; i <= n - 2; ++i) {
    r.warped.push_back(warp(*prev, interval.flows_fw[i - 1]).warped);
    FusionInputs in;
    in.context = {&context[i - 1], &context[i], &context[i + 1]};
    in.forward = &r.warped.back();
    in.backward = &backward[i - 1];
    in.next_backward = &backward[i];
    in.prev_forward = prev;
    auto trace = fuse_traced(in, ffm, opts.fusion);
    r.fused.push_back(trace.output);
    r.chroma.push_back(backbone.map_colors(r.fused.back()));
    if (keep_traces) r.traces.push_back(std::move(trace));
    prev = &r.fused.back();
  }
  return r;
}

/// Complete run over one interval, keeping what training needs.
struct IntervalRun {
  std::vector<FeatureMap> context;
  std::vector<FeatureMap> backward;
  ForwardResult forward;
  std::vector<ChromaMap> chroma;  // N predictions, anchors first and last
};

inline IntervalRun run_interval(const Interval& interval, const Backbone& backbone, const FfmParams& ffm,
                                const PropagationOptions& opts = {}, bool keep_traces = false,
                                std::vector<FeatureMap> context = {}) {
  interval.validate();
  const int n = interval.size();
  for (const auto& f : interval.frames) backbone.check_frame(f);
  IntervalRun run;
  run.context = context.empty() ? extract_all(interval, backbone) : std::move(context);
  if (static_cast<int>(run.context.size()) != n) throw DimensionError("run_interval: context length");
  run.backward = backward_pass(run.context.back(), interval);
  if (n > 2) {
    run.forward = forward_pass(run.context.front(), run.backward, run.context, interval, ffm, backbone, opts,
                               keep_traces);
  }
  run.chroma.reserve(n);
  run.chroma.push_back(backbone.map_colors(run.context.front()));
  for (auto& c : run.forward.chroma) run.chroma.push_back(c);
  run.chroma.push_back(backbone.map_colors(run.context.back()));
  return run;
}

/// Colors for all N frames. Anchors come straight from the backbone.
inline std::vector<ChromaMap> colorize_interval(const Interval& interval, const Backbone& backbone,
                                                const FfmParams& ffm, const PropagationOptions& opts = {}) {
  return run_interval(interval, backbone, ffm, opts).chroma;
}

/// Backpropagates dL/d(chroma) of the internal frames of a traced run into
/// FFM parameter gradients. Entries for the anchors are ignored (they do not
/// depend on the FFM).
inline void backprop_interval(const IntervalRun& run, const Interval& interval, const FfmParams& ffm,
                              const Backbone& backbone, const std::vector<ChromaMap>& grad_chroma, FfmGrads& grads) {
  const int n = interval.size();
  if (n <= 2) return;
  if (static_cast<int>(run.forward.traces.size()) != n - 2)
    throw std::logic_error("backprop_interval: run was not traced");
  if (static_cast<int>(grad_chroma.size()) != n) throw DimensionError("backprop_interval: need N chroma gradients");

  std::vector<FeatureMap> carried;
  for (const auto& f : run.forward.fused) carried.emplace_back(f.shape());

  for (int i = n - 2; i >= 1; --i) {
    const int k = i - 1;  // index into the forward result
    FeatureMap g = carried[k];
    if (!grad_chroma[i].empty()) g += backbone.map_colors_vjp(run.forward.fused[k], grad_chroma[i]);

    const FeatureMap& prev = k == 0 ? run.context.front() : run.forward.fused[k - 1];
    FusionInputs in;
    in.context = {&run.context[i - 1], &run.context[i], &run.context[i + 1]};
    in.forward = &run.forward.warped[k];
    in.backward = &run.backward[i - 1];
    in.next_backward = &run.backward[i];
    in.prev_forward = &prev;
    const auto gi = fuse_backward(run.forward.traces[k], in, ffm, g, &grads);
    if (k > 0) {
      BilinearSampler(interval.flows_fw[i - 1]).accumulate_adjoint(gi.forward, carried[k - 1]);
      carried[k - 1] += gi.prev_forward;
    }
  }
}

}  // namespace chromaprop
