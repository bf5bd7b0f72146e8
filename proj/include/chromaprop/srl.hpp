#pragma once

// Self-regularized training of the fusion module: predictions of frames i and
// i+d must agree after flow warping, down-weighted where the input frames
// themselves disagree. No ground-truth color is involved.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "chromaprop/backbone.hpp"
#include "chromaprop/flowfield.hpp"
#include "chromaprop/fusion.hpp"
#include "chromaprop/propagation.hpp"

namespace chromaprop {

enum class Objective {
  temporal_warping,  // label free, the default
  ground_truth_l2,   // ablation: MSE against ground-truth chroma of internal frames
};

struct TrainConfig {
  int interval_len_train = 10;
  int batch = 4;
  int patch = 256;
  int iterations = 0;
  double lr0 = 5e-5;
  int lr_halving_period = 10000;
  double alpha = 50.0;
  std::vector<int> warp_distances = {1, 2};
  std::uint64_t seed = 0;
  Objective objective = Objective::temporal_warping;

  void validate() const {
    if (interval_len_train < 3) throw std::invalid_argument("interval_len_train must be >= 3");
    if (batch < 1) throw std::invalid_argument("batch must be >= 1");
    if (patch < 1) throw std::invalid_argument("patch must be >= 1");
    if (iterations < 0) throw std::invalid_argument("iterations must be >= 0");
    if (!(lr0 > 0.0)) throw std::invalid_argument("lr0 must be > 0");
    if (lr_halving_period < 1) throw std::invalid_argument("lr_halving_period must be >= 1");
    if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be > 0");
    if (warp_distances.empty()) throw std::invalid_argument("warp_distances must not be empty");
    for (int d : warp_distances)
      if (d < 1) throw std::invalid_argument("warp distances must be >= 1");
  }
};

/// lr0 * 2^-floor(iteration / period), exact in binary floating point.
inline double learning_rate(const TrainConfig& cfg, std::int64_t iteration) {
  return std::ldexp(cfg.lr0, -static_cast<int>(iteration / cfg.lr_halving_period));
}

/// exp(-alpha * |ref - warped|^2) per pixel, the norm taken over channels.
inline Tensor<double> visibility_mask(const Tensor<double>& ref, const Tensor<double>& warped, double alpha) {
  require_shape(ref.shape(), warped.shape(), "visibility_mask");
  Tensor<double> m(1, ref.height(), ref.width());
  const std::size_t n = ref.plane();
  for (std::size_t p = 0; p < n; ++p) {
    double s = 0.0;
    for (int c = 0; c < ref.channels(); ++c) {
      const double d = ref[c * n + p] - warped[c * n + p];
      s += d * d;
    }
    m[p] = std::exp(-alpha * s);
  }
  return m;
}

/// One (i, i+d) comparison: `flow` lives on grid i and samples frame i+d.
struct WarpTerm {
  int index = 0;
  int distance = 1;
  FlowField flow;
  Tensor<double> mask;  // visibility weights, constant w.r.t. the parameters
};

/// Builds every comparison of an interval. The visibility mask is computed
/// from the luminance frames so that no color labels are required.
inline std::vector<WarpTerm> make_warp_terms(const Interval& interval, const TrainConfig& cfg) {
  interval.validate();
  const int n = interval.size();
  std::vector<WarpTerm> terms;
  for (int d : cfg.warp_distances) {
    for (int i = 0; i + d < n; ++i) {
      FlowField f = interval.flows_bw[i];
      for (int s = 1; s < d; ++s) f = compose_flows(f, interval.flows_bw[i + s]);
      const auto w = warp(interval.frames[i + d], f);
      WarpTerm t;
      t.index = i;
      t.distance = d;
      t.mask = visibility_mask(interval.frames[i], w.warped, cfg.alpha);
      t.flow = std::move(f);
      terms.push_back(std::move(t));
    }
  }
  return terms;
}

/// Sum over terms of the mean, over in-bounds pixels, of mask * |y_i - warp(y_{i+d})|.
/// When `grads` is given it receives dL/dy for every prediction.
inline double temporal_warping_loss(const std::vector<ChromaMap>& preds, const std::vector<WarpTerm>& terms,
                                    std::vector<ChromaMap>* grads = nullptr) {
  int needed = 0;
  for (const auto& t : terms) needed = std::max(needed, t.index + t.distance + 1);
  if (static_cast<int>(preds.size()) < std::max(needed, 3))
    throw std::invalid_argument("temporal_warping_loss: insufficient frames (" + std::to_string(preds.size()) + ")");
  if (grads != nullptr) {
    grads->clear();
    for (const auto& p : preds) grads->emplace_back(p.shape());
  }
  double loss = 0.0;
  for (const auto& t : terms) {
    const ChromaMap& a = preds[t.index];
    const ChromaMap& b = preds[t.index + t.distance];
    require_shape(a.shape(), b.shape(), "temporal_warping_loss");
    require_spatial(t.mask.shape(), a.shape(), "temporal_warping_loss mask");
    BilinearSampler sampler(t.flow);
    const ChromaMap bw = sampler.sample(b);
    const Mask& valid = sampler.validity();
    const std::size_t n = a.plane();
    double count = 0.0;
    for (std::size_t p = 0; p < n; ++p) count += valid[p];
    if (count == 0.0) continue;

    ChromaMap g_bw(a.shape());
    double term = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      if (valid[p] == 0.0) continue;
      double s = 0.0;
      for (int c = 0; c < a.channels(); ++c) {
        const double d = a[c * n + p] - bw[c * n + p];
        s += d * d;
      }
      const double norm = std::sqrt(s);
      term += t.mask[p] * norm;
      if (grads != nullptr && norm > 0.0) {
        const double k = t.mask[p] / (norm * count);
        for (int c = 0; c < a.channels(); ++c) {
          const double d = a[c * n + p] - bw[c * n + p];
          (*grads)[t.index][c * n + p] += k * d;
          g_bw[c * n + p] -= k * d;
        }
      }
    }
    loss += term / count;
    if (grads != nullptr) sampler.accumulate_adjoint(g_bw, (*grads)[t.index + t.distance]);
  }
  return loss;
}

/// Mean squared error of the internal predictions against ground truth.
inline double ground_truth_loss(const std::vector<ChromaMap>& preds, const std::vector<ChromaMap>& truth,
                                std::vector<ChromaMap>* grads = nullptr) {
  if (preds.size() != truth.size() || preds.size() < 3)
    throw std::invalid_argument("ground_truth_loss: need matching predictions and labels");
  if (grads != nullptr) {
    grads->clear();
    for (const auto& p : preds) grads->emplace_back(p.shape());
  }
  double loss = 0.0;
  const double frames = static_cast<double>(preds.size() - 2);
  for (std::size_t i = 1; i + 1 < preds.size(); ++i) {
    require_shape(preds[i].shape(), truth[i].shape(), "ground_truth_loss");
    const double scale = 1.0 / (static_cast<double>(preds[i].size()) * frames);
    for (std::size_t k = 0; k < preds[i].size(); ++k) {
      const double d = preds[i][k] - truth[i][k];
      loss += d * d * scale;
      if (grads != nullptr) (*grads)[i][k] = 2.0 * d * scale;
    }
  }
  return loss;
}

/// A grayscale training sequence with its flows. `chroma` is only consulted
/// by the ground-truth ablation objective.
struct TrainingSequence {
  std::vector<Frame> frames;
  FlowSequence flows;
  std::vector<ChromaMap> chroma;

  void validate() const {
    if (frames.size() < 2) throw std::invalid_argument("training sequence needs at least two frames");
    if (flows.fw.size() + 1 != frames.size() || flows.bw.size() + 1 != frames.size())
      throw std::invalid_argument("training sequence: flow/frame misalignment (" + std::to_string(frames.size()) +
                                  " frames, " + std::to_string(flows.fw.size()) + " forward and " +
                                  std::to_string(flows.bw.size()) + " backward flows)");
    for (const auto& f : flows.fw) require_spatial(f.spatial(), frames.front().shape(), "training flow");
    for (const auto& f : flows.bw) require_spatial(f.spatial(), frames.front().shape(), "training flow");
  }
};

struct LossRecord {
  std::int64_t iteration = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  FfmParams ffm;
  std::vector<LossRecord> curve;
};

inline void write_loss_csv(const std::string& path, const std::vector<LossRecord>& curve) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "iteration,loss,lr\n";
  os.precision(17);
  for (const auto& r : curve) os << r.iteration << ',' << r.loss << ',' << r.lr << '\n';
}

/// One cropped training interval plus the cached extractor features for it.
struct TrainingSample {
  Interval interval;
  std::vector<FeatureMap> context;
  std::vector<ChromaMap> chroma;
};

namespace detail {

inline FlowField crop_flow(const FlowField& f, int y, int x, int h, int w) { return FlowField(crop(f.uv, y, x, h, w)); }

}  // namespace detail

/// Loss and FFM gradients of one interval.
inline double interval_loss_and_grad(const TrainingSample& s, const Backbone& backbone, const FfmParams& ffm,
                                     const TrainConfig& cfg, FfmGrads* grads) {
  const auto run = run_interval(s.interval, backbone, ffm, {}, grads != nullptr, s.context);
  std::vector<ChromaMap> g;
  double loss = 0.0;
  if (cfg.objective == Objective::temporal_warping)
    loss = temporal_warping_loss(run.chroma, make_warp_terms(s.interval, cfg), grads ? &g : nullptr);
  else
    loss = ground_truth_loss(run.chroma, s.chroma, grads ? &g : nullptr);
  if (grads != nullptr) backprop_interval(run, s.interval, ffm, backbone, g, *grads);
  return loss;
}

/// Trains only the FFM parameters with Adam and the halving schedule. The
/// backbone is taken by const reference and never modified. Extractor
/// features are computed once per full frame and cropped with the frames.
inline TrainResult train_fusion(const Backbone& backbone, FfmParams ffm, const std::vector<TrainingSequence>& data,
                              const TrainConfig& cfg,
                              const std::function<void(const LossRecord&)>& on_iteration = {}) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("train_fusion: empty dataset");
  for (const auto& s : data) {
    s.validate();
    if (static_cast<int>(s.frames.size()) < cfg.interval_len_train)
      throw std::invalid_argument("train_fusion: sequence shorter than interval_len_train");
    if (cfg.objective == Objective::ground_truth_l2 && s.chroma.size() != s.frames.size())
      throw std::invalid_argument("train_fusion: ground-truth objective needs chroma for every frame");
    if (s.frames.front().channels() != 1) throw DimensionError("train_fusion: frames must be single channel");
  }
  if (backbone.feature_channels() != ffm.config.feature_channels)
    throw DimensionError("train_fusion: backbone and FFM feature widths differ");

  TrainResult result;
  if (cfg.iterations == 0) {
    result.ffm = std::move(ffm);
    return result;
  }

  std::vector<std::vector<FeatureMap>> features(data.size());
  auto features_of = [&](std::size_t k) -> const std::vector<FeatureMap>& {
    if (features[k].empty())
      for (const auto& f : data[k].frames) features[k].push_back(backbone.extract(f));
    return features[k];
  };

  std::mt19937_64 rng(cfg.seed);
  nn::Adam adam;
  const int n = cfg.interval_len_train;
  for (int it = 0; it < cfg.iterations; ++it) {
    FfmGrads grads(ffm);
    double loss = 0.0;
    for (int b = 0; b < cfg.batch; ++b) {
      const std::size_t k = rng() % data.size();
      const auto& seq = data[k];
      const auto& feats = features_of(k);
      const int start = static_cast<int>(rng() % (seq.frames.size() - n + 1));
      const int H = seq.frames.front().height(), W = seq.frames.front().width();
      const int ph = std::min(cfg.patch, H), pw = std::min(cfg.patch, W);
      const int y0 = static_cast<int>(rng() % (H - ph + 1));
      const int x0 = static_cast<int>(rng() % (W - pw + 1));

      TrainingSample s;
      for (int j = 0; j < n; ++j) {
        s.interval.frames.push_back(crop(seq.frames[start + j], y0, x0, ph, pw));
        s.context.push_back(crop(feats[start + j], y0, x0, ph, pw));
        if (!seq.chroma.empty()) s.chroma.push_back(crop(seq.chroma[start + j], y0, x0, ph, pw));
        if (j + 1 < n) {
          s.interval.flows_fw.push_back(detail::crop_flow(seq.flows.fw[start + j], y0, x0, ph, pw));
          s.interval.flows_bw.push_back(detail::crop_flow(seq.flows.bw[start + j], y0, x0, ph, pw));
        }
      }
      FfmGrads g(ffm);
      loss += interval_loss_and_grad(s, backbone, ffm, cfg, &g) / cfg.batch;
      grads += g;
    }
    const double lr = learning_rate(cfg, it);
    auto params = ffm.spans();
    auto gspans = grads.spans();
    // Average over the batch.
    std::vector<std::vector<double>> averaged;
    averaged.reserve(gspans.size());
    std::vector<std::span<const double>> avg_spans;
    for (auto s : gspans) {
      averaged.emplace_back(s.begin(), s.end());
      for (auto& v : averaged.back()) v /= cfg.batch;
      avg_spans.emplace_back(averaged.back());
    }
    adam.step(params, avg_spans, lr);
    LossRecord rec{it, loss, lr};
    result.curve.push_back(rec);
    if (on_iteration) on_iteration(rec);
  }
  result.ffm = std::move(ffm);
  return result;
}

}  // namespace chromaprop
