#pragma once

// Whole-video orchestration: interval planning, per-video colorization with
// shared anchors, ensembling over interval lengths, flow lookup and the
// on-disk layout of sequences.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "chromaprop/backbone.hpp"
#include "chromaprop/checkpoint.hpp"
#include "chromaprop/colorspace.hpp"
#include "chromaprop/config.hpp"
#include "chromaprop/flowfield.hpp"
#include "chromaprop/fusion.hpp"
#include "chromaprop/image_io.hpp"
#include "chromaprop/propagation.hpp"
#include "chromaprop/srl.hpp"
#include "chromaprop/synthetic.hpp"

namespace chromaprop {

/// Inclusive 1-based frame range; neighbours share their boundary anchor.
struct IntervalSpan {
  int start = 1;
  int end = 2;
  int size() const { return end - start + 1; }
  friend bool operator==(const IntervalSpan&, const IntervalSpan&) = default;
};

/// [1,N], [N,2N-1], ... with the last interval cut at T. Because neighbours
/// share an anchor, a leftover always has at least two frames.
inline std::vector<IntervalSpan> plan_intervals(int total, int n) {
  if (total < 2) throw std::invalid_argument("plan_intervals: need at least two frames, got " + std::to_string(total));
  if (n < 2) throw std::invalid_argument("plan_intervals: interval length must be >= 2, got " + std::to_string(n));
  std::vector<IntervalSpan> plan;
  for (int s = 1; s < total;) {
    const int e = std::min(s + n - 1, total);
    plan.push_back({s, e});
    s = e;
  }
  return plan;
}

inline Interval make_interval(const std::vector<Frame>& frames, const FlowSequence& flows, const IntervalSpan& span) {
  Interval in;
  for (int i = span.start; i <= span.end; ++i) in.frames.push_back(frames[i - 1]);
  for (int i = span.start; i < span.end; ++i) {
    in.flows_fw.push_back(flows.fw[i - 1]);
    in.flows_bw.push_back(flows.bw[i - 1]);
  }
  return in;
}

inline void check_video(const std::vector<Frame>& frames, const FlowSequence& flows) {
  if (frames.size() < 2) throw std::invalid_argument("video needs at least two frames");
  const std::size_t pairs = frames.size() - 1;
  if (flows.fw.size() < pairs || flows.bw.size() < pairs)
    throw std::invalid_argument("video of " + std::to_string(frames.size()) + " frames needs " +
                                std::to_string(pairs) + " forward and backward flows");
}

/// Normalized ab for every frame. Extractor features are computed once per
/// frame, so an anchor shared by two intervals is processed once.
inline std::vector<ChromaMap> colorize_chroma(const std::vector<Frame>& frames, const Backbone& backbone,
                                              const FfmParams& ffm, const FlowSequence& flows, int n,
                                              const PropagationOptions& opts = {}) {
  check_video(frames, flows);
  const auto plan = plan_intervals(static_cast<int>(frames.size()), n);
  std::vector<FeatureMap> features;
  features.reserve(frames.size());
  for (const auto& f : frames) {
    backbone.check_frame(f);
    features.push_back(backbone.extract(f));
  }
  std::vector<ChromaMap> out;
  out.reserve(frames.size());
  for (const auto& span : plan) {
    const auto interval = make_interval(frames, flows, span);
    std::vector<FeatureMap> ctx(features.begin() + (span.start - 1), features.begin() + span.end);
    auto run = run_interval(interval, backbone, ffm, opts, false, std::move(ctx));
    // The first frame of every interval after the first was emitted already.
    for (std::size_t k = out.empty() ? 0 : 1; k < run.chroma.size(); ++k) out.push_back(std::move(run.chroma[k]));
  }
  return out;
}

/// Single-image baseline: the backbone on every frame independently.
inline std::vector<ChromaMap> per_frame_chroma(const std::vector<Frame>& frames, const Backbone& backbone) {
  std::vector<ChromaMap> out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(backbone.predict(f));
  return out;
}

/// Pixelwise mean of the per-N results, taken in normalized ab.
inline std::vector<ChromaMap> ensemble_chroma(const std::vector<Frame>& frames, const Backbone& backbone,
                                              const FfmParams& ffm, const FlowSequence& flows,
                                              const std::vector<int>& lengths, const PropagationOptions& opts = {}) {
  if (lengths.empty()) throw std::invalid_argument("ensemble: no interval lengths given");
  for (int n : lengths)
    if (n < 2) throw std::invalid_argument("ensemble: interval length must be >= 2, got " + std::to_string(n));
  std::vector<ChromaMap> sum;
  for (int n : lengths) {
    auto c = colorize_chroma(frames, backbone, ffm, flows, n, opts);
    if (sum.empty()) {
      for (auto& m : c) sum.emplace_back(m.shape());
    }
    for (std::size_t i = 0; i < c.size(); ++i) sum[i] += c[i];
  }
  const double k = static_cast<double>(lengths.size());
  for (auto& m : sum)
    for (auto& v : m.values()) v /= k;
  return sum;
}

inline std::vector<RgbImage> assemble_rgb(const std::vector<Frame>& frames, const std::vector<ChromaMap>& chroma) {
  if (frames.size() != chroma.size()) throw DimensionError("assemble_rgb: frame and chroma counts differ");
  std::vector<RgbImage> out;
  out.reserve(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) out.push_back(compose_rgb(frames[i], chroma[i]));
  return out;
}

struct ColorizedVideo {
  std::vector<ChromaMap> chroma;
  std::vector<RgbImage> rgb;
};

inline ColorizedVideo colorize_video(const std::vector<Frame>& frames, const Backbone& backbone, const FfmParams& ffm,
                                     const FlowSequence& flows, int n, const PropagationOptions& opts = {}) {
  ColorizedVideo v;
  v.chroma = colorize_chroma(frames, backbone, ffm, flows, n, opts);
  v.rgb = assemble_rgb(frames, v.chroma);
  return v;
}

inline ColorizedVideo ensemble_colorize(const std::vector<Frame>& frames, const Backbone& backbone,
                                        const FfmParams& ffm, const FlowSequence& flows,
                                        const std::vector<int>& lengths, const PropagationOptions& opts = {}) {
  ColorizedVideo v;
  v.chroma = ensemble_chroma(frames, backbone, ffm, flows, lengths, opts);
  v.rgb = assemble_rgb(frames, v.chroma);
  return v;
}

/// Forward weight pinned to one and no refinement: plain forward propagation.
inline PropagationOptions unidirectional() {
  PropagationOptions o;
  o.fusion.fixed_weight = 1.0;
  o.fusion.refine = false;
  return o;
}

// ---------------------------------------------------------------------------
// Sequences on disk.
//
//   <seq>/00001.png ...        frames (or <seq>/gray/ and <seq>/color/)
//   <seq>/flow_fw/00001.flo    field on grid 2 sampling frame 1, ...
//   <seq>/flow_bw/00001.flo    field on grid 1 sampling frame 2, ...
//   <seq>/synth.cfg            synthetic spec + seed (oracle flow source)

inline constexpr const char* kSynthSpecFile = "synth.cfg";

inline void write_synthetic(const std::filesystem::path& dir, const SynthSpec& spec, std::uint64_t seed,
                            const SyntheticVideo& video) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  write_frame_dir(dir / "color", video.color);
  write_frame_dir(dir / "gray", video.gray);
  write_flow_dir(dir, video.flows);
  std::ofstream os(dir / kSynthSpecFile);
  if (!os) throw std::runtime_error("cannot write " + (dir / kSynthSpecFile).string());
  os << to_config_text(spec) << "seed = " << seed << '\n';
}

struct FlowLookup {
  FlowSequence flows;
  std::string source;  // "files:<dir>" or "oracle:<spec file>"
};

namespace detail {

inline std::optional<std::filesystem::path> find_upwards(const std::filesystem::path& frames_dir,
                                                         const std::filesystem::path& name) {
  for (const auto& d : {frames_dir, frames_dir.parent_path()})
    if (!d.empty() && std::filesystem::exists(d / name)) return d;
  return std::nullopt;
}

}  // namespace detail

/// `.flo` directories win (an explicit --flow-dir first, then next to the
/// frames), then the oracle of a synthetic sequence; anything else is an
/// error.
inline FlowLookup find_flows(const std::filesystem::path& frames_dir, const std::optional<std::filesystem::path>& flow_dir,
                             int pairs, int height, int width) {
  namespace fs = std::filesystem;
  FlowLookup r;
  std::optional<fs::path> dir = flow_dir;
  if (dir && !fs::is_directory(*dir / "flow_fw"))
    throw FormatError("flow directory " + dir->string() + " has no flow_fw/ subdirectory");
  if (!dir) dir = detail::find_upwards(frames_dir, "flow_fw");
  if (dir) {
    r.flows = read_flow_dir(*dir, pairs);
    r.source = "files:" + dir->string();
  } else if (auto spec_dir = detail::find_upwards(frames_dir, kSynthSpecFile)) {
    const auto path = *spec_dir / kSynthSpecFile;
    const auto cfg = Config::load(path);
    const auto spec = synth_spec_from_config(cfg);
    const auto seed = cfg.require_as<std::uint64_t>("seed");
    cfg.reject_unused();
    if (spec.frames != pairs + 1) throw FormatError(path.string() + ": spec frame count differs from the frames");
    r.flows = generate_synthetic(spec, seed).flows;
    r.source = "oracle:" + path.string();
  } else {
    throw std::runtime_error("no optical flow for " + frames_dir.string() +
                             ": pass --flow-dir or provide flow_fw/ and flow_bw/");
  }
  for (const auto* list : {&r.flows.fw, &r.flows.bw})
    for (const auto& f : *list)
      if (f.height() != height || f.width() != width)
        throw DimensionError("flow size " + std::to_string(f.width()) + "x" + std::to_string(f.height()) +
                             " differs from frame size " + std::to_string(width) + "x" + std::to_string(height));
  return r;
}

/// Luminance frames of a sequence directory: gray/ if present, else the
/// directory itself.
inline std::filesystem::path frames_dir_of(const std::filesystem::path& seq) {
  return std::filesystem::is_directory(seq / "gray") ? seq / "gray" : seq;
}

inline std::vector<Frame> luminance_of(const std::vector<RgbImage>& images) {
  std::vector<Frame> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(frame_from_rgb(img));
  return out;
}

inline std::vector<ChromaMap> chroma_of(const std::vector<RgbImage>& images) {
  std::vector<ChromaMap> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(normalize(rgb_to_lab(img)).second);
  return out;
}

/// Frames, flows and (when color/ exists) ground-truth chroma of a sequence.
inline TrainingSequence load_sequence(const std::filesystem::path& seq) {
  const auto images = read_frame_dir(frames_dir_of(seq));
  TrainingSequence s;
  s.frames = luminance_of(images);
  s.flows = find_flows(frames_dir_of(seq), std::nullopt, static_cast<int>(images.size()) - 1, images.front().height,
                       images.front().width)
                .flows;
  if (std::filesystem::is_directory(seq / "color")) {
    const auto color = read_frame_dir(seq / "color");
    if (color.size() != images.size()) throw FormatError(seq.string() + ": color/ and gray/ frame counts differ");
    s.chroma = chroma_of(color);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Training configuration files.

struct TrainingSetup {
  TrainConfig train;
  FfmConfig ffm;
  FfmInit init;
  std::string backbone_checkpoint;  // checkpoint holding the frozen backbone
  std::string loss_csv;             // optional loss curve output
};

inline TrainingSetup training_setup_from_config(const Config& c) {
  TrainingSetup s;
  auto& t = s.train;
  t.interval_len_train = c.get_as<int>("interval_len_train", t.interval_len_train);
  t.batch = c.get_as<int>("batch", t.batch);
  t.patch = c.get_as<int>("patch", t.patch);
  t.iterations = c.get_as<int>("iterations", t.iterations);
  t.lr0 = c.get_as<double>("lr0", t.lr0);
  t.lr_halving_period = c.get_as<int>("lr_halving_period", t.lr_halving_period);
  t.alpha = c.get_as<double>("alpha", t.alpha);
  t.warp_distances = c.get_list<int>("warp_distances", t.warp_distances);
  t.seed = c.get_as<std::uint64_t>("seed", t.seed);
  const auto objective = c.get("objective", "temporal_warping");
  if (objective == "temporal_warping")
    t.objective = Objective::temporal_warping;
  else if (objective == "ground_truth_l2")
    t.objective = Objective::ground_truth_l2;
  else
    throw ConfigError("objective must be temporal_warping or ground_truth_l2, got " + objective);
  s.ffm.hidden = c.get_as<int>("hidden", s.ffm.hidden);
  s.ffm.projection = c.get_as<int>("projection", s.ffm.projection);
  s.init.seed = c.get_as<std::uint64_t>("ffm_seed", s.init.seed);
  s.backbone_checkpoint = c.get("backbone_checkpoint", "");
  s.loss_csv = c.get("loss_csv", "");
  c.reject_unused();
  t.validate();
  if (s.ffm.hidden < 1 || s.ffm.projection < 1) throw ConfigError("hidden and projection must be >= 1");
  return s;
}

}  // namespace chromaprop
