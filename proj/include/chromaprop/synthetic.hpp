#pragma once

// Synthetic videos with exact optical flow: textured rectangles translating
// by whole pixels over a panning textured background. Gray frames may carry
// per-frame luminance grain, which leaves the flow untouched.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "chromaprop/colorspace.hpp"
#include "chromaprop/config.hpp"
#include "chromaprop/flowfield.hpp"
#include "chromaprop/nn.hpp"

namespace chromaprop {

enum class Stripes { none, horizontal, vertical };

inline const char* to_string(Stripes s) {
  switch (s) {
    case Stripes::horizontal: return "horizontal";
    case Stripes::vertical: return "vertical";
    default: return "none";
  }
}

using Lab = std::array<double, 3>;

struct SynthObject {
  Lab color{50.0, 0.0, 0.0};
  int width = 8;
  int height = 8;
  int x = 0;  // top-left corner in the first frame
  int y = 0;
  int dx = 0;  // whole-pixel step per frame
  int dy = 0;
  Stripes stripes = Stripes::none;
  double texture = 0.0;  // stripe amplitude in L units
  int period = 4;        // stripe period in pixels
  // A small mark at the centre: L offset, its per-frame jitter (std) and size.
  double mark = 0.0;
  double mark_jitter = 0.0;
  int mark_size = 2;

  int left(int frame) const { return x + frame * dx; }
  int top(int frame) const { return y + frame * dy; }
  bool covers(int frame, int px, int py) const {
    const int l = left(frame), t = top(frame);
    return px >= l && px < l + width && py >= t && py < t + height;
  }
};

struct SynthSpec {
  int height = 32;
  int width = 32;
  int frames = 24;
  Lab background{40.0, 0.0, 0.0};
  double background_texture = 0.0;  // amplitude of the background pattern, L units
  int pan_dx = 0;                    // background step per frame
  int pan_dy = 0;
  double grain = 0.0;  // std of luminance noise on the gray frames, L units
  std::vector<SynthObject> objects;  // later objects are drawn on top

  /// Throws std::invalid_argument naming the first violated constraint.
  void validate() const {
    if (height < 1 || width < 1) throw std::invalid_argument("synth spec: canvas must be at least 1x1");
    if (frames < 2) throw std::invalid_argument("synth spec: needs at least two frames");
    if (grain < 0.0 || background_texture < 0.0) throw std::invalid_argument("synth spec: negative amplitude");
    for (std::size_t k = 0; k < objects.size(); ++k) {
      const auto& o = objects[k];
      const std::string name = "synth spec: object " + std::to_string(k);
      if (o.width < 1 || o.height < 1) throw std::invalid_argument(name + " has an empty size");
      if (o.period < 2) throw std::invalid_argument(name + " stripe period must be >= 2");
      if (o.texture < 0.0) throw std::invalid_argument(name + " has negative texture");
      if (o.mark_jitter < 0.0) throw std::invalid_argument(name + " has negative mark jitter");
      if (o.mark_size < 1) throw std::invalid_argument(name + " mark size must be >= 1");
      for (int f = 0; f < frames; ++f) {
        const bool inside = o.left(f) < width && o.left(f) + o.width > 0 && o.top(f) < height &&
                            o.top(f) + o.height > 0;
        if (!inside) throw std::invalid_argument(name + " leaves the canvas at frame " + std::to_string(f + 1));
      }
    }
  }
};

struct SyntheticVideo {
  std::vector<RgbImage> color;
  std::vector<RgbImage> gray;      // luminance of `color` plus grain
  std::vector<Frame> lum;          // normalized luminance of `gray`
  std::vector<ChromaMap> chroma;   // normalized ab of `color`
  FlowSequence flows;
  std::vector<Mask> visible_fw;  // 1 where flows.fw[i] points at the same surface point
  std::vector<Mask> visible_bw;
};

namespace detail {

/// Smooth pattern from a few plane waves; evaluated in content coordinates,
/// so whole-pixel shifts reproduce values exactly.
struct BackgroundPattern {
  struct Wave {
    double kx, ky, phase;
  };
  std::vector<Wave> waves;

  explicit BackgroundPattern(std::mt19937_64& rng) {
    for (int k = 0; k < 3; ++k) {
      const double angle = nn::uniform(rng, 0.0, 2.0 * std::numbers::pi);
      const double period = nn::uniform(rng, 5.0, 12.0);
      const double omega = 2.0 * std::numbers::pi / period;
      waves.push_back({omega * std::cos(angle), omega * std::sin(angle), nn::uniform(rng, 0.0, 2.0 * std::numbers::pi)});
    }
  }

  double operator()(int x, int y) const {
    double s = 0.0;
    for (const auto& w : waves) s += std::sin(w.kx * x + w.ky * y + w.phase);
    return s / static_cast<double>(waves.size());
  }
};

inline double stripe(const SynthObject& o, int u, int v) {
  if (o.stripes == Stripes::none || o.texture == 0.0) return 0.0;
  const int coord = o.stripes == Stripes::horizontal ? v : u;
  const int half = o.period / 2;
  return (coord / half) % 2 == 0 ? o.texture : -o.texture;
}

inline bool in_mark(const SynthObject& o, int u, int v) {
  const int u0 = (o.width - o.mark_size) / 2, v0 = (o.height - o.mark_size) / 2;
  return u >= u0 && u < u0 + o.mark_size && v >= v0 && v < v0 + o.mark_size;
}

/// Index of the topmost object at (px, py) in `frame`, or -1 for background.
inline int layer_at(const SynthSpec& spec, int frame, int px, int py) {
  for (int k = static_cast<int>(spec.objects.size()) - 1; k >= 0; --k)
    if (spec.objects[k].covers(frame, px, py)) return k;
  return -1;
}

inline std::pair<int, int> layer_step(const SynthSpec& spec, int layer) {
  if (layer < 0) return {spec.pan_dx, spec.pan_dy};
  return {spec.objects[layer].dx, spec.objects[layer].dy};
}

inline MotionSpec motion_at(const SynthSpec& spec, int frame) {
  MotionSpec m;
  m.background = {static_cast<double>(spec.pan_dx), static_cast<double>(spec.pan_dy)};
  for (const auto& o : spec.objects) {
    Mask support(1, spec.height, spec.width);
    for (int y = 0; y < spec.height; ++y)
      for (int x = 0; x < spec.width; ++x)
        if (o.covers(frame, x, y)) support(0, y, x) = 1.0;
    m.layers.push_back({std::move(support), {static_cast<double>(o.dx), static_cast<double>(o.dy)}});
  }
  return m;
}

/// 1 where the surface seen at a pixel of `frame` is still the visible one,
/// in bounds, at its position in `frame + direction`.
inline Mask visibility(const SynthSpec& spec, int frame, int direction) {
  Mask m(1, spec.height, spec.width);
  for (int y = 0; y < spec.height; ++y)
    for (int x = 0; x < spec.width; ++x) {
      const int layer = layer_at(spec, frame, x, y);
      const auto [sx, sy] = layer_step(spec, layer);
      const int tx = x + direction * sx, ty = y + direction * sy;
      if (tx < 0 || ty < 0 || tx >= spec.width || ty >= spec.height) continue;
      if (layer_at(spec, frame + direction, tx, ty) == layer) m(0, y, x) = 1.0;
    }
  return m;
}

}  // namespace detail

/// Renders `spec`. The seed drives the background pattern, the mark jitter
/// and the grain.
inline SyntheticVideo generate_synthetic(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  const detail::BackgroundPattern pattern(rng);
  SyntheticVideo v;
  const int H = spec.height, W = spec.width;
  std::vector<double> mark(spec.objects.size());
  for (int f = 0; f < spec.frames; ++f) {
    for (std::size_t k = 0; k < mark.size(); ++k) {
      const auto& o = spec.objects[k];
      mark[k] = o.mark + (o.mark_jitter > 0.0 ? nn::normal(rng, 0.0, o.mark_jitter) : 0.0);
    }
    RgbImage color(H, W), gray(H, W);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const int layer = detail::layer_at(spec, f, x, y);
        Lab lab;
        if (layer < 0) {
          lab = spec.background;
          lab[0] += spec.background_texture * pattern(x - f * spec.pan_dx, y - f * spec.pan_dy);
        } else {
          const auto& o = spec.objects[layer];
          lab = o.color;
          const int u = x - o.left(f), w = y - o.top(f);
          lab[0] += detail::in_mark(o, u, w) ? mark[layer] : detail::stripe(o, u, w);
        }
        lab[0] = std::clamp(lab[0], 0.0, 100.0);
        const auto rgb = lab_to_srgb8(lab[0], lab[1], lab[2]);
        for (int c = 0; c < 3; ++c) color.at(y, x, c) = rgb[c];
        double l = lab[0];
        if (spec.grain > 0.0) l = std::clamp(l + nn::normal(rng, 0.0, spec.grain), 0.0, 100.0);
        const auto g = lab_to_srgb8(l, 0.0, 0.0);
        for (int c = 0; c < 3; ++c) gray.at(y, x, c) = g[c];
      }
    v.lum.push_back(frame_from_rgb(gray));
    v.chroma.push_back(normalize(rgb_to_lab(color)).second);
    v.color.push_back(std::move(color));
    v.gray.push_back(std::move(gray));
  }
  for (int f = 0; f + 1 < spec.frames; ++f) {
    v.flows.fw.push_back(synth_flow(detail::motion_at(spec, f + 1), H, W, TimeDirection::forward));
    v.flows.bw.push_back(synth_flow(detail::motion_at(spec, f), H, W, TimeDirection::backward));
    v.visible_fw.push_back(detail::visibility(spec, f + 1, -1));
    v.visible_bw.push_back(detail::visibility(spec, f, +1));
  }
  return v;
}

// ---------------------------------------------------------------------------
// Spec files: flat key = value, objects as object.<k>.<field>.

namespace detail {

template <class T, std::size_t N>
std::array<T, N> parse_tuple(const Config& c, const std::string& key, std::array<T, N> fallback) {
  const auto v = c.get_list<T>(key, std::vector<T>(fallback.begin(), fallback.end()));
  if (v.size() != N) throw ConfigError(key + ": expected " + std::to_string(N) + " comma separated values");
  std::array<T, N> out{};
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

inline Stripes parse_stripes(const std::string& key, const std::string& s) {
  if (s == "none") return Stripes::none;
  if (s == "horizontal") return Stripes::horizontal;
  if (s == "vertical") return Stripes::vertical;
  throw ConfigError(key + ": expected none, horizontal or vertical");
}

}  // namespace detail

inline SynthSpec synth_spec_from_config(const Config& c) {
  SynthSpec s;
  s.height = c.get_as<int>("height", s.height);
  s.width = c.get_as<int>("width", s.width);
  s.frames = c.get_as<int>("frames", s.frames);
  s.background = detail::parse_tuple<double, 3>(c, "background", s.background);
  s.background_texture = c.get_as<double>("background_texture", 0.0);
  const auto pan = detail::parse_tuple<int, 2>(c, "pan", {0, 0});
  s.pan_dx = pan[0];
  s.pan_dy = pan[1];
  s.grain = c.get_as<double>("grain", 0.0);
  for (int k = 0;; ++k) {
    const std::string p = "object." + std::to_string(k) + ".";
    if (!c.has(p + "color")) break;
    SynthObject o;
    o.color = detail::parse_tuple<double, 3>(c, p + "color", o.color);
    const auto size = detail::parse_tuple<int, 2>(c, p + "size", {o.width, o.height});
    o.width = size[0];
    o.height = size[1];
    const auto pos = detail::parse_tuple<int, 2>(c, p + "position", {0, 0});
    o.x = pos[0];
    o.y = pos[1];
    const auto step = detail::parse_tuple<int, 2>(c, p + "step", {0, 0});
    o.dx = step[0];
    o.dy = step[1];
    o.stripes = detail::parse_stripes(p + "stripes", c.get(p + "stripes", "none"));
    o.texture = c.get_as<double>(p + "texture", 0.0);
    o.period = c.get_as<int>(p + "period", o.period);
    o.mark = c.get_as<double>(p + "mark", 0.0);
    o.mark_jitter = c.get_as<double>(p + "mark_jitter", 0.0);
    o.mark_size = c.get_as<int>(p + "mark_size", o.mark_size);
    s.objects.push_back(o);
  }
  return s;
}

inline std::string to_config_text(const SynthSpec& s) {
  std::ostringstream os;
  os.precision(17);
  os << "height = " << s.height << "\nwidth = " << s.width << "\nframes = " << s.frames << '\n';
  os << "background = " << s.background[0] << ", " << s.background[1] << ", " << s.background[2] << '\n';
  os << "background_texture = " << s.background_texture << '\n';
  os << "pan = " << s.pan_dx << ", " << s.pan_dy << '\n';
  os << "grain = " << s.grain << '\n';
  for (std::size_t k = 0; k < s.objects.size(); ++k) {
    const auto& o = s.objects[k];
    const std::string p = "object." + std::to_string(k) + ".";
    os << p << "color = " << o.color[0] << ", " << o.color[1] << ", " << o.color[2] << '\n';
    os << p << "size = " << o.width << ", " << o.height << '\n';
    os << p << "position = " << o.x << ", " << o.y << '\n';
    os << p << "step = " << o.dx << ", " << o.dy << '\n';
    os << p << "stripes = " << to_string(o.stripes) << '\n';
    os << p << "texture = " << o.texture << '\n';
    os << p << "period = " << o.period << '\n';
    os << p << "mark = " << o.mark << '\n';
    os << p << "mark_jitter = " << o.mark_jitter << '\n';
    os << p << "mark_size = " << o.mark_size << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Random worlds for training and evaluation.

/// Two surfaces with equal lightness that differ only in hue. Stripes are
/// drawn at random, so the sign of the centre mark (bright for `first`,
/// dark for `second`) is the only luminance cue telling them apart.
struct AmbiguousPair {
  Lab first;
  Lab second;
};

inline const std::vector<AmbiguousPair>& default_palette() {
  static const std::vector<AmbiguousPair> p = {
      {{55.0, 55.0, 40.0}, {55.0, -50.0, 45.0}},
      {{68.0, 30.0, 60.0}, {68.0, -5.0, -40.0}},
  };
  return p;
}

struct WorldOptions {
  int height = 32;
  int width = 32;
  int frames = 24;
  int min_objects = 1;
  int max_objects = 3;
  int min_size = 6;
  int max_size = 10;
  int max_speed = 2;
  int max_pan = 1;
  double stripe_texture = 6.0;
  double background_texture = 6.0;
  Lab background{35.0, 10.0, -25.0};
  double mark = 6.0;
  double mark_jitter = 6.0;
  double grain = 0.0;
};

inline SynthSpec random_world(std::uint64_t seed, const WorldOptions& opt = {}) {
  std::mt19937_64 rng(seed);
  auto pick = [&](int lo, int hi) { return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1)); };
  SynthSpec s;
  s.height = opt.height;
  s.width = opt.width;
  s.frames = opt.frames;
  s.background = opt.background;
  s.background_texture = opt.background_texture;
  s.grain = opt.grain;
  s.pan_dx = pick(-opt.max_pan, opt.max_pan);
  s.pan_dy = pick(-opt.max_pan, opt.max_pan);
  const auto& palette = default_palette();
  const int count = pick(opt.min_objects, opt.max_objects);
  for (int k = 0; k < count; ++k) {
    for (int attempt = 0;; ++attempt) {
      SynthObject o;
      const auto& pair = palette[rng() % palette.size()];
      const bool first = rng() % 2 == 0;
      o.color = first ? pair.first : pair.second;
      o.mark = first ? opt.mark : -opt.mark;
      o.mark_jitter = opt.mark_jitter;
      o.stripes = rng() % 2 == 0 ? Stripes::horizontal : Stripes::vertical;
      o.texture = opt.stripe_texture;
      o.width = pick(opt.min_size, opt.max_size);
      o.height = pick(opt.min_size, opt.max_size);
      o.x = pick(-o.width / 2, opt.width - o.width / 2);
      o.y = pick(-o.height / 2, opt.height - o.height / 2);
      o.dx = pick(-opt.max_speed, opt.max_speed);
      o.dy = pick(-opt.max_speed, opt.max_speed);
      SynthSpec trial = s;
      trial.objects = {o};
      try {
        trial.validate();
      } catch (const std::invalid_argument&) {
        if (attempt < 1000) continue;
        o.dx = o.dy = 0;
        o.x = (opt.width - o.width) / 2;
        o.y = (opt.height - o.height) / 2;
      }
      s.objects.push_back(o);
      break;
    }
  }
  return s;
}

}  // namespace chromaprop
