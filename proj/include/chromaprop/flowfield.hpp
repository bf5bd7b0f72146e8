#pragma once

// Optical-flow fields, bilinear backward warping (with its adjoint), forward-
// backward occlusion tests, oracle flow for synthetic motion, and Middlebury
// .flo I/O.
//
// Convention: a field f_{src->dst} lives on the destination grid. Pixel p of
// dst corresponds to location p + uv(p) in src, so warp(src, f) is aligned
// with dst.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "chromaprop/tensor.hpp"

namespace chromaprop {

/// Binary {0,1} per-pixel mask stored as one channel.
using Mask = Tensor<double>;

/// Per-pixel displacement in pixels: channel 0 = u (horizontal), 1 = v.
struct FlowField {
  Tensor<float> uv;

  FlowField() = default;
  FlowField(int height, int width) : uv(2, height, width) {}
  explicit FlowField(Tensor<float> t) : uv(std::move(t)) {
    if (uv.channels() != 2) throw DimensionError("FlowField needs exactly two channels");
  }

  int height() const { return uv.height(); }
  int width() const { return uv.width(); }
  Shape spatial() const { return {1, height(), width()}; }
  float u(int y, int x) const { return uv(0, y, x); }
  float v(int y, int x) const { return uv(1, y, x); }
  friend bool operator==(const FlowField&, const FlowField&) = default;
};

/// Precomputed bilinear sampling pattern of one flow field. Reused for every
/// channel and for the adjoint pass.
class BilinearSampler {
 public:
  explicit BilinearSampler(const FlowField& flow)
      : height_(flow.height()), width_(flow.width()), taps_(flow.uv.plane()), valid_(1, height_, width_) {
    const double max_x = width_ - 1;
    const double max_y = height_ - 1;
    for (int y = 0; y < height_; ++y) {
      for (int x = 0; x < width_; ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * width_ + x;
        double sx = x + static_cast<double>(flow.u(y, x));
        double sy = y + static_cast<double>(flow.v(y, x));
        const bool inside = sx >= 0.0 && sx <= max_x && sy >= 0.0 && sy <= max_y;
        valid_[p] = inside ? 1.0 : 0.0;
        sx = std::clamp(sx, 0.0, max_x);
        sy = std::clamp(sy, 0.0, max_y);
        const int x0 = static_cast<int>(std::floor(sx));
        const int y0 = static_cast<int>(std::floor(sy));
        const int x1 = std::min(x0 + 1, width_ - 1);
        const int y1 = std::min(y0 + 1, height_ - 1);
        const double ax = sx - x0;
        const double ay = sy - y0;
        Tap& t = taps_[p];
        t.index = {idx(y0, x0), idx(y0, x1), idx(y1, x0), idx(y1, x1)};
        t.weight = {(1.0 - ax) * (1.0 - ay), ax * (1.0 - ay), (1.0 - ax) * ay, ax * ay};
      }
    }
  }

  int height() const { return height_; }
  int width() const { return width_; }
  const Mask& validity() const { return valid_; }

  template <class T>
  Tensor<T> sample(const Tensor<T>& src) const {
    check(src.shape());
    Tensor<T> out(src.shape());
    const std::size_t n = src.plane();
    for (int c = 0; c < src.channels(); ++c) {
      const T* s = src.data() + c * n;
      T* o = out.data() + c * n;
      for (std::size_t p = 0; p < n; ++p) {
        const Tap& t = taps_[p];
        o[p] = static_cast<T>(t.weight[0] * s[t.index[0]] + t.weight[1] * s[t.index[1]] +
                              t.weight[2] * s[t.index[2]] + t.weight[3] * s[t.index[3]]);
      }
    }
    return out;
  }

  /// Adjoint of sample(): scatters gradient on the destination grid back to
  /// the source grid and accumulates into grad_src.
  template <class T>
  void accumulate_adjoint(const Tensor<T>& grad_out, Tensor<T>& grad_src) const {
    check(grad_out.shape());
    require_shape(grad_out.shape(), grad_src.shape(), "warp adjoint");
    const std::size_t n = grad_out.plane();
    for (int c = 0; c < grad_out.channels(); ++c) {
      const T* g = grad_out.data() + c * n;
      T* d = grad_src.data() + c * n;
      for (std::size_t p = 0; p < n; ++p) {
        const Tap& t = taps_[p];
        for (int k = 0; k < 4; ++k) d[t.index[k]] += static_cast<T>(t.weight[k] * g[p]);
      }
    }
  }

 private:
  struct Tap {
    std::array<std::uint32_t, 4> index{};
    std::array<double, 4> weight{};
  };

  std::uint32_t idx(int y, int x) const { return static_cast<std::uint32_t>(y * width_ + x); }
  void check(const Shape& s) const {
    if (s.height != height_ || s.width != width_)
      throw DimensionError("warp: source " + std::to_string(s.height) + "x" + std::to_string(s.width) +
                           " does not match flow " + std::to_string(height_) + "x" + std::to_string(width_));
  }

  int height_;
  int width_;
  std::vector<Tap> taps_;
  Mask valid_;
};

template <class T>
struct Warped {
  Tensor<T> warped;
  Mask valid;
};

/// Bilinear backward warp. Out-of-bounds sample positions are clamped to the
/// border and flagged 0 in the validity mask.
template <class T>
Warped<T> warp(const Tensor<T>& src, const FlowField& flow) {
  BilinearSampler s(flow);
  return {s.sample(src), s.validity()};
}

/// Gradient of <grad_out, warp(src, flow)> with respect to src.
template <class T>
Tensor<T> warp_adjoint(const Tensor<T>& grad_out, const FlowField& flow) {
  BilinearSampler s(flow);
  Tensor<T> g(grad_out.shape());
  s.accumulate_adjoint(grad_out, g);
  return g;
}

/// Chain two fields: a maps grid i into i+1, b maps grid i+1 into i+2; the
/// result maps grid i into i+2.
inline FlowField compose_flows(const FlowField& a, const FlowField& b) {
  require_spatial(a.uv.shape(), b.uv.shape(), "compose_flows");
  FlowField out(a.height(), a.width());
  const Tensor<float> bw = BilinearSampler(a).sample(b.uv);
  for (std::size_t i = 0; i < out.uv.size(); ++i) out.uv[i] = static_cast<float>(a.uv[i] + bw[i]);
  return out;
}

inline FlowField negate(const FlowField& f) {
  FlowField out = f;
  for (auto& v : out.uv.values()) v = -v;
  return out;
}

/// Forward-backward consistency test. `flow` is the field whose grid the mask
/// lives on, `reverse` the field of the opposite direction. 1 = non-occluded.
inline Mask occlusion_mask(const FlowField& flow, const FlowField& reverse) {
  require_spatial(flow.uv.shape(), reverse.uv.shape(), "occlusion_mask");
  const Tensor<float> back = BilinearSampler(flow).sample(reverse.uv);
  Mask m(1, flow.height(), flow.width());
  const std::size_t n = m.plane();
  for (std::size_t p = 0; p < n; ++p) {
    const double fu = flow.uv[p], fv = flow.uv[n + p];
    const double bu = back[p], bv = back[n + p];
    const double su = fu + bu, sv = fv + bv;
    const double lhs = su * su + sv * sv;
    const double rhs = 0.01 * (fu * fu + fv * fv + bu * bu + bv * bv) + 0.5;
    m[p] = lhs < rhs ? 1.0 : 0.0;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Oracle flow for synthetic translational motion.

struct Translation {
  double dx = 0.0;
  double dy = 0.0;
  friend bool operator==(const Translation&, const Translation&) = default;
};

/// Background motion plus translating layers. A layer's support is an H x W
/// {0,1} mask on the grid the field is defined on; later layers lie on top.
struct MotionSpec {
  struct Layer {
    Mask support;
    Translation step;
  };
  Translation background;
  std::vector<Layer> layers;
};

enum class TimeDirection {
  forward,   // field on grid i+1 sampling frame i
  backward,  // field on grid i sampling frame i+1
};

/// Exact correspondence field of content moving by `step` per frame.
inline FlowField synth_flow(const MotionSpec& motion, int height, int width,
                            TimeDirection dir = TimeDirection::forward) {
  const double sign = dir == TimeDirection::forward ? -1.0 : 1.0;
  FlowField f(height, width);
  const std::size_t n = f.uv.plane();
  for (const auto& layer : motion.layers)
    require_spatial(layer.support.shape(), f.spatial(), "synth_flow support");
  for (std::size_t p = 0; p < n; ++p) {
    Translation t = motion.background;
    for (const auto& layer : motion.layers)
      if (layer.support[p] != 0.0) t = layer.step;
    f.uv[p] = static_cast<float>(sign * t.dx);
    f.uv[n + p] = static_cast<float>(sign * t.dy);
  }
  return f;
}

// ---------------------------------------------------------------------------
// Middlebury .flo files.

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr float kFloMagic = 202021.25f;

namespace detail {

template <class U>
U to_little_endian(U v) {
  static_assert(sizeof(U) == 4);
  if constexpr (std::endian::native == std::endian::big) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    bits = ((bits & 0xFFu) << 24) | ((bits & 0xFF00u) << 8) | ((bits >> 8) & 0xFF00u) | (bits >> 24);
    std::memcpy(&v, &bits, 4);
  }
  return v;
}

template <class U>
void put(std::ostream& os, U v) {
  v = to_little_endian(v);
  os.write(reinterpret_cast<const char*>(&v), 4);
}

template <class U>
bool get(std::istream& is, U& v) {
  if (!is.read(reinterpret_cast<char*>(&v), 4)) return false;
  v = to_little_endian(v);
  return true;
}

}  // namespace detail

inline void write_flo(const std::filesystem::path& path, const FlowField& flow) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  detail::put(os, kFloMagic);
  detail::put(os, static_cast<std::int32_t>(flow.width()));
  detail::put(os, static_cast<std::int32_t>(flow.height()));
  for (int y = 0; y < flow.height(); ++y)
    for (int x = 0; x < flow.width(); ++x) {
      detail::put(os, flow.u(y, x));
      detail::put(os, flow.v(y, x));
    }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

inline FlowField read_flo(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  const std::string where = path.string() + ": ";
  float magic = 0.0f;
  std::int32_t width = 0, height = 0;
  if (!detail::get(is, magic)) throw FormatError(where + "truncated magic");
  if (magic != kFloMagic) throw FormatError(where + "bad magic " + std::to_string(magic));
  if (!detail::get(is, width)) throw FormatError(where + "truncated width");
  if (!detail::get(is, height)) throw FormatError(where + "truncated height");
  if (width <= 0) throw FormatError(where + "nonpositive width " + std::to_string(width));
  if (height <= 0) throw FormatError(where + "nonpositive height " + std::to_string(height));
  if (static_cast<long long>(width) * height > (1LL << 28)) throw FormatError(where + "implausible width x height");
  FlowField f(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      float u = 0.0f, v = 0.0f;
      if (!detail::get(is, u) || !detail::get(is, v))
        throw FormatError(where + "truncated payload at row " + std::to_string(y));
      f.uv(0, y, x) = u;
      f.uv(1, y, x) = v;
    }
  return f;
}

/// Name of the i-th (1-based) frame or flow file in a sequence directory.
inline std::string indexed_name(int index, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05d%s", index, ext);
  return buf;
}

/// Flows of a sequence: fw[i] maps grid i+1 into frame i, bw[i] maps grid i
/// into frame i+1 (0-based vectors; file index = i + 1).
struct FlowSequence {
  std::vector<FlowField> fw;
  std::vector<FlowField> bw;
};

inline void write_flow_dir(const std::filesystem::path& dir, const FlowSequence& flows) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "flow_fw");
  fs::create_directories(dir / "flow_bw");
  for (std::size_t i = 0; i < flows.fw.size(); ++i)
    write_flo(dir / "flow_fw" / indexed_name(static_cast<int>(i) + 1, ".flo"), flows.fw[i]);
  for (std::size_t i = 0; i < flows.bw.size(); ++i)
    write_flo(dir / "flow_bw" / indexed_name(static_cast<int>(i) + 1, ".flo"), flows.bw[i]);
}

/// Reads `pairs` consecutive flows from flow_fw/ and flow_bw/.
inline FlowSequence read_flow_dir(const std::filesystem::path& dir, int pairs) {
  FlowSequence s;
  for (int i = 1; i <= pairs; ++i) {
    const auto fw = dir / "flow_fw" / indexed_name(i, ".flo");
    const auto bw = dir / "flow_bw" / indexed_name(i, ".flo");
    if (!std::filesystem::exists(fw)) throw FormatError("missing flow file " + fw.string());
    if (!std::filesystem::exists(bw)) throw FormatError("missing flow file " + bw.string());
    s.fw.push_back(read_flo(fw));
    s.bw.push_back(read_flo(bw));
  }
  return s;
}

}  // namespace chromaprop
