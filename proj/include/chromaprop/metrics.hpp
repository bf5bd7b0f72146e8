#pragma once

// Video quality measures: color distribution consistency (CDC), warp error,
// PSNR, Lab L2 error and colorfulness.

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "chromaprop/colorspace.hpp"
#include "chromaprop/flowfield.hpp"

namespace chromaprop {

/// Normalized 256-bin histogram of one 8-bit channel.
using ColorHistogram = std::array<double, 256>;

inline ColorHistogram histogram(const RgbImage& img, int channel) {
  if (channel < 0 || channel > 2) throw std::invalid_argument("histogram: channel must be 0, 1 or 2");
  std::array<std::size_t, 256> counts{};
  for (std::size_t i = 0; i < img.pixels(); ++i) ++counts[img.data[3 * i + channel]];
  ColorHistogram p{};
  const double n = static_cast<double>(img.pixels());
  for (int k = 0; k < 256; ++k) p[k] = static_cast<double>(counts[k]) / n;
  return p;
}

/// Jensen-Shannon divergence in nats; 0 * log(0 / x) is taken as 0.
inline double js_divergence(const ColorHistogram& p, const ColorHistogram& q) {
  double js = 0.0;
  for (int k = 0; k < 256; ++k) {
    const double m = 0.5 * (p[k] + q[k]);
    const double a = p[k] > 0.0 ? p[k] * std::log(p[k] / m) : 0.0;
    const double b = q[k] > 0.0 ? q[k] * std::log(q[k] / m) : 0.0;
    js += 0.5 * (a + b);  // a + b == b + a, so swapping p and q is exact
  }
  return std::max(js, 0.0);
}

/// Mean JS divergence between frames t apart, over the three RGB channels.
inline double cdc_t(const std::vector<RgbImage>& video, int t) {
  const int n = static_cast<int>(video.size());
  if (t < 1) throw std::invalid_argument("cdc_t: t must be >= 1");
  if (n <= t) throw std::invalid_argument("cdc_t: video of " + std::to_string(n) + " frames is too short for t=" +
                                          std::to_string(t));
  std::vector<std::array<ColorHistogram, 3>> hist(n);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) hist[i][c] = histogram(video[i], c);
  double s = 0.0;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i + t < n; ++i) s += js_divergence(hist[i][c], hist[i + t][c]);
  return s / (3.0 * (n - t));
}

inline double cdc(const std::vector<RgbImage>& video) {
  if (video.size() <= 4) throw std::invalid_argument("cdc: needs more than 4 frames");
  return (cdc_t(video, 1) + cdc_t(video, 2) + cdc_t(video, 4)) / 3.0;
}

struct WarpErrorResult {
  double value = 0.0;
  std::vector<int> skipped_pairs;  // 0-based i of pairs (i, i+1) whose mask was empty
};

/// Mean over consecutive pairs of the masked mean squared RGB difference
/// between frame i and frame i+1 warped onto it. `flows_bw[i]` lives on grid
/// i and samples frame i+1; `masks[i]` marks usable pixels on grid i. Pixels
/// whose sample falls outside the frame are excluded as well.
inline WarpErrorResult warp_error(const std::vector<RgbImage>& video, const std::vector<FlowField>& flows_bw,
                                  const std::vector<Mask>& masks) {
  if (video.size() < 2) throw std::invalid_argument("warp_error: needs at least two frames");
  const std::size_t pairs = video.size() - 1;
  if (flows_bw.size() < pairs) throw std::invalid_argument("warp_error: missing flow for pair " +
                                                           std::to_string(flows_bw.size()));
  if (masks.size() < pairs) throw std::invalid_argument("warp_error: missing mask for pair " +
                                                        std::to_string(masks.size()));
  WarpErrorResult r;
  double total = 0.0;
  int used = 0;
  for (std::size_t i = 0; i < pairs; ++i) {
    const auto a = rgb_to_unit_tensor(video[i]);
    const auto b = rgb_to_unit_tensor(video[i + 1]);
    require_shape(a.shape(), b.shape(), "warp_error frames");
    require_spatial(masks[i].shape(), a.shape(), "warp_error mask");
    BilinearSampler sampler(flows_bw[i]);
    const auto bw = sampler.sample(b);
    const Mask& valid = sampler.validity();
    const std::size_t n = a.plane();
    double err = 0.0, weight = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      const double m = masks[i][p] * valid[p];
      if (m == 0.0) continue;
      double s = 0.0;
      for (int c = 0; c < 3; ++c) {
        const double d = a[c * n + p] - bw[c * n + p];
        s += d * d;
      }
      err += m * s;
      weight += m;
    }
    if (weight == 0.0) {
      r.skipped_pairs.push_back(static_cast<int>(i));
      continue;
    }
    total += err / weight;
    ++used;
  }
  if (used == 0) throw std::invalid_argument("warp_error: every frame pair has an empty mask");
  r.value = total / used;
  return r;
}

/// Warp error with non-occlusion masks from forward-backward consistency.
inline WarpErrorResult warp_error(const std::vector<RgbImage>& video, const FlowSequence& flows) {
  std::vector<Mask> masks;
  const std::size_t pairs = video.empty() ? 0 : video.size() - 1;
  if (flows.bw.size() < pairs || flows.fw.size() < pairs)
    throw std::invalid_argument("warp_error: missing flow for pair " +
                                std::to_string(std::min(flows.bw.size(), flows.fw.size())));
  for (std::size_t i = 0; i < pairs; ++i) masks.push_back(occlusion_mask(flows.bw[i], flows.fw[i]));
  return warp_error(video, flows.bw, masks);
}

inline constexpr double kPsnrCap = 99.0;

enum class PsnrSpace { rgb, lab };

inline const char* to_string(PsnrSpace s) { return s == PsnrSpace::rgb ? "rgb" : "lab"; }

namespace detail {

inline void require_same_size(const RgbImage& a, const RgbImage& b, const char* what) {
  if (a.height != b.height || a.width != b.width)
    throw DimensionError(std::string(what) + ": image sizes differ");
}

inline double psnr_from_mse(double mse, double peak) {
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

}  // namespace detail

/// PSNR over 8-bit RGB (peak 255), or over L,a,b (peak 100). Identical
/// images give the 99 dB cap.
inline double psnr(const RgbImage& pred, const RgbImage& gt, PsnrSpace space = PsnrSpace::rgb) {
  detail::require_same_size(pred, gt, "psnr");
  double se = 0.0;
  if (space == PsnrSpace::rgb) {
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
      const double d = static_cast<double>(pred.data[i]) - gt.data[i];
      se += d * d;
    }
    return detail::psnr_from_mse(se / static_cast<double>(pred.data.size()), 255.0);
  }
  const auto a = rgb_to_lab(pred), b = rgb_to_lab(gt);
  for (std::size_t i = 0; i < a.pixels(); ++i) {
    const double dl = a.L[i] - b.L[i], da = a.a[i] - b.a[i], db = a.b[i] - b.b[i];
    se += dl * dl + da * da + db * db;
  }
  return detail::psnr_from_mse(se / (3.0 * static_cast<double>(a.pixels())), 100.0);
}

/// Mean per-pixel Euclidean distance in Lab.
inline double lab_l2(const RgbImage& pred, const RgbImage& gt) {
  detail::require_same_size(pred, gt, "lab_l2");
  const auto a = rgb_to_lab(pred), b = rgb_to_lab(gt);
  double s = 0.0;
  for (std::size_t i = 0; i < a.pixels(); ++i) {
    const double dl = a.L[i] - b.L[i], da = a.a[i] - b.a[i], db = a.b[i] - b.b[i];
    s += std::sqrt(dl * dl + da * da + db * db);
  }
  return s / static_cast<double>(a.pixels());
}

/// Opponent-axis colorfulness: sqrt(var_rg + var_yb) + 0.3 sqrt(mean_rg^2 + mean_yb^2)
/// with rg = R - G and yb = (R + G) / 2 - B on 0..255 values.
inline double colorfulness(const RgbImage& img) {
  double s_rg = 0.0, s_yb = 0.0, ss_rg = 0.0, ss_yb = 0.0;
  const std::size_t n = img.pixels();
  for (std::size_t i = 0; i < n; ++i) {
    const double r = img.data[3 * i], g = img.data[3 * i + 1], b = img.data[3 * i + 2];
    const double rg = r - g, yb = 0.5 * (r + g) - b;
    s_rg += rg;
    s_yb += yb;
    ss_rg += rg * rg;
    ss_yb += yb * yb;
  }
  const double m_rg = s_rg / n, m_yb = s_yb / n;
  const double v_rg = std::max(0.0, ss_rg / n - m_rg * m_rg);
  const double v_yb = std::max(0.0, ss_yb / n - m_yb * m_yb);
  return std::sqrt(v_rg + v_yb) + 0.3 * std::sqrt(m_rg * m_rg + m_yb * m_yb);
}

}  // namespace chromaprop
