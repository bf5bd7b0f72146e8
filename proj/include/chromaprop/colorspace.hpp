#pragma once

// sRGB (D65, piecewise gamma) <-> CIE Lab, and the normalized luminance /
// chrominance tensors the networks consume.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "chromaprop/tensor.hpp"

namespace chromaprop {

/// 8-bit sRGB image, interleaved RGB, row-major.
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  RgbImage() = default;
  RgbImage(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, fill) {
    if (h < 1 || w < 1) throw DimensionError("RgbImage needs H >= 1 and W >= 1");
  }

  std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
  std::uint8_t& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

/// Planar CIE Lab image. L in [0,100], a/b nominally [-110, 110].
struct LabImage {
  int height = 0;
  int width = 0;
  std::vector<float> L, a, b;

  LabImage() = default;
  LabImage(int h, int w)
      : height(h), width(w), L(static_cast<std::size_t>(h) * w), a(L.size()), b(L.size()) {}
  std::size_t pixels() const { return L.size(); }
  friend bool operator==(const LabImage&, const LabImage&) = default;
};

/// Grayscale frame: one channel holding L/100.
using Frame = Tensor<double>;
/// Two channels holding a/110 and b/110.
using ChromaMap = Tensor<double>;

inline constexpr double kLumScale = 100.0;
inline constexpr double kChromaScale = 110.0;

namespace detail {

// Rows of the linear-sRGB -> XYZ (D65) matrix; the white point is taken as
// the row sums so that R=G=B maps exactly onto the achromatic axis.
inline constexpr double kRgbToXyz[3][3] = {{0.4124564, 0.3575761, 0.1804375},
                                           {0.2126729, 0.7151522, 0.0721750},
                                           {0.0193339, 0.1191920, 0.9503041}};
inline constexpr double kXyzToRgb[3][3] = {{3.2404542, -1.5371385, -0.4985314},
                                           {-0.9692660, 1.8760108, 0.0415560},
                                           {0.0556434, -0.2040259, 1.0572252}};
inline constexpr double kWhite[3] = {kRgbToXyz[0][0] + kRgbToXyz[0][1] + kRgbToXyz[0][2],
                                     kRgbToXyz[1][0] + kRgbToXyz[1][1] + kRgbToXyz[1][2],
                                     kRgbToXyz[2][0] + kRgbToXyz[2][1] + kRgbToXyz[2][2]};
inline constexpr double kDelta = 6.0 / 29.0;

inline double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

inline double linear_to_srgb(double c) {
  return c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}

inline const std::array<double, 256>& linear_lut() {
  static const std::array<double, 256> lut = [] {
    std::array<double, 256> t{};
    for (int i = 0; i < 256; ++i) t[i] = srgb_to_linear(i / 255.0);
    return t;
  }();
  return lut;
}

inline double lab_f(double t) {
  return t > kDelta * kDelta * kDelta ? std::cbrt(t) : t / (3.0 * kDelta * kDelta) + 4.0 / 29.0;
}

inline double lab_f_inv(double f) {
  return f > kDelta ? f * f * f : 3.0 * kDelta * kDelta * (f - 4.0 / 29.0);
}

inline std::uint8_t quantize(double c01) {
  const double v = std::round(c01 * 255.0);
  return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
}

}  // namespace detail

/// Linear-light RGB triple in [0,1] -> Lab.
inline std::array<double, 3> linear_rgb_to_lab(double r, double g, double b) {
  using namespace detail;
  double xyz[3];
  for (int i = 0; i < 3; ++i) xyz[i] = kRgbToXyz[i][0] * r + kRgbToXyz[i][1] * g + kRgbToXyz[i][2] * b;
  const double fx = lab_f(xyz[0] / kWhite[0]);
  const double fy = lab_f(xyz[1] / kWhite[1]);
  const double fz = lab_f(xyz[2] / kWhite[2]);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

/// Lab -> gamma-encoded sRGB in [0,1], unclamped.
inline std::array<double, 3> lab_to_srgb01(double L, double a, double b) {
  using namespace detail;
  const double fy = (L + 16.0) / 116.0;
  const double fx = fy + a / 500.0;
  const double fz = fy - b / 200.0;
  const double xyz[3] = {kWhite[0] * lab_f_inv(fx), kWhite[1] * lab_f_inv(fy), kWhite[2] * lab_f_inv(fz)};
  std::array<double, 3> out{};
  for (int i = 0; i < 3; ++i) {
    const double lin = kXyzToRgb[i][0] * xyz[0] + kXyzToRgb[i][1] * xyz[1] + kXyzToRgb[i][2] * xyz[2];
    out[i] = linear_to_srgb(std::max(lin, 0.0));
  }
  return out;
}

inline std::array<double, 3> srgb8_to_lab(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const auto& lut = detail::linear_lut();
  return linear_rgb_to_lab(lut[r], lut[g], lut[b]);
}

inline std::array<std::uint8_t, 3> lab_to_srgb8(double L, double a, double b) {
  const auto c = lab_to_srgb01(L, a, b);
  return {detail::quantize(c[0]), detail::quantize(c[1]), detail::quantize(c[2])};
}

inline LabImage rgb_to_lab(const RgbImage& img) {
  LabImage lab(img.height, img.width);
  for (std::size_t i = 0; i < img.pixels(); ++i) {
    const auto v = srgb8_to_lab(img.data[3 * i], img.data[3 * i + 1], img.data[3 * i + 2]);
    lab.L[i] = static_cast<float>(v[0]);
    lab.a[i] = static_cast<float>(v[1]);
    lab.b[i] = static_cast<float>(v[2]);
  }
  return lab;
}

/// Out-of-gamut colors are clamped per channel after conversion.
inline RgbImage lab_to_rgb(const LabImage& lab) {
  RgbImage img(lab.height, lab.width);
  for (std::size_t i = 0; i < lab.pixels(); ++i) {
    const auto c = lab_to_srgb8(lab.L[i], lab.a[i], lab.b[i]);
    std::copy(c.begin(), c.end(), img.data.begin() + 3 * i);
  }
  return img;
}

inline std::pair<Frame, ChromaMap> normalize(const LabImage& lab) {
  Frame lum(1, lab.height, lab.width);
  ChromaMap ab(2, lab.height, lab.width);
  const std::size_t n = lab.pixels();
  for (std::size_t i = 0; i < n; ++i) {
    lum[i] = static_cast<double>(lab.L[i]) / kLumScale;
    ab[i] = static_cast<double>(lab.a[i]) / kChromaScale;
    ab[n + i] = static_cast<double>(lab.b[i]) / kChromaScale;
  }
  return {std::move(lum), std::move(ab)};
}

/// Exact inverse of normalize for every float-valued LabImage.
inline LabImage denormalize(const Frame& lum, const ChromaMap& ab) {
  if (lum.channels() != 1) throw DimensionError("denormalize: frame must have one channel");
  if (ab.channels() != 2) throw DimensionError("denormalize: chroma map must have two channels");
  require_spatial(lum.shape(), ab.shape(), "denormalize");
  LabImage lab(lum.height(), lum.width());
  const std::size_t n = lab.pixels();
  for (std::size_t i = 0; i < n; ++i) {
    lab.L[i] = static_cast<float>(lum[i] * kLumScale);
    lab.a[i] = static_cast<float>(ab[i] * kChromaScale);
    lab.b[i] = static_cast<float>(ab[n + i] * kChromaScale);
  }
  return lab;
}

inline Frame frame_from_rgb(const RgbImage& img) { return normalize(rgb_to_lab(img)).first; }

/// Join a luminance frame with predicted chrominance and quantize to sRGB.
inline RgbImage compose_rgb(const Frame& lum, const ChromaMap& ab) { return lab_to_rgb(denormalize(lum, ab)); }

/// Achromatic rendering of a luminance frame.
inline RgbImage gray_rgb(const Frame& lum) { return compose_rgb(lum, ChromaMap(2, lum.height(), lum.width())); }

/// Gamma-encoded RGB in [0,1] as a 3-channel tensor (metrics operate on this).
inline Tensor<double> rgb_to_unit_tensor(const RgbImage& img) {
  Tensor<double> t(3, img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) t(c, y, x) = img.at(y, x, c) / 255.0;
  return t;
}

}  // namespace chromaprop
