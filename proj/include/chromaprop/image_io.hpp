#pragma once

// 8-bit PNG frames and numbered frame directories (00001.png, 00002.png, ...).

#include <png.h>

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "chromaprop/colorspace.hpp"
#include "chromaprop/flowfield.hpp"

namespace chromaprop {

/// Any PNG (gray, palette, alpha, 16-bit) is converted to 8-bit RGB.
inline RgbImage read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str()))
    throw std::runtime_error("cannot read " + path.string() + ": " + image.message);
  image.format = PNG_FORMAT_RGB;
  if (image.height < 1 || image.width < 1) {
    png_image_free(&image);
    throw FormatError(path.string() + ": empty image");
  }
  RgbImage img(static_cast<int>(image.height), static_cast<int>(image.width));
  if (!png_image_finish_read(&image, nullptr, img.data.data(), 0, nullptr)) {
    png_image_free(&image);
    throw std::runtime_error("cannot decode " + path.string() + ": " + image.message);
  }
  return img;
}

inline void write_png(const std::filesystem::path& path, const RgbImage& img) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, img.data.data(), 0, nullptr))
    throw std::runtime_error("cannot write " + path.string() + ": " + image.message);
}

/// Reads 00001.png, 00002.png, ... until the first gap.
inline std::vector<RgbImage> read_frame_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
  std::vector<RgbImage> frames;
  for (int i = 1;; ++i) {
    const auto p = dir / indexed_name(i, ".png");
    if (!std::filesystem::exists(p)) break;
    frames.push_back(read_png(p));
    if (frames.back().height != frames.front().height || frames.back().width != frames.front().width)
      throw DimensionError(p.string() + ": frame size differs from frame 1");
  }
  if (frames.empty()) throw std::runtime_error("no frames (00001.png ...) in " + dir.string());
  return frames;
}

inline void write_frame_dir(const std::filesystem::path& dir, const std::vector<RgbImage>& frames) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < frames.size(); ++i)
    write_png(dir / indexed_name(static_cast<int>(i) + 1, ".png"), frames[i]);
}

}  // namespace chromaprop
