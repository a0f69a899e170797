#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace ade {

// 8-bit interleaved RGB.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::uint8_t& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
};

// Planar float image, channel-major (C, H, W).
struct PlanarImage {
  int size = 0;
  std::vector<double> data;

  double at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * size + y) * size + x];
  }
};

// Throws DataError when the file is missing or not a decodable PNG. Gray and
// alpha channels are converted to RGB.
RgbImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RgbImage& image);

// Bilinear resize to size x size (half-pixel centers, edge clamped), scaled to
// [0, 1], then per-channel (x - mean) / std.
PlanarImage preprocess(const RgbImage& image, int size, const std::array<double, 3>& mean,
                       const std::array<double, 3>& std);

}  // namespace ade
