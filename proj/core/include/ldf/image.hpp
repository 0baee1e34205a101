#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ldf {

/// 8-bit image with 1 (gray) or 3 (RGB) interleaved channels.
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool operator==(const Image8&) const = default;
};

/// round(clamp(v, 0, 1) · 255).
std::uint8_t quantize(double v);
inline double dequantize(std::uint8_t v) { return v / 255.0; }

/// Image from row-major float data in [0, 1] with `channels` per pixel.
Image8 to_image8(const std::vector<double>& values, int width, int height, int channels);
std::vector<double> to_doubles(const Image8& image);

std::vector<std::uint8_t> encode_png(const Image8& image);
Image8 decode_png(const std::vector<std::uint8_t>& bytes);

void write_png(const std::filesystem::path& path, const Image8& image);
Image8 read_png(const std::filesystem::path& path);

/// Depth visualisation: near maps to white, far to black, empty pixels
/// (alpha below 0.5) to black.
Image8 depth_image(const std::vector<double>& depth, const std::vector<double>& alpha, int width, int height,
                   double near, double far);

}  // namespace ldf
