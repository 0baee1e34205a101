#include "ldf/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace ldf {

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

Image8 to_image8(const std::vector<double>& values, int width, int height, int channels) {
  if (values.size() != static_cast<std::size_t>(width) * height * channels)
    throw std::invalid_argument("to_image8: size mismatch");
  Image8 img{width, height, channels, std::vector<std::uint8_t>(values.size())};
  std::transform(values.begin(), values.end(), img.pixels.begin(), quantize);
  return img;
}

std::vector<double> to_doubles(const Image8& image) {
  std::vector<double> out(image.pixels.size());
  std::transform(image.pixels.begin(), image.pixels.end(), out.begin(), dequantize);
  return out;
}

namespace {

int color_type(int channels) {
  if (channels == 1) return PNG_COLOR_TYPE_GRAY;
  if (channels == 3) return PNG_COLOR_TYPE_RGB;
  throw std::invalid_argument("png: only 1 or 3 channels are supported");
}

void on_warning(png_structp, png_const_charp) {}

struct ReadCursor {
  const std::vector<std::uint8_t>* bytes;
  std::size_t offset;
};

}  // namespace

std::vector<std::uint8_t> encode_png(const Image8& image) {
  const int type = color_type(image.channels);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, on_warning);
  if (!png) throw std::runtime_error("png: cannot create writer");
  png_infop info = png_create_info_struct(png);
  std::vector<std::uint8_t> out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png: encoding failed");
  }
  {
    png_set_write_fn(
        png, &out,
        [](png_structp p, png_bytep data, png_size_t n) {
          auto* buf = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(p));
          buf->insert(buf->end(), data, data + n);
        },
        nullptr);
    png_set_IHDR(png, info, image.width, image.height, 8, type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t stride = static_cast<std::size_t>(image.width) * image.channels;
    for (int y = 0; y < image.height; ++y)
      png_write_row(png, const_cast<png_bytep>(image.pixels.data() + y * stride));
    png_write_end(png, nullptr);
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

Image8 decode_png(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw std::runtime_error("png: bad signature");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, on_warning);
  if (!png) throw std::runtime_error("png: cannot create reader");
  png_infop info = png_create_info_struct(png);
  Image8 img;
  ReadCursor cursor{&bytes, 0};
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("png: decoding failed");
  }
  {
    png_set_read_fn(png, &cursor, [](png_structp p, png_bytep data, png_size_t n) {
      auto* c = static_cast<ReadCursor*>(png_get_io_ptr(p));
      if (c->offset + n > c->bytes->size()) png_error(p, "truncated stream");
      std::memcpy(data, c->bytes->data() + c->offset, n);
      c->offset += n;
    });
    png_read_info(png, info);
    const int bit_depth = png_get_bit_depth(png, info);
    const int type = png_get_color_type(png, info);
    if (bit_depth == 16) png_set_strip_16(png);
    if (type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    img.width = static_cast<int>(png_get_image_width(png, info));
    img.height = static_cast<int>(png_get_image_height(png, info));
    img.channels = png_get_channels(png, info);
    if (img.channels != 1 && img.channels != 3) png_error(png, "unsupported channel layout");
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
    const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
    for (int y = 0; y < img.height; ++y) png_read_row(png, img.pixels.data() + y * stride, nullptr);
    png_read_end(png, nullptr);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png(const std::filesystem::path& path, const Image8& image) {
  const std::vector<std::uint8_t> bytes = encode_png(image);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

Image8 read_png(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_png(bytes);
}

Image8 depth_image(const std::vector<double>& depth, const std::vector<double>& alpha, int width, int height,
                   double near, double far) {
  const std::size_t n = static_cast<std::size_t>(width) * height;
  if (depth.size() != n || alpha.size() != n) throw std::invalid_argument("depth_image: size mismatch");
  Image8 img{width, height, 1, std::vector<std::uint8_t>(n, 0)};
  const double span = std::max(far - near, 1e-12);
  for (std::size_t i = 0; i < n; ++i)
    if (alpha[i] >= 0.5) img.pixels[i] = quantize(1.0 - (depth[i] - near) / span);
  return img;
}

}  // namespace ldf
