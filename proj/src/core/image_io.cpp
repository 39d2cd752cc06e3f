#include "wxstereo/core/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "wxstereo/core/errors.hpp"
#include "wxstereo/core/fileio.hpp"

namespace wxs {
namespace {

struct PngImage {
  png_image image;
  PngImage() {
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
  }
  ~PngImage() { png_image_free(&image); }
  PngImage(const PngImage&) = delete;
  PngImage& operator=(const PngImage&) = delete;
};

std::vector<uint8_t> decode(const std::string& bytes, uint32_t format, png_uint_32& w, png_uint_32& h) {
  PngImage png;
  if (!png_image_begin_read_from_memory(&png.image, bytes.data(), bytes.size()))
    throw FormatError(std::string("PNG: ") + png.image.message);
  png.image.format = format;
  std::vector<uint8_t> buf(PNG_IMAGE_SIZE(png.image));
  if (!png_image_finish_read(&png.image, nullptr, buf.data(), 0, nullptr))
    throw FormatError(std::string("PNG: ") + png.image.message);
  w = png.image.width;
  h = png.image.height;
  return buf;
}

std::string encode(const std::vector<uint8_t>& pixels, png_uint_32 w, png_uint_32 h, uint32_t format) {
  PngImage png;
  png.image.width = w;
  png.image.height = h;
  png.image.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png.image, nullptr, &size, 0, pixels.data(), 0, nullptr))
    throw IoError(std::string("PNG encode: ") + png.image.message);
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&png.image, out.data(), &size, 0, pixels.data(), 0, nullptr))
    throw IoError(std::string("PNG encode: ") + png.image.message);
  out.resize(size);
  return out;
}

uint8_t quantize(double v) {
  return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

Tensor decode_png_rgb(const std::string& bytes) {
  png_uint_32 w = 0, h = 0;
  const auto buf = decode(bytes, PNG_FORMAT_RGB, w, h);
  Tensor out({3, static_cast<int64_t>(h), static_cast<int64_t>(w)});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c) out.at(c, y, x) = buf[static_cast<size_t>((y * w + x) * 3 + c)] / 255.0;
  return out;
}

Tensor read_png_rgb(const std::filesystem::path& path) {
  try {
    return decode_png_rgb(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string encode_png_rgb(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw ArgumentError("expected an RGB tensor [3, H, W], got " + shape_str(image.shape()));
  const int64_t h = image.dim(1), w = image.dim(2);
  std::vector<uint8_t> px(static_cast<size_t>(h * w * 3));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c) px[static_cast<size_t>((y * w + x) * 3 + c)] = quantize(image.at(c, y, x));
  return encode(px, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), PNG_FORMAT_RGB);
}

void write_png_rgb(const Tensor& image, const std::filesystem::path& path) { write_file(path, encode_png_rgb(image)); }

Tensor read_png_mask(const std::filesystem::path& path) {
  png_uint_32 w = 0, h = 0;
  const auto buf = decode(read_file(path), PNG_FORMAT_GRAY, w, h);
  Tensor out({static_cast<int64_t>(h), static_cast<int64_t>(w)});
  for (size_t i = 0; i < buf.size(); ++i) out[static_cast<int64_t>(i)] = buf[i] != 0 ? 1.0 : 0.0;
  return out;
}

std::string encode_png_mask(const Tensor& mask) {
  if (mask.rank() != 2) throw ArgumentError("mask must be [H, W], got " + shape_str(mask.shape()));
  std::vector<uint8_t> px(static_cast<size_t>(mask.numel()));
  for (int64_t i = 0; i < mask.numel(); ++i) px[static_cast<size_t>(i)] = mask[i] != 0.0 ? 255 : 0;
  return encode(px, static_cast<png_uint_32>(mask.dim(1)), static_cast<png_uint_32>(mask.dim(0)), PNG_FORMAT_GRAY);
}

std::string encode_png_gray(const Tensor& image) {
  if (image.rank() != 2) throw ArgumentError("gray image must be [H, W], got " + shape_str(image.shape()));
  std::vector<uint8_t> px(static_cast<size_t>(image.numel()));
  for (int64_t i = 0; i < image.numel(); ++i) px[static_cast<size_t>(i)] = quantize(image[i]);
  return encode(px, static_cast<png_uint_32>(image.dim(1)), static_cast<png_uint_32>(image.dim(0)), PNG_FORMAT_GRAY);
}

}  // namespace wxs
