#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "wxstereo/core/tensor.hpp"

namespace wxs {

/// Single-channel PFM ("Pf") raster, rows stored top-down in memory.
struct PfmImage {
  int64_t width = 0;
  int64_t height = 0;
  std::vector<float> data;  // row-major, top row first
  bool little_endian = true;
  float scale = 1.0f;       // absolute value of the header scale

  float at(int64_t y, int64_t x) const { return data[static_cast<size_t>(y * width + x)]; }

  Tensor to_tensor() const;
  /// Narrows to float32; non-finite values are rejected at write time.
  static PfmImage from_tensor(const Tensor& t, bool little_endian = true);
};

PfmImage decode_pfm(const std::string& bytes);
std::string encode_pfm(const PfmImage& image);

/// Throws FormatError on a malformed header and TruncationError when the
/// payload does not match the declared dimensions.
PfmImage read_pfm(const std::filesystem::path& path);

/// Throws ValidationError when any value is non-finite.
void write_pfm(const PfmImage& image, const std::filesystem::path& path);
void write_pfm(const Tensor& t, const std::filesystem::path& path, bool little_endian = true);

}  // namespace wxs
