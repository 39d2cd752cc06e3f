#pragma once

#include <filesystem>
#include <string>

#include "wxstereo/core/tensor.hpp"

namespace wxs {

/// Decodes any PNG to an RGB tensor [3, H, W] with values in [0, 1].
Tensor read_png_rgb(const std::filesystem::path& path);
Tensor decode_png_rgb(const std::string& bytes);

/// 8-bit RGB encoding; values are clamped to [0, 1] and rounded.
std::string encode_png_rgb(const Tensor& image);
void write_png_rgb(const Tensor& image, const std::filesystem::path& path);

/// Single-channel 8-bit masks: nonzero pixels decode to 1.0.
Tensor read_png_mask(const std::filesystem::path& path);
std::string encode_png_mask(const Tensor& mask);

/// Grayscale 8-bit from a [H, W] tensor in [0, 1].
std::string encode_png_gray(const Tensor& image);

}  // namespace wxs
