#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "wxstereo/autograd/nn.hpp"
#include "wxstereo/core/dataset.hpp"
#include "wxstereo/core/tensor.hpp"

namespace wxs::encoder {

/// Channel widths of the four pyramid scales (strides 4, 8, 16, 32).
struct ChannelPlan {
  int64_t c4 = 32;
  int64_t c8 = 64;
  int64_t c16 = 96;
  int64_t c32 = 128;
  friend bool operator==(const ChannelPlan&, const ChannelPlan&) = default;
};

struct EncoderConfig {
  ChannelPlan plan;
  int64_t stem_channels = 16;
  int64_t patch_size = 32;
  double leaky_slope = 0.1;
  bool use_bias = true;
  bool zero_init = false;
  uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

/// Feature maps at strides 4, 8, 16 (convolutional branch) and 32 (denoised
/// transformer branch), each [C_i, H/i, W/i].
struct FeaturePyramid {
  Tensor f4, f8, f16, f32;

  const Tensor& at(int scale) const;
  static constexpr std::array<int, 4> kScales{4, 8, 16, 32};
};

/// Differentiable outputs of the convolutional branch.
struct PyramidVars {
  ag::Var f4, f8, f16;
};

/// Throws ArgumentError unless H and W are positive multiples of 32.
void require_divisible(int64_t height, int64_t width);

/// Four stride-2 stages: stem (1/2), then 1/4, 1/8 and 1/16 outputs, each
/// followed by a stride-1 refinement conv.
class ConvPyramid {
 public:
  ConvPyramid(const EncoderConfig& cfg, nn::ParameterList& params, std::mt19937_64& rng);
  PyramidVars forward(const ag::Var& image) const;

 private:
  double slope_;
  nn::Conv2d stem_, s4a_, s4b_, s8a_, s8b_, s16a_, s16b_;
};

/// Transformer branch: stride-32 patch embedding plus fixed sinusoidal
/// positions, one self-attention block and an MLP. The positional embedding
/// leaks a shared, image-independent component into every token; the fitted
/// artifact map estimates that component so it can be subtracted.
class DenoiserModel {
 public:
  DenoiserModel(const EncoderConfig& cfg, nn::ParameterList& params, std::mt19937_64& rng);

  int64_t patch_size() const { return patch_; }
  int64_t token_width() const { return width_; }

  /// Raw tokens [N, token_width] for an image with H, W divisible by 32.
  ag::Var raw_tokens(const ag::Var& image) const;
  /// Raw tokens minus the artifact map, reshaped to [C_32, H/32, W/32].
  /// Throws ModelError when the artifact map was fitted on another grid.
  ag::Var forward(const ag::Var& image) const;

  const Tensor& artifact_map() const { return artifact_; }
  std::pair<int64_t, int64_t> artifact_grid() const { return {artifact_rows_, artifact_cols_}; }
  /// An empty tensor clears the map (identity denoiser).
  void set_artifact_map(Tensor map, int64_t grid_rows, int64_t grid_cols);
  /// Fits the artifact map from raw tokens of `images` (all same size).
  void fit(std::span<const Tensor> images);

 private:
  int64_t patch_;
  int64_t width_;
  double slope_;
  nn::Linear embed_, q_, k_, v_, o_, mlp1_, mlp2_;
  Tensor artifact_;
  int64_t artifact_rows_ = 0;
  int64_t artifact_cols_ = 0;
};

/// Shared-weight encoder for both views.
class RobustEncoder {
 public:
  explicit RobustEncoder(EncoderConfig cfg = {});
  // Layers hold handles into params_, so copies would alias weights.
  RobustEncoder(const RobustEncoder&) = delete;
  RobustEncoder& operator=(const RobustEncoder&) = delete;
  RobustEncoder(RobustEncoder&&) = default;
  RobustEncoder& operator=(RobustEncoder&&) = default;

  const EncoderConfig& config() const { return cfg_; }
  nn::ParameterList& parameters() { return params_; }
  const nn::ParameterList& parameters() const { return params_; }
  const ConvPyramid& conv() const { return conv_; }
  DenoiserModel& denoiser() { return denoiser_; }
  const DenoiserModel& denoiser() const { return denoiser_; }

  void save(const std::filesystem::path& path) const;
  static RobustEncoder load(const std::filesystem::path& path);

 private:
  EncoderConfig cfg_;
  nn::ParameterList params_;
  std::mt19937_64 rng_;
  ConvPyramid conv_;
  DenoiserModel denoiser_;
};

/// Convolutional scales only; f32 is left empty.
FeaturePyramid extract_pyramid(const Tensor& image, const RobustEncoder& encoder);
Tensor extract_denoised(const Tensor& image, const DenoiserModel& model);
FeaturePyramid extract_features(const Tensor& image, const RobustEncoder& encoder);

/// Per-position mean over images of (token - that image's mean token).
/// Throws InsufficientDataError for fewer than two batches.
Tensor fit_artifact_map(std::span<const Tensor> token_batches);

std::pair<FeaturePyramid, FeaturePyramid> encode_pair(const StereoSample& sample, const RobustEncoder& encoder);

/// Replicate-pads [C, H, W] on the bottom/right to multiples of `multiple`.
Tensor pad_to_multiple(const Tensor& image, int64_t multiple);

}  // namespace wxs::encoder
