#pragma once

#include <array>

#include "wxstereo/datagen/datagen.hpp"

// Deterministic stand-ins for the generation backends: pure functions of their
// inputs and seed.

namespace wxs::datagen::mock {

/// Echoes the condition name as the only keyword.
class EchoPromptBackend final : public PromptBackend {
 public:
  std::vector<std::string> keywords(const StereoSample& sample, Condition condition, uint64_t seed) override;
};

/// Rec. 601 luminance of the image.
class LuminanceDepthBackend final : public DepthBackend {
 public:
  Tensor predict(const Tensor& image, uint64_t seed) override;
};

/// Per-condition appearance: out_c = (1 - h) * gain_c * src_c^gamma_c + h * haze_c
/// with h = haze_strength * (1 - clamp(conditioning_scale * depth, 0, 1)).
struct ConditionLook {
  std::array<double, 3> gain;
  std::array<double, 3> gamma;
  std::array<double, 3> haze;
  double haze_strength;
};
const ConditionLook& look(Condition c);

/// The closed-form image for one view ([3, H, W], values in [0, 1]).
Tensor closed_form(const Tensor& image, const Tensor& depth, Condition condition, double conditioning_scale);

/// Closed form plus latent_mix times a latent residual. The latent is a
/// 4-channel map at 1/8 resolution that starts from seeded noise and relaxes
/// towards the downsampled closed form over `steps` steps; each step runs
/// self-attention at every site (through the interceptor when installed).
class DiffusionMock final : public DiffusionBackend {
 public:
  std::vector<dfm::AttentionSite> attention_sites() const override;
  void set_interceptor(dfm::SiteInterceptor* interceptor) override { interceptor_ = interceptor; }
  GeneratedPair generate(const GenerationRequest& request) override;

  static constexpr double kRelax = 0.1;
  static constexpr double kAttentionRate = 0.1;

 private:
  dfm::SiteInterceptor* interceptor_ = nullptr;
};

/// Plain softmax(X Xᵀ / √C) X over one token sequence.
Tensor self_attention(const Tensor& tokens);

}  // namespace wxs::datagen::mock
