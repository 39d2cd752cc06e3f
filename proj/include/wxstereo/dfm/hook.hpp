#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wxstereo/dfm/dfm.hpp"

namespace wxs::dfm {

/// A self-attention site inside a generation backbone. `downsample` is the
/// latent stride relative to the image (8 = 1/8 resolution).
struct AttentionSite {
  std::string name;
  int64_t downsample = 8;
};

/// Called by a backend at each attention site with the stacked two-view tokens
/// [2, N, C]. `attn` is the site's own attention over one sequence [L, C].
class SiteInterceptor {
 public:
  virtual ~SiteInterceptor() = default;
  virtual Tensor intercept(const AttentionSite& site, int64_t timestep, const Tensor& stacked, GridShape grid,
                           const TokenTransform& attn) = 0;
};

/// Anything exposing attention sites an interceptor can wrap.
class HookableBackend {
 public:
  virtual ~HookableBackend() = default;
  virtual std::vector<AttentionSite> attention_sites() const = 0;
  /// nullptr removes the interceptor.
  virtual void set_interceptor(SiteInterceptor* interceptor) = 0;
};

/// Runs the site's attention on each view separately; the hookless path.
Tensor per_view_attention(const Tensor& stacked, const TokenTransform& attn);

/// Selects sites by name. "auto" keeps sites at 1/16 resolution or coarser,
/// "all" keeps everything, any other string is an ECMAScript regex that must
/// match the whole site name.
struct LayerSelector {
  std::string pattern = "auto";
  bool matches(const AttentionSite& site) const;
};

struct HookConfig {
  int64_t n = 0;
  double alpha = 0.5;
  double d_max = 192.0;  // full-resolution pixels
  LayerSelector selector;
  int64_t timestep_begin = 0;
  int64_t timestep_end = -1;  // exclusive; -1 means all remaining steps
};

/// Installs cross-view fusion at the selected attention sites. One hook per
/// generation run; not shared across threads.
class AttentionHook final : public SiteInterceptor {
 public:
  explicit AttentionHook(HookConfig cfg);
  ~AttentionHook() override;

  AttentionHook(const AttentionHook&) = delete;
  AttentionHook& operator=(const AttentionHook&) = delete;

  /// Throws ConfigError when the selector matches none of the backend's sites.
  void install(HookableBackend& backend);
  void uninstall();

  /// Normalised inverse depth per view [H, W] in [0, 1]; resampled to each
  /// site's grid and scaled by the site's d_max to give token disparities.
  void set_depth(Tensor left_depth, Tensor right_depth);

  Tensor intercept(const AttentionSite& site, int64_t timestep, const Tensor& stacked, GridShape grid,
                   const TokenTransform& attn) override;

  int64_t invocations() const { return invocations_; }
  const std::vector<std::string>& selected_sites() const { return selected_; }
  const HookConfig& config() const { return cfg_; }

 private:
  bool is_selected(const std::string& name) const;

  HookConfig cfg_;
  HookableBackend* backend_ = nullptr;
  std::vector<std::string> selected_;
  Tensor left_depth_;
  Tensor right_depth_;
  int64_t invocations_ = 0;
};

/// Bilinear resize of a [H, W] map (pixel-centre aligned).
Tensor resize_bilinear(const Tensor& map, int64_t height, int64_t width);

}  // namespace wxs::dfm
