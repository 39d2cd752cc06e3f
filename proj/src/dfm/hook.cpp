#include "wxstereo/dfm/hook.hpp"

#include <algorithm>
#include <cmath>
#include <regex>

#include "wxstereo/core/errors.hpp"

namespace wxs::dfm {

Tensor per_view_attention(const Tensor& stacked, const TokenTransform& attn) {
  const int64_t n = stacked.dim(1), c = stacked.dim(2);
  Tensor out(stacked.shape());
  for (int64_t v = 0; v < 2; ++v) {
    Tensor view({n, c}, std::vector<double>(stacked.data() + v * n * c, stacked.data() + (v + 1) * n * c));
    Tensor res = attn(view);
    if (res.shape() != view.shape()) throw ContractError("site attention changed token shape");
    std::copy(res.data(), res.data() + res.numel(), out.data() + v * n * c);
  }
  return out;
}

bool LayerSelector::matches(const AttentionSite& site) const {
  if (pattern == "auto") return site.downsample >= 16;
  if (pattern == "all") return true;
  try {
    return std::regex_match(site.name, std::regex(pattern));
  } catch (const std::regex_error& e) {
    throw ConfigError("invalid layer selector '" + pattern + "': " + e.what());
  }
}

Tensor resize_bilinear(const Tensor& map, int64_t height, int64_t width) {
  if (map.rank() != 2) throw ArgumentError("resize_bilinear expects [H, W]");
  const int64_t h = map.dim(0), w = map.dim(1);
  Tensor out({height, width});
  const double sy = static_cast<double>(h) / static_cast<double>(height);
  const double sx = static_cast<double>(w) / static_cast<double>(width);
  for (int64_t y = 0; y < height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const auto y0 = static_cast<int64_t>(std::floor(fy));
    const int64_t y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (int64_t x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const auto x0 = static_cast<int64_t>(std::floor(fx));
      const int64_t x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - static_cast<double>(x0);
      out.at(y, x) = (1 - wy) * ((1 - wx) * map.at(y0, x0) + wx * map.at(y0, x1)) +
                     wy * ((1 - wx) * map.at(y1, x0) + wx * map.at(y1, x1));
    }
  }
  return out;
}

AttentionHook::AttentionHook(HookConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.n < 0) throw ConfigError("dfm.n must be non-negative");
  SimilarityConfig{cfg_.alpha, cfg_.d_max}.validate();
}

AttentionHook::~AttentionHook() { uninstall(); }

void AttentionHook::install(HookableBackend& backend) {
  std::vector<std::string> chosen;
  for (const auto& site : backend.attention_sites())
    if (cfg_.selector.matches(site)) chosen.push_back(site.name);
  if (chosen.empty()) throw ConfigError("layer selector '" + cfg_.selector.pattern + "' matches no attention site");
  uninstall();
  selected_ = std::move(chosen);
  backend_ = &backend;
  backend.set_interceptor(this);
}

void AttentionHook::uninstall() {
  if (backend_) backend_->set_interceptor(nullptr);
  backend_ = nullptr;
}

void AttentionHook::set_depth(Tensor left_depth, Tensor right_depth) {
  if (left_depth.shape() != right_depth.shape() || left_depth.rank() != 2)
    throw ArgumentError("depth maps must be matching [H, W] tensors");
  left_depth_ = std::move(left_depth);
  right_depth_ = std::move(right_depth);
}

bool AttentionHook::is_selected(const std::string& name) const {
  return std::find(selected_.begin(), selected_.end(), name) != selected_.end();
}

Tensor AttentionHook::intercept(const AttentionSite& site, int64_t timestep, const Tensor& stacked, GridShape grid,
                                const TokenTransform& attn) {
  const bool in_range = timestep >= cfg_.timestep_begin && (cfg_.timestep_end < 0 || timestep < cfg_.timestep_end);
  if (!is_selected(site.name) || !in_range) return per_view_attention(stacked, attn);
  ++invocations_;

  const int64_t tokens = stacked.dim(1);
  const int64_t n = std::min(cfg_.n, tokens);
  // No links means nothing crosses views; keep the backbone's own path.
  if (n == 0) return per_view_attention(stacked, attn);

  const SimilarityConfig sim = SimilarityConfig::at_scale(cfg_.alpha, cfg_.d_max, site.downsample);
  Tensor disparity({2, tokens}, 0.0);
  if (!left_depth_.empty()) {
    const Tensor l = resize_bilinear(left_depth_, grid.rows, grid.cols);
    const Tensor r = resize_bilinear(right_depth_, grid.rows, grid.cols);
    for (int64_t i = 0; i < tokens; ++i) {
      disparity[i] = l[i] * sim.d_max;
      disparity[tokens + i] = r[i] * sim.d_max;
    }
  }
  PatchSet patches;
  patches.data = stacked;
  patches.disparity = std::move(disparity);
  patches.grid = grid;
  patches.scale = site.downsample;
  return apply_consistency(patches, n, sim, attn).data;
}

}  // namespace wxs::dfm
