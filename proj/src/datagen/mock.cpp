#include "wxstereo/datagen/mock.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "wxstereo/core/errors.hpp"
#include "wxstereo/kernels/kernels.hpp"

namespace wxs::datagen::mock {
namespace {

int64_t ceil_div(int64_t a, int64_t b) { return (a + b - 1) / b; }

// [C, H, W] → [C, h, w], channel by channel.
Tensor resize_channels(const Tensor& map, int64_t h, int64_t w) {
  const int64_t c = map.dim(0), sh = map.dim(1), sw = map.dim(2);
  Tensor out({c, h, w});
  for (int64_t ch = 0; ch < c; ++ch) {
    Tensor plane({sh, sw}, std::vector<double>(map.data() + ch * sh * sw, map.data() + (ch + 1) * sh * sw));
    const Tensor r = dfm::resize_bilinear(plane, h, w);
    std::copy(r.data(), r.data() + r.numel(), out.data() + ch * h * w);
  }
  return out;
}

// [C, h, w] ↔ [h*w, C] token layout.
Tensor to_tokens(const Tensor& map) {
  const int64_t c = map.dim(0), n = map.dim(1) * map.dim(2);
  Tensor t({n, c});
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < n; ++i) t.at(i, ch) = map[ch * n + i];
  return t;
}

}  // namespace

std::vector<std::string> EchoPromptBackend::keywords(const StereoSample&, Condition condition, uint64_t) {
  return {condition_name(condition)};
}

Tensor LuminanceDepthBackend::predict(const Tensor& image, uint64_t) {
  const int64_t h = image.dim(1), w = image.dim(2);
  Tensor out({h, w});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      out.at(y, x) = 0.299 * image.at(0, y, x) + 0.587 * image.at(1, y, x) + 0.114 * image.at(2, y, x);
  return out;
}

const ConditionLook& look(Condition c) {
  static const ConditionLook rainy{{0.75, 0.8, 0.9}, {1.15, 1.1, 1.0}, {0.55, 0.6, 0.65}, 0.35};
  static const ConditionLook foggy{{0.9, 0.9, 0.9}, {0.9, 0.9, 0.9}, {0.8, 0.8, 0.82}, 0.7};
  static const ConditionLook snowy{{1.05, 1.05, 1.1}, {0.85, 0.85, 0.8}, {0.92, 0.93, 0.96}, 0.45};
  static const ConditionLook cloudy{{0.85, 0.85, 0.88}, {1.05, 1.05, 1.0}, {0.7, 0.7, 0.72}, 0.25};
  static const ConditionLook sunny{{1.1, 1.0, 0.85}, {0.9, 0.95, 1.05}, {1.0, 0.95, 0.8}, 0.1};
  switch (c) {
    case Condition::rainy: return rainy;
    case Condition::foggy: return foggy;
    case Condition::snowy: return snowy;
    case Condition::cloudy: return cloudy;
    case Condition::sunny: return sunny;
  }
  return rainy;
}

Tensor closed_form(const Tensor& image, const Tensor& depth, Condition condition, double conditioning_scale) {
  const int64_t h = image.dim(1), w = image.dim(2);
  if (depth.shape() != Shape{h, w}) throw ArgumentError("depth map does not match the image");
  const ConditionLook& lk = look(condition);
  Tensor out(image.shape());
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const double hz = lk.haze_strength * (1.0 - std::clamp(conditioning_scale * depth.at(y, x), 0.0, 1.0));
      for (int c = 0; c < 3; ++c) {
        const double graded = std::clamp(lk.gain[c] * std::pow(std::clamp(image.at(c, y, x), 0.0, 1.0), lk.gamma[c]),
                                          0.0, 1.0);
        out.at(c, y, x) = (1.0 - hz) * graded + hz * lk.haze[c];
      }
    }
  return out;
}

Tensor self_attention(const Tensor& tokens) {
  const int64_t n = tokens.dim(0), c = tokens.dim(1);
  Tensor t = tokens.reshaped({n, c});
  Tensor tt({c, n});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t k = 0; k < c; ++k) tt.at(k, i) = t.at(i, k);
  Tensor scores({n, n});
  kernels::matmul(n, c, n, t.values(), tt.values(), scores.storage());
  const double inv = 1.0 / std::sqrt(static_cast<double>(c));
  for (int64_t i = 0; i < n; ++i) {
    double* row = scores.data() + i * n;
    double mx = -INFINITY;
    for (int64_t j = 0; j < n; ++j) mx = std::max(mx, row[j] * inv);
    double z = 0.0;
    for (int64_t j = 0; j < n; ++j) z += (row[j] = std::exp(row[j] * inv - mx));
    for (int64_t j = 0; j < n; ++j) row[j] /= z;
  }
  Tensor out({n, c});
  kernels::matmul(n, n, c, scores.values(), t.values(), out.storage());
  return out;
}

std::vector<dfm::AttentionSite> DiffusionMock::attention_sites() const {
  return {{"down.attn", 8}, {"mid.attn1", 16}, {"mid.attn2", 16}, {"up.attn", 8}};
}

GeneratedPair DiffusionMock::generate(const GenerationRequest& req) {
  const GenerationConfig& cfg = *req.config;
  const Tensor* views[2] = {req.left, req.right};
  const Tensor* depths[2] = {&req.depth->left, &req.depth->right};
  const int64_t h = req.left->dim(1), w = req.left->dim(2);
  const int64_t lh = ceil_div(h, 8), lw = ceil_div(w, 8);

  Tensor base[2], target[2], latent[2];
  std::mt19937_64 rng(req.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int v = 0; v < 2; ++v) {
    base[v] = closed_form(*views[v], *depths[v], req.prompt->condition, cfg.conditioning_scale);
    Tensor cond({4, h, w});
    std::copy(base[v].data(), base[v].data() + base[v].numel(), cond.data());
    std::copy(depths[v]->data(), depths[v]->data() + h * w, cond.data() + 3 * h * w);
    target[v] = resize_channels(cond, lh, lw);
    latent[v] = Tensor(target[v].shape());
    for (double& z : latent[v].values()) z = noise(rng);
  }

  const auto sites = attention_sites();
  for (int64_t t = 0; t < cfg.steps; ++t) {
    for (int v = 0; v < 2; ++v)
      for (int64_t i = 0; i < latent[v].numel(); ++i) latent[v][i] += kRelax * (target[v][i] - latent[v][i]);
    for (const auto& site : sites) {
      const int64_t gh = ceil_div(h, site.downsample), gw = ceil_div(w, site.downsample);
      const int64_t n = gh * gw;
      Tensor stacked({2, n, 4});
      for (int v = 0; v < 2; ++v) {
        const Tensor tok = to_tokens(resize_channels(latent[v], gh, gw));
        std::copy(tok.data(), tok.data() + tok.numel(), stacked.data() + v * n * 4);
      }
      const dfm::TokenTransform attn = self_attention;
      const Tensor out = interceptor_ ? interceptor_->intercept(site, t, stacked, {gh, gw}, attn)
                                      : dfm::per_view_attention(stacked, attn);
      if (out.shape() != stacked.shape()) throw ContractError("attention site changed the token shape");
      for (int v = 0; v < 2; ++v) {
        Tensor delta({4, gh, gw});
        for (int64_t i = 0; i < n; ++i)
          for (int64_t ch = 0; ch < 4; ++ch)
            delta[ch * n + i] = out[(v * n + i) * 4 + ch] - stacked[(v * n + i) * 4 + ch];
        const Tensor up = resize_channels(delta, lh, lw);
        for (int64_t i = 0; i < latent[v].numel(); ++i) latent[v][i] += kAttentionRate * up[i];
      }
    }
  }

  GeneratedPair pair;
  Tensor* outs[2] = {&pair.left, &pair.right};
  for (int v = 0; v < 2; ++v) {
    Tensor residual({3, lh, lw});
    for (int64_t i = 0; i < residual.numel(); ++i) residual[i] = latent[v][i] - target[v][i];
    const Tensor up = resize_channels(residual, h, w);
    Tensor img = base[v];
    if (cfg.latent_mix != 0.0)
      for (int64_t i = 0; i < img.numel(); ++i) img[i] = std::clamp(img[i] + cfg.latent_mix * up[i], 0.0, 1.0);
    *outs[v] = std::move(img);
  }
  return pair;
}

}  // namespace wxs::datagen::mock
