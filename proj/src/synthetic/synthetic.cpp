#include "wxstereo/synthetic/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include "wxstereo/core/errors.hpp"
#include "wxstereo/core/image_io.hpp"
#include "wxstereo/core/pfm.hpp"

namespace wxs::synthetic {
namespace {

uint64_t splitmix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double lattice(uint64_t key, int64_t ix, int64_t iy) {
  uint64_t h = splitmix(key ^ splitmix(static_cast<uint64_t>(ix) * 0x632be59bd9b4e019ULL));
  h = splitmix(h ^ static_cast<uint64_t>(iy));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double value_noise(uint64_t key, double u, double v) {
  const double fu = std::floor(u), fv = std::floor(v);
  const auto iu = static_cast<int64_t>(fu), iv = static_cast<int64_t>(fv);
  const double tu = u - fu, tv = v - fv;
  const double a = lattice(key, iu, iv), b = lattice(key, iu + 1, iv);
  const double c = lattice(key, iu, iv + 1), d = lattice(key, iu + 1, iv + 1);
  return (1 - tv) * ((1 - tu) * a + tu * b) + tv * ((1 - tu) * c + tu * d);
}

// Fronto-parallel surface: a rectangle in left-view coordinates.
struct Layer {
  uint64_t key;
  double disparity;
  int64_t x0, x1, y0, y1;  // half-open; the background covers everything
  bool covers(double x, int64_t y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};

uint64_t pair_key(const SyntheticConfig& cfg, int64_t index) {
  return splitmix(cfg.seed ^ splitmix(static_cast<uint64_t>(index) + 1));
}

void render_constant(StereoSample& s, uint64_t key, double d) {
  const int64_t h = s.height(), w = s.width();
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        s.left.at(c, y, x) = texture(key, c, static_cast<double>(x), y);
        s.right.at(c, y, x) = texture(key, c, static_cast<double>(x) + d, y);
      }
      s.disparity.at(y, x) = d;
      s.valid_mask.at(y, x) = static_cast<double>(x) - d >= 0.0 ? 1.0 : 0.0;
    }
}

// d(x) = lo + (hi - lo) x / (W - 1); the right pixel x' shows the left
// coordinate solving x - d(x) = x'.
void render_gradient(StereoSample& s, uint64_t key, double lo, double hi) {
  const int64_t h = s.height(), w = s.width();
  const double slope = w > 1 ? (hi - lo) / static_cast<double>(w - 1) : 0.0;
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const double xd = static_cast<double>(x);
      const double u = (xd + lo) / (1.0 - slope);
      for (int c = 0; c < 3; ++c) {
        s.left.at(c, y, x) = texture(key, c, xd, y);
        s.right.at(c, y, x) = texture(key, c, u, y);
      }
      const double d = lo + slope * xd;
      s.disparity.at(y, x) = d;
      s.valid_mask.at(y, x) = xd - d >= 0.0 ? 1.0 : 0.0;
    }
}

// Integer disparities; the nearest (largest-disparity) covering surface wins in
// each view.
void render_blocky(StereoSample& s, uint64_t key, const SyntheticConfig& cfg) {
  const int64_t h = s.height(), w = s.width();
  std::mt19937_64 rng(key);
  auto uniform_int = [&rng](int64_t lo, int64_t hi) { return std::uniform_int_distribution<int64_t>(lo, hi)(rng); };
  const auto d_lo = static_cast<int64_t>(std::ceil(cfg.min_disparity));
  const auto d_hi = std::max(d_lo, static_cast<int64_t>(std::floor(cfg.max_disparity)));

  std::vector<Layer> layers;
  layers.push_back({splitmix(key ^ 1), static_cast<double>(d_lo), 0, 0, 0, 0});
  const int64_t blocks = uniform_int(2, 4);
  for (int64_t b = 0; b < blocks; ++b) {
    const int64_t bw = uniform_int(w / 8, w / 3), bh = uniform_int(h / 6, h / 2);
    const int64_t x0 = uniform_int(0, w - bw), y0 = uniform_int(0, h - bh);
    layers.push_back({splitmix(key ^ (b + 2)), static_cast<double>(uniform_int(d_lo, d_hi)), x0, x0 + bw, y0,
                      y0 + bh});
  }
  auto top = [&layers](double x_left, int64_t y, bool in_right) {
    // in_right: x_left is a right-view column; each layer is probed at its own
    // left coordinate x' + d.
    size_t best = 0;
    for (size_t i = 1; i < layers.size(); ++i) {
      const double probe = in_right ? x_left + layers[i].disparity : x_left;
      if (layers[i].covers(probe, y) && layers[i].disparity >= layers[best].disparity) best = i;
    }
    return best;
  };
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const double xd = static_cast<double>(x);
      const size_t l = top(xd, y, false);
      const size_t r = top(xd, y, true);
      const double ur = xd + layers[r].disparity;
      for (int c = 0; c < 3; ++c) {
        s.left.at(c, y, x) = texture(layers[l].key, c, xd, y);
        s.right.at(c, y, x) = texture(layers[r].key, c, ur, y);
      }
      const double d = layers[l].disparity;
      s.disparity.at(y, x) = d;
      const double xr = xd - d;
      s.valid_mask.at(y, x) = (xr >= 0.0 && top(xr, y, true) == l) ? 1.0 : 0.0;
    }
}

}  // namespace

Pattern parse_pattern(const std::string& name) {
  if (name == "constant") return Pattern::constant;
  if (name == "gradient") return Pattern::gradient;
  if (name == "blocky") return Pattern::blocky;
  if (name == "mixed") return Pattern::mixed;
  throw ArgumentError("unknown disparity pattern '" + name + "' (expected constant, gradient, blocky or mixed)");
}

std::string pattern_name(Pattern p) {
  switch (p) {
    case Pattern::constant: return "constant";
    case Pattern::gradient: return "gradient";
    case Pattern::blocky: return "blocky";
    case Pattern::mixed: return "mixed";
  }
  return "?";
}

double texture(uint64_t key, int channel, double u, int64_t y) {
  static constexpr std::array<double, 4> kSpacing{2.0, 4.0, 8.0, 16.0};
  static constexpr std::array<double, 4> kWeight{0.35, 0.3, 0.2, 0.15};
  const uint64_t ck = splitmix(key + static_cast<uint64_t>(channel) * 0x9e37ULL);
  double t = 0.0;
  for (size_t o = 0; o < kSpacing.size(); ++o)
    t += kWeight[o] * value_noise(splitmix(ck + o), u / kSpacing[o], static_cast<double>(y) / kSpacing[o]);
  return std::clamp(0.5 + 2.0 * (t - 0.5), 0.0, 1.0);
}

StereoSample render_pair(const SyntheticConfig& cfg, int64_t index) {
  if (cfg.height <= 0 || cfg.width <= 0) throw ArgumentError("synthetic resolution must be positive");
  if (!(cfg.min_disparity >= 0.0 && cfg.max_disparity >= cfg.min_disparity))
    throw ArgumentError("synthetic disparity range must satisfy 0 <= min <= max");
  if (cfg.max_disparity >= static_cast<double>(cfg.width - 1))
    throw ArgumentError("max disparity must be smaller than the image width");
  StereoSample s;
  char id[32];
  std::snprintf(id, sizeof id, "%06lld", static_cast<long long>(index));
  s.id = id;
  s.left = Tensor({3, cfg.height, cfg.width});
  s.right = Tensor({3, cfg.height, cfg.width});
  s.disparity = Tensor({cfg.height, cfg.width});
  s.valid_mask = Tensor({cfg.height, cfg.width});

  const uint64_t key = pair_key(cfg, index);
  std::mt19937_64 rng(key);
  std::uniform_real_distribution<double> span(cfg.min_disparity, cfg.max_disparity);
  Pattern p = cfg.pattern;
  if (p == Pattern::mixed) p = index % 2 == 0 ? Pattern::constant : Pattern::gradient;
  switch (p) {
    case Pattern::constant: render_constant(s, key, std::round(span(rng))); break;
    case Pattern::gradient: {
      const bool rising = rng() & 1U;
      const double lo = rising ? cfg.min_disparity : cfg.max_disparity;
      const double hi = rising ? cfg.max_disparity : cfg.min_disparity;
      render_gradient(s, key, lo, hi);
      break;
    }
    case Pattern::blocky: render_blocky(s, key, cfg); break;
    case Pattern::mixed: break;
  }
  return s;
}

DatasetManifest make_synthetic(const std::filesystem::path& out_root, const std::string& split,
                               const SyntheticConfig& cfg) {
  if (cfg.count < 0) throw ArgumentError("count must be non-negative");
  if (cfg.height % 32 != 0 || cfg.width % 32 != 0 || cfg.height <= 0 || cfg.width <= 0)
    throw ArgumentError("synthetic resolution " + std::to_string(cfg.height) + "x" + std::to_string(cfg.width) +
                        " must be divisible by 32");
  DatasetWriter writer(out_root, split);
  for (int64_t i = 0; i < cfg.count; ++i) {
    const StereoSample s = render_pair(cfg, i);
    writer.write(s.id, s.left, s.right, encode_pfm(PfmImage::from_tensor(s.disparity)), encode_png_mask(s.valid_mask),
                 "normal");
  }
  writer.finish();
  return load_manifest(out_root, split);
}

}  // namespace wxs::synthetic
