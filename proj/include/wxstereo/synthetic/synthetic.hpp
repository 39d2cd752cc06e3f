#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "wxstereo/core/dataset.hpp"

namespace wxs::synthetic {

/// constant: one disparity per pair; gradient: disparity linear in the left
/// column; blocky: fronto-parallel rectangles over a background, with
/// occlusions; mixed: alternates constant and gradient pairs.
enum class Pattern { constant, gradient, blocky, mixed };

/// Throws ArgumentError naming the accepted patterns.
Pattern parse_pattern(const std::string& name);
std::string pattern_name(Pattern p);

struct SyntheticConfig {
  int64_t count = 10;
  int64_t height = 96;
  int64_t width = 192;
  Pattern pattern = Pattern::mixed;
  double min_disparity = 2.0;
  double max_disparity = 16.0;
  uint64_t seed = 0;
};

/// Scene texture sampled at continuous horizontal coordinate `u` (left-view
/// column) on integer row `y`. Values in [0, 1].
double texture(uint64_t key, int channel, double u, int64_t y);

/// Renders pair `index`. Left pixel (x, y) shows texture at u = x; its match
/// in the right view sits at x - disparity(x, y). Left pixels whose match
/// falls outside the right view or behind a nearer surface are invalid.
StereoSample render_pair(const SyntheticConfig& cfg, int64_t index);

/// Writes `count` pairs in dataset layout under <out_root>/<split>.
/// Throws ArgumentError unless the resolution is divisible by 32.
DatasetManifest make_synthetic(const std::filesystem::path& out_root, const std::string& split,
                               const SyntheticConfig& cfg);

}  // namespace wxs::synthetic
