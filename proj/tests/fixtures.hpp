#pragma once

#include <filesystem>
#include <string>

#include "wxstereo/core/fileio.hpp"
#include "wxstereo/core/image_io.hpp"
#include "wxstereo/core/pfm.hpp"

namespace wxs::test {

/// Two 1x3 frames with hand-computed metrics:
///   a (rainy): gt [1, 3, 5],    pred [1, 2, 3]       -> EPE 1.0,      D1 0
///   b (foggy): gt [10, 100, 2], pred [14, 104, 2.2]  -> EPE 8.2 / 3,  D1 100 / 3
/// Writes <root>/<split>/{left,right,disp} and <pred_dir>/<id>.pfm.
inline void write_eval_fixture(const std::filesystem::path& root, const std::string& split,
                               const std::filesystem::path& pred_dir) {
  const auto dir = root / split;
  const Tensor img({3, 1, 3}, 0.5);
  for (const char* sub : {"left", "right", "disp"}) std::filesystem::create_directories(dir / sub);
  for (const char* id : {"a", "b"}) {
    write_png_rgb(img, dir / "left" / (std::string(id) + ".png"));
    write_png_rgb(img, dir / "right" / (std::string(id) + ".png"));
  }
  write_pfm(Tensor({1, 3}, {1, 3, 5}), dir / "disp" / "a.pfm");
  write_pfm(Tensor({1, 3}, {10, 100, 2}), dir / "disp" / "b.pfm");
  write_file(dir / "subsets.json", R"({"a": "rainy", "b": "foggy"})");
  std::filesystem::create_directories(pred_dir);
  write_pfm(Tensor({1, 3}, {1, 2, 3}), pred_dir / "a.pfm");
  // 2.2 is not a float; write what the file will hold so the oracle is exact.
  write_pfm(Tensor({1, 3}, {14, 104, static_cast<double>(2.2f)}), pred_dir / "b.pfm");
}

inline constexpr double kFixtureEpeA = 1.0;
inline const double kFixtureEpeB = (4.0 + 4.0 + (static_cast<double>(2.2f) - 2.0)) / 3.0;
inline constexpr double kFixtureD1B = 100.0 / 3.0;

}  // namespace wxs::test
