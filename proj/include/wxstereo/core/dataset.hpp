#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "wxstereo/core/tensor.hpp"

namespace wxs {

/// A rectified stereo pair with left-view disparity ground truth.
///
/// left/right are [3, H, W] in [0, 1]; disparity and valid_mask are [H, W].
/// valid_mask holds 1.0 where ground truth exists and 0.0 elsewhere, so sparse
/// ground truth never relies on sentinel disparity values.
struct StereoSample {
  std::string id;
  Tensor left;
  Tensor right;
  Tensor disparity;
  Tensor valid_mask;

  int64_t height() const { return left.dim(1); }
  int64_t width() const { return left.dim(2); }
  int64_t valid_count() const;

  /// Throws ValidationError if any sample invariant is violated.
  void validate() const;
};

/// Weather and subset labels accepted in subsets.json.
const std::vector<std::string>& declared_subset_labels();
bool is_declared_subset_label(const std::string& label);

struct ManifestEntry {
  std::string id;
  std::filesystem::path left_path;
  std::filesystem::path right_path;
  std::filesystem::path disparity_path;
  std::optional<std::filesystem::path> mask_path;
  std::string subset_label = "normal";
};

struct DatasetManifest {
  std::filesystem::path root;
  std::string split;
  std::vector<ManifestEntry> entries;  // sorted by id
};

/// Scans `<root>/<split>/{left,right,disp}` (plus optional `mask/` and
/// `subsets.json`). Throws ManifestError naming every id that appears in
/// `left/` without a matching right image or disparity file.
DatasetManifest load_manifest(const std::filesystem::path& root, const std::string& split);

/// Decodes and validates one entry. Without a mask file every finite
/// disparity pixel is valid.
StereoSample load_sample(const ManifestEntry& entry);

/// Writes datasets in the same layout load_manifest reads.
class DatasetWriter {
 public:
  DatasetWriter(std::filesystem::path root, std::string split);

  const std::filesystem::path& split_dir() const { return dir_; }

  /// Every file lands under a temporary name first; the set appears only after
  /// all encodes succeeded.
  void write(const std::string& id, const Tensor& left, const Tensor& right, const std::string& disparity_pfm_bytes,
             const std::optional<std::string>& mask_png_bytes, const std::string& label);

  /// Flushes subsets.json (sorted keys).
  void finish() const;

  std::map<std::string, std::string> labels() const;

 private:
  std::filesystem::path dir_;
  mutable std::mutex mu_;
  std::map<std::string, std::string> labels_;
};

}  // namespace wxs
