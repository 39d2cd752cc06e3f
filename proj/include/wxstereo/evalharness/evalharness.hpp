#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wxstereo/core/dataset.hpp"
#include "wxstereo/core/tensor.hpp"

namespace wxs::stereonet {
class StereoModel;
}

namespace wxs::eval {

/// `both`: an outlier exceeds 3 px and 5% of ground truth (benchmark
/// convention). `either`: it exceeds 3 px or 5%.
enum class D1Mode { both, either };
D1Mode parse_d1_mode(const std::string& name);  // "and" | "or"
std::string d1_mode_name(D1Mode mode);

enum class Weighting { pixel, frame };

/// Mean |pred - gt| over mask != 0. Throws InsufficientDataError for an empty
/// mask, ArgumentError on shape mismatch.
double epe(const Tensor& pred, const Tensor& gt, const Tensor& mask);
/// Outlier percentage in [0, 100]; same errors as epe.
double d1(const Tensor& pred, const Tensor& gt, const Tensor& mask, D1Mode mode = D1Mode::both);
bool is_outlier(double pred, double gt, D1Mode mode);

struct MetricRecord {
  std::string id;
  std::string subset;
  double epe = 0.0;
  double d1 = 0.0;
  int64_t valid_count = 0;
};

struct FrameIssue {
  std::string id;
  std::string reason;
};

struct Evaluation {
  std::vector<MetricRecord> records;  // sorted by id
  std::vector<FrameIssue> failures;   // missing or unreadable predictions
  std::vector<FrameIssue> excluded;   // empty valid masks
};

MetricRecord evaluate_frame(const std::string& id, const std::string& subset, const Tensor& pred, const Tensor& gt,
                            const Tensor& mask, D1Mode mode);

/// Predictions are read from <pred_dir>/<id>.pfm.
Evaluation evaluate(const std::filesystem::path& pred_dir, const DatasetManifest& manifest, D1Mode mode);
Evaluation evaluate(const stereonet::StereoModel& model, const DatasetManifest& manifest, D1Mode mode);

struct SubsetRow {
  std::string subset;
  double epe = 0.0;
  double d1 = 0.0;
  int64_t frames = 0;
  int64_t pixels = 0;
};

struct SubsetReport {
  std::vector<SubsetRow> subsets;  // sorted by name
  SubsetRow overall;
  Weighting weighting = Weighting::pixel;
  D1Mode mode = D1Mode::both;
};

/// Throws InsufficientDataError for no records.
SubsetReport aggregate(const std::vector<MetricRecord>& records, Weighting weighting = Weighting::pixel,
                       D1Mode mode = D1Mode::both);

/// Subsets as columns followed by "Overall"; rows EPE and D1.
std::string format_table(const SubsetReport& report);
nlohmann::json to_json(const SubsetReport& report, const Evaluation& evaluation);

}  // namespace wxs::eval
