#include "wxstereo/evalharness/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>

#include "wxstereo/core/errors.hpp"
#include "wxstereo/core/pfm.hpp"
#include "wxstereo/stereonet/stereonet.hpp"

namespace wxs::eval {
namespace {

void require_shapes(const Tensor& pred, const Tensor& gt, const Tensor& mask) {
  if (pred.shape() != gt.shape() || mask.shape() != gt.shape())
    throw ArgumentError("metric inputs differ in shape: pred " + shape_str(pred.shape()) + ", gt " +
                        shape_str(gt.shape()) + ", mask " + shape_str(mask.shape()));
}

int64_t count_valid(const Tensor& mask) {
  int64_t n = 0;
  for (int64_t i = 0; i < mask.numel(); ++i) n += mask[i] != 0.0;
  if (n == 0) throw InsufficientDataError("valid mask is empty");
  return n;
}

// One frame's outcome: a record, or the reason it was set aside.
struct FrameOutcome {
  std::optional<MetricRecord> record;
  std::optional<FrameIssue> failure;
  std::optional<FrameIssue> excluded;
};

template <typename Predict>
Evaluation evaluate_all(const DatasetManifest& manifest, D1Mode mode, Predict&& predict) {
  const auto n = static_cast<int64_t>(manifest.entries.size());
  std::vector<FrameOutcome> outcomes(static_cast<size_t>(n));
#pragma omp parallel for schedule(dynamic)
  for (int64_t i = 0; i < n; ++i) {
    const ManifestEntry& e = manifest.entries[static_cast<size_t>(i)];
    FrameOutcome& out = outcomes[static_cast<size_t>(i)];
    try {
      const StereoSample sample = load_sample(e);
      if (sample.valid_count() == 0) {
        out.excluded = FrameIssue{e.id, "valid mask is empty"};
        continue;
      }
      Tensor pred;
      try {
        pred = predict(e, sample);
      } catch (const Error& err) {
        out.failure = FrameIssue{e.id, err.what()};
        continue;
      }
      out.record = evaluate_frame(e.id, e.subset_label, pred, sample.disparity, sample.valid_mask, mode);
    } catch (const Error& err) {
      out.failure = FrameIssue{e.id, err.what()};
    }
  }
  Evaluation ev;
  for (auto& o : outcomes) {
    if (o.record) ev.records.push_back(std::move(*o.record));
    if (o.failure) ev.failures.push_back(std::move(*o.failure));
    if (o.excluded) ev.excluded.push_back(std::move(*o.excluded));
  }
  auto by_id = [](const auto& a, const auto& b) { return a.id < b.id; };
  std::sort(ev.records.begin(), ev.records.end(), by_id);
  std::sort(ev.failures.begin(), ev.failures.end(), by_id);
  std::sort(ev.excluded.begin(), ev.excluded.end(), by_id);
  return ev;
}

std::string fixed(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

nlohmann::json row_json(const SubsetRow& r) {
  return {{"subset", r.subset}, {"epe", r.epe}, {"d1", r.d1}, {"frames", r.frames}, {"pixels", r.pixels}};
}

}  // namespace

D1Mode parse_d1_mode(const std::string& name) {
  if (name == "and") return D1Mode::both;
  if (name == "or") return D1Mode::either;
  throw ArgumentError("unknown d1 mode '" + name + "' (expected and or or)");
}

std::string d1_mode_name(D1Mode mode) { return mode == D1Mode::both ? "and" : "or"; }

bool is_outlier(double pred, double gt, D1Mode mode) {
  const double err = std::fabs(pred - gt);
  const bool abs_term = err > 3.0;
  const bool rel_term = err > 0.05 * std::fabs(gt);
  return mode == D1Mode::both ? (abs_term && rel_term) : (abs_term || rel_term);
}

double epe(const Tensor& pred, const Tensor& gt, const Tensor& mask) {
  require_shapes(pred, gt, mask);
  const int64_t n = count_valid(mask);
  double acc = 0.0;
  for (int64_t i = 0; i < gt.numel(); ++i)
    if (mask[i] != 0.0) acc += std::fabs(pred[i] - gt[i]);
  return acc / static_cast<double>(n);
}

double d1(const Tensor& pred, const Tensor& gt, const Tensor& mask, D1Mode mode) {
  require_shapes(pred, gt, mask);
  const int64_t n = count_valid(mask);
  int64_t outliers = 0;
  for (int64_t i = 0; i < gt.numel(); ++i)
    if (mask[i] != 0.0) outliers += is_outlier(pred[i], gt[i], mode);
  return 100.0 * static_cast<double>(outliers) / static_cast<double>(n);
}

MetricRecord evaluate_frame(const std::string& id, const std::string& subset, const Tensor& pred, const Tensor& gt,
                            const Tensor& mask, D1Mode mode) {
  MetricRecord r{id, subset, epe(pred, gt, mask), d1(pred, gt, mask, mode), count_valid(mask)};
  if (!std::isfinite(r.epe)) throw ValidationError("prediction for '" + id + "' is not finite on valid pixels");
  return r;
}

Evaluation evaluate(const std::filesystem::path& pred_dir, const DatasetManifest& manifest, D1Mode mode) {
  return evaluate_all(manifest, mode, [&pred_dir](const ManifestEntry& e, const StereoSample&) {
    const auto path = pred_dir / (e.id + ".pfm");
    if (!std::filesystem::exists(path)) throw IoError("missing prediction " + path.string());
    return read_pfm(path).to_tensor();
  });
}

Evaluation evaluate(const stereonet::StereoModel& model, const DatasetManifest& manifest, D1Mode mode) {
  return evaluate_all(manifest, mode,
                      [&model](const ManifestEntry&, const StereoSample& s) { return stereonet::predict(model, s); });
}

SubsetReport aggregate(const std::vector<MetricRecord>& records, Weighting weighting, D1Mode mode) {
  if (records.empty()) throw InsufficientDataError("no frames to aggregate");
  struct Acc {
    double epe = 0.0, d1 = 0.0, weight = 0.0;
    int64_t frames = 0, pixels = 0;
    void add(const MetricRecord& r, Weighting w) {
      const double k = w == Weighting::pixel ? static_cast<double>(r.valid_count) : 1.0;
      epe += k * r.epe;
      d1 += k * r.d1;
      weight += k;
      ++frames;
      pixels += r.valid_count;
    }
    SubsetRow row(std::string name) const { return {std::move(name), epe / weight, d1 / weight, frames, pixels}; }
  };
  std::map<std::string, Acc> per_subset;
  Acc all;
  for (const auto& r : records) {
    per_subset[r.subset].add(r, weighting);
    all.add(r, weighting);
  }
  SubsetReport rep;
  rep.weighting = weighting;
  rep.mode = mode;
  for (const auto& [name, acc] : per_subset) rep.subsets.push_back(acc.row(name));
  rep.overall = all.row("Overall");
  return rep;
}

std::string format_table(const SubsetReport& report) {
  std::vector<std::string> header{"Metric"};
  std::vector<std::string> epe_row{"EPE"}, d1_row{"D1 (%)"};
  std::vector<const SubsetRow*> rows;
  for (const auto& r : report.subsets) rows.push_back(&r);
  rows.push_back(&report.overall);
  for (const SubsetRow* r : rows) {
    header.push_back(r->subset);
    epe_row.push_back(fixed(r->epe, 3));
    d1_row.push_back(fixed(r->d1, 3));
  }
  std::vector<size_t> width(header.size(), 0);
  for (const auto* line : {&header, &epe_row, &d1_row})
    for (size_t i = 0; i < line->size(); ++i) width[i] = std::max(width[i], (*line)[i].size());
  std::string out;
  auto emit = [&](const std::vector<std::string>& line) {
    for (size_t i = 0; i < line.size(); ++i) {
      const std::string& cell = line[i];
      const std::string pad(width[i] - cell.size(), ' ');
      out += i == 0 ? cell + pad : "  " + pad + cell;
    }
    out += '\n';
  };
  emit(header);
  size_t total = 0;
  for (size_t i = 0; i < width.size(); ++i) total += width[i] + (i == 0 ? 0 : 2);
  out += std::string(total, '-') + '\n';
  emit(epe_row);
  emit(d1_row);
  return out;
}

nlohmann::json to_json(const SubsetReport& report, const Evaluation& evaluation) {
  nlohmann::json j;
  j["weighting"] = report.weighting == Weighting::pixel ? "pixel" : "frame";
  j["d1_mode"] = d1_mode_name(report.mode);
  j["subsets"] = nlohmann::json::array();
  for (const auto& r : report.subsets) j["subsets"].push_back(row_json(r));
  j["overall"] = row_json(report.overall);
  j["frames"] = nlohmann::json::array();
  for (const auto& r : evaluation.records)
    j["frames"].push_back(
        {{"id", r.id}, {"subset", r.subset}, {"epe", r.epe}, {"d1", r.d1}, {"valid_count", r.valid_count}});
  auto issues = [](const std::vector<FrameIssue>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& f : v) a.push_back({{"id", f.id}, {"reason", f.reason}});
    return a;
  };
  j["failures"] = issues(evaluation.failures);
  j["excluded"] = issues(evaluation.excluded);
  return j;
}

}  // namespace wxs::eval
