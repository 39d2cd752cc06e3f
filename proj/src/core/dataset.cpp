#include "wxstereo/core/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "wxstereo/core/errors.hpp"
#include "wxstereo/core/fileio.hpp"
#include "wxstereo/core/image_io.hpp"
#include "wxstereo/core/pfm.hpp"

namespace fs = std::filesystem;

namespace wxs {
namespace {

std::map<std::string, fs::path> scan(const fs::path& dir, const std::string& ext) {
  std::map<std::string, fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().extension() != ext) continue;
    out.emplace(e.path().stem().string(), e.path());
  }
  return out;
}

}  // namespace

int64_t StereoSample::valid_count() const {
  int64_t n = 0;
  for (double v : valid_mask.values()) n += v != 0.0;
  return n;
}

void StereoSample::validate() const {
  if (left.rank() != 3 || left.dim(0) != 3) throw ValidationError(id + ": left image must be [3, H, W]");
  if (right.shape() != left.shape())
    throw ValidationError(id + ": left " + shape_str(left.shape()) + " and right " + shape_str(right.shape()) +
                          " differ");
  const Shape hw{left.dim(1), left.dim(2)};
  if (disparity.shape() != hw || valid_mask.shape() != hw)
    throw ValidationError(id + ": disparity/mask must be " + shape_str(hw));
  for (const Tensor* img : {&left, &right})
    for (double v : img->values())
      if (!(v >= 0.0 && v <= 1.0)) throw ValidationError(id + ": image values must lie in [0, 1]");
  for (int64_t i = 0; i < disparity.numel(); ++i) {
    if (valid_mask[i] != 0.0 && valid_mask[i] != 1.0) throw ValidationError(id + ": valid_mask must be 0 or 1");
    if (valid_mask[i] == 0.0) continue;
    if (!std::isfinite(disparity[i]) || disparity[i] < 0.0)
      throw ValidationError(id + ": invalid disparity at valid pixel " + std::to_string(i));
  }
}

const std::vector<std::string>& declared_subset_labels() {
  static const std::vector<std::string> labels{"rainy", "sunny",     "foggy",     "cloudy", "snowy",
                                               "snow",  "dense_fog", "light_fog", "normal"};
  return labels;
}

bool is_declared_subset_label(const std::string& label) {
  const auto& l = declared_subset_labels();
  return std::find(l.begin(), l.end(), label) != l.end();
}

DatasetManifest load_manifest(const fs::path& root, const std::string& split) {
  const fs::path dir = root / split;
  if (!fs::is_directory(dir)) throw ManifestError("no split directory " + dir.string());

  const auto lefts = scan(dir / "left", ".png");
  const auto rights = scan(dir / "right", ".png");
  const auto disps = scan(dir / "disp", ".pfm");
  const auto masks = scan(dir / "mask", ".png");

  std::map<std::string, std::string> labels;
  if (fs::exists(dir / "subsets.json")) {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(read_file(dir / "subsets.json"));
    } catch (const nlohmann::json::exception& e) {
      throw ManifestError("subsets.json: " + std::string(e.what()));
    }
    if (!doc.is_object()) throw ManifestError("subsets.json must be an object {id: label}");
    for (const auto& [id, label] : doc.items()) {
      if (!label.is_string()) throw ManifestError("subsets.json: label for '" + id + "' is not a string");
      if (!is_declared_subset_label(label.get<std::string>()))
        throw ManifestError("subsets.json: undeclared label '" + label.get<std::string>() + "' for '" + id + "'");
      labels[id] = label.get<std::string>();
    }
  }

  std::vector<std::string> incomplete;
  DatasetManifest m{root, split, {}};
  for (const auto& [id, left] : lefts) {
    auto r = rights.find(id);
    auto d = disps.find(id);
    if (r == rights.end() || d == disps.end()) {
      incomplete.push_back(id);
      continue;
    }
    ManifestEntry e;
    e.id = id;
    e.left_path = left;
    e.right_path = r->second;
    e.disparity_path = d->second;
    if (auto mk = masks.find(id); mk != masks.end()) e.mask_path = mk->second;
    if (auto lb = labels.find(id); lb != labels.end()) e.subset_label = lb->second;
    m.entries.push_back(std::move(e));
  }
  if (!incomplete.empty()) {
    std::string msg = "incomplete ids in " + dir.string() + ":";
    for (const auto& id : incomplete) msg += " " + id;
    throw ManifestError(msg);
  }
  return m;
}

StereoSample load_sample(const ManifestEntry& entry) {
  StereoSample s;
  s.id = entry.id;
  s.left = read_png_rgb(entry.left_path);
  s.right = read_png_rgb(entry.right_path);
  s.disparity = read_pfm(entry.disparity_path).to_tensor();
  if (entry.mask_path) {
    s.valid_mask = read_png_mask(*entry.mask_path);
    if (s.valid_mask.shape() != s.disparity.shape()) throw ValidationError(entry.id + ": mask/disparity size mismatch");
  } else {
    s.valid_mask = Tensor(s.disparity.shape(), 1.0);
  }
  for (int64_t i = 0; i < s.disparity.numel(); ++i)
    if (!std::isfinite(s.disparity[i])) s.valid_mask[i] = 0.0;
  s.validate();
  return s;
}

DatasetWriter::DatasetWriter(fs::path root, std::string split) : dir_(std::move(root) / std::move(split)) {
  std::error_code ec;
  for (const char* sub : {"left", "right", "disp"}) {
    fs::create_directories(dir_ / sub, ec);
    if (ec) throw IoError("cannot create " + (dir_ / sub).string() + ": " + ec.message());
  }
}

void DatasetWriter::write(const std::string& id, const Tensor& left, const Tensor& right,
                          const std::string& disparity_pfm_bytes, const std::optional<std::string>& mask_png_bytes,
                          const std::string& label) {
  // Encode everything before touching the filesystem.
  const std::string left_png = encode_png_rgb(left);
  const std::string right_png = encode_png_rgb(right);
  if (mask_png_bytes) fs::create_directories(dir_ / "mask");

  std::vector<std::pair<fs::path, const std::string*>> files{
      {dir_ / "left" / (id + ".png"), &left_png},
      {dir_ / "right" / (id + ".png"), &right_png},
      {dir_ / "disp" / (id + ".pfm"), &disparity_pfm_bytes}};
  if (mask_png_bytes) files.emplace_back(dir_ / "mask" / (id + ".png"), &*mask_png_bytes);

  std::vector<fs::path> staged;
  try {
    for (const auto& [path, bytes] : files) {
      auto tmp = path;
      tmp += ".partial";
      write_file(tmp, *bytes);
      staged.push_back(tmp);
    }
  } catch (...) {
    std::error_code ec;
    for (const auto& p : staged) fs::remove(p, ec);
    throw;
  }
  for (size_t i = 0; i < files.size(); ++i) fs::rename(staged[i], files[i].first);

  std::lock_guard lock(mu_);
  labels_[id] = label;
}

void DatasetWriter::finish() const {
  nlohmann::json doc = nlohmann::json::object();
  {
    std::lock_guard lock(mu_);
    for (const auto& [id, label] : labels_) doc[id] = label;
  }
  write_file_atomic(dir_ / "subsets.json", doc.dump(2) + "\n");
}

std::map<std::string, std::string> DatasetWriter::labels() const {
  std::lock_guard lock(mu_);
  return labels_;
}

}  // namespace wxs
