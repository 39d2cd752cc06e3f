#include <algorithm>
#include <cmath>

#include <Eigen/Dense>
#include <spdlog/spdlog.h>

#include "../cli.hpp"
#include "wxstereo/core/errors.hpp"
#include "wxstereo/core/fileio.hpp"
#include "wxstereo/core/image_io.hpp"
#include "wxstereo/encoder/encoder.hpp"
#include "wxstereo/stereonet/stereonet.hpp"

namespace wxs::cli {
namespace {

/// Projects [C, h, w] onto its top three principal components, min-max
/// normalises each component, and nearest-upscales to [3, H, W].
Tensor pca_image(const Tensor& f, int64_t height, int64_t width) {
  const int64_t c = f.dim(0), h = f.dim(1), w = f.dim(2), n = h * w;
  Eigen::MatrixXd x(n, c);
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < n; ++i) x(i, ch) = f[ch * n + i];
  x.rowwise() -= x.colwise().mean();
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(std::max<int64_t>(n - 1, 1));
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  const int64_t k = std::min<int64_t>(3, c);
  // Eigenvalues ascend; the last k columns are the leading components.
  const Eigen::MatrixXd proj = x * solver.eigenvectors().rightCols(k).rowwise().reverse();

  Tensor out({3, height, width}, 0.0);
  for (int64_t comp = 0; comp < k; ++comp) {
    const double lo = proj.col(comp).minCoeff(), hi = proj.col(comp).maxCoeff();
    const double span = hi - lo > 1e-12 ? hi - lo : 1.0;
    for (int64_t y = 0; y < height; ++y)
      for (int64_t xx = 0; xx < width; ++xx) {
        const int64_t sy = std::min(y * h / height, h - 1), sx = std::min(xx * w / width, w - 1);
        out.at(comp, y, xx) = (proj(sy * w + sx, comp) - lo) / span;
      }
  }
  return out;
}

nlohmann::json stats(const Tensor& f) {
  double sum = 0, sq = 0, lo = f[0], hi = f[0];
  for (int64_t i = 0; i < f.numel(); ++i) {
    sum += f[i];
    sq += f[i] * f[i];
    lo = std::min(lo, f[i]);
    hi = std::max(hi, f[i]);
  }
  const double n = static_cast<double>(f.numel());
  const double mean = sum / n;
  return {{"shape", f.shape()},
          {"mean", mean},
          {"std", std::sqrt(std::max(0.0, sq / n - mean * mean))},
          {"min", lo},
          {"max", hi}};
}

class InspectFeatures final : public Command {
 public:
  CLI::App* attach(CLI::App& app) override {
    auto* sub = app.add_subcommand("inspect-features", "Dump feature-pyramid statistics and PCA visualisations");
    sub->add_option("--config", config_path_, "JSON config file; flags override its keys");
    flags_.add<std::string>(*sub, "--image", "image", "RGB PNG to encode");
    flags_.add<std::string>(*sub, "--checkpoint", "checkpoint", "Encoder or stereo checkpoint (default: fresh weights)");
    flags_.add<std::string>(*sub, "--out-dir", "out_dir", "Output directory");
    flags_.add<uint64_t>(*sub, "--seed", "seed", "Seed for fresh weights");
    flags_.add<std::string>(*sub, "--log-level", "log_level", "trace, debug, info, warn, error");
    return sub;
  }

  int run() override {
    const nlohmann::json defaults{{"image", ""},    {"checkpoint", ""},
                                  {"out_dir", ""},  {"seed", 0},
                                  {"channel_plan", {32, 64, 96, 128}},
                                  {"log_level", "info"}};
    const nlohmann::json doc = resolve_config(defaults, config_path_, flags_.collect());
    configure_logging(get<std::string>(doc, "log_level"));
    const auto image_path = get<std::string>(doc, "image");
    const auto out_dir = std::filesystem::path(get<std::string>(doc, "out_dir"));
    if (image_path.empty() || out_dir.empty()) throw ConfigError("image and out_dir are required");

    const Tensor image = read_png_rgb(image_path);
    const Tensor padded = encoder::pad_to_multiple(image, 32);
    const auto checkpoint = get<std::string>(doc, "checkpoint");
    encoder::FeaturePyramid pyr;
    if (checkpoint.empty()) {
      const auto plan = get<std::vector<int64_t>>(doc, "channel_plan");
      if (plan.size() != 4) throw ConfigError("channel_plan needs four widths");
      encoder::EncoderConfig cfg;
      cfg.plan = {plan[0], plan[1], plan[2], plan[3]};
      cfg.seed = get<uint64_t>(doc, "seed");
      pyr = encoder::extract_features(padded, encoder::RobustEncoder(cfg));
    } else if (nn::read_checkpoint_header(checkpoint).kind == "stereo") {
      pyr = encoder::extract_features(padded, stereonet::StereoModel::load(checkpoint).encoder());
    } else {
      pyr = encoder::extract_features(padded, encoder::RobustEncoder::load(checkpoint));
    }

    std::filesystem::create_directories(out_dir);
    nlohmann::json report{{"image", image_path}, {"height", image.dim(1)}, {"width", image.dim(2)}};
    for (int s : encoder::FeaturePyramid::kScales) {
      const Tensor& f = pyr.at(s);
      report["scales"][std::to_string(s)] = stats(f);
      write_png_rgb(pca_image(f, padded.dim(1), padded.dim(2)), out_dir / ("pca_s" + std::to_string(s) + ".png"));
    }
    write_file_atomic(out_dir / "features.json", report.dump(2) + "\n");
    echo_config(doc, out_dir / "config.json");
    spdlog::info("wrote features.json and PCA maps to {}", out_dir.string());
    return 0;
  }

 private:
  std::string config_path_;
  FlagDoc flags_;
};

}  // namespace

std::unique_ptr<Command> make_inspect_features_command() { return std::make_unique<InspectFeatures>(); }

}  // namespace wxs::cli
