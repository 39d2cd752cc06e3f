#include "wxstereo/encoder/encoder.hpp"

#include <cmath>

#include "wxstereo/core/errors.hpp"

namespace wxs::encoder {
namespace {

nn::Init init_of(const EncoderConfig& cfg) { return cfg.zero_init ? nn::Init::zero : nn::Init::he; }

Tensor sinusoidal_positions(int64_t rows, int64_t cols, int64_t width) {
  Tensor pe({rows * cols, width});
  const int64_t half = width / 2;
  for (int64_t gy = 0; gy < rows; ++gy)
    for (int64_t gx = 0; gx < cols; ++gx)
      for (int64_t k = 0; k < width; ++k) {
        const bool is_x = k >= half;
        const int64_t kk = is_x ? k - half : k;
        const double pos = static_cast<double>(is_x ? gx : gy);
        const double freq = std::pow(100.0, -static_cast<double>(kk / 2 * 2) / static_cast<double>(std::max<int64_t>(half, 1)));
        pe.at(gy * cols + gx, k) = (kk % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
      }
  return pe;
}

}  // namespace

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = nlohmann::json{{"channel_plan", {c.plan.c4, c.plan.c8, c.plan.c16, c.plan.c32}},
                     {"stem_channels", c.stem_channels},
                     {"patch_size", c.patch_size},
                     {"leaky_slope", c.leaky_slope},
                     {"use_bias", c.use_bias},
                     {"zero_init", c.zero_init},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  const auto plan = j.at("channel_plan").get<std::vector<int64_t>>();
  if (plan.size() != 4) throw ConfigError("channel_plan needs four entries");
  c.plan = {plan[0], plan[1], plan[2], plan[3]};
  c.stem_channels = j.value("stem_channels", c.stem_channels);
  c.patch_size = j.value("patch_size", c.patch_size);
  c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
  c.use_bias = j.value("use_bias", c.use_bias);
  c.zero_init = j.value("zero_init", c.zero_init);
  c.seed = j.value("seed", c.seed);
}

const Tensor& FeaturePyramid::at(int scale) const {
  switch (scale) {
    case 4: return f4;
    case 8: return f8;
    case 16: return f16;
    case 32: return f32;
    default: throw ArgumentError("no pyramid scale " + std::to_string(scale));
  }
}

void require_divisible(int64_t height, int64_t width) {
  if (height <= 0 || width <= 0 || height % 32 != 0 || width % 32 != 0)
    throw ArgumentError("input " + std::to_string(height) + "x" + std::to_string(width) +
                        " is not divisible by 32; pad with edge replication (pad_to_multiple) and crop outputs");
}

ConvPyramid::ConvPyramid(const EncoderConfig& cfg, nn::ParameterList& params, std::mt19937_64& rng)
    : slope_(cfg.leaky_slope) {
  const auto init = init_of(cfg);
  const bool b = cfg.use_bias;
  const auto& p = cfg.plan;
  stem_ = nn::make_conv(params, "conv.stem", 3, cfg.stem_channels, 3, 2, b, init, rng);
  s4a_ = nn::make_conv(params, "conv.s4a", cfg.stem_channels, p.c4, 3, 2, b, init, rng);
  s4b_ = nn::make_conv(params, "conv.s4b", p.c4, p.c4, 3, 1, b, init, rng);
  s8a_ = nn::make_conv(params, "conv.s8a", p.c4, p.c8, 3, 2, b, init, rng);
  s8b_ = nn::make_conv(params, "conv.s8b", p.c8, p.c8, 3, 1, b, init, rng);
  s16a_ = nn::make_conv(params, "conv.s16a", p.c8, p.c16, 3, 2, b, init, rng);
  s16b_ = nn::make_conv(params, "conv.s16b", p.c16, p.c16, 3, 1, b, init, rng);
}

PyramidVars ConvPyramid::forward(const ag::Var& image) const {
  auto act = [this](const ag::Var& v) { return ag::leaky_relu(v, slope_); };
  ag::Var x = act(stem_(image));
  x = act(s4a_(x));
  ag::Var f4 = s4b_(x);
  x = act(s8a_(act(f4)));
  ag::Var f8 = s8b_(x);
  x = act(s16a_(act(f8)));
  ag::Var f16 = s16b_(x);
  return {f4, f8, f16};
}

DenoiserModel::DenoiserModel(const EncoderConfig& cfg, nn::ParameterList& params, std::mt19937_64& rng)
    : patch_(cfg.patch_size), width_(cfg.plan.c32), slope_(cfg.leaky_slope) {
  const auto init = init_of(cfg);
  const bool b = cfg.use_bias;
  embed_ = nn::make_linear(params, "dvt.embed", 3 * patch_ * patch_, width_, b, init, rng);
  q_ = nn::make_linear(params, "dvt.q", width_, width_, b, init, rng, 0.5);
  k_ = nn::make_linear(params, "dvt.k", width_, width_, b, init, rng, 0.5);
  v_ = nn::make_linear(params, "dvt.v", width_, width_, b, init, rng);
  o_ = nn::make_linear(params, "dvt.o", width_, width_, b, init, rng, 0.5);
  mlp1_ = nn::make_linear(params, "dvt.mlp1", width_, 2 * width_, b, init, rng);
  mlp2_ = nn::make_linear(params, "dvt.mlp2", 2 * width_, width_, b, init, rng, 0.5);
}

ag::Var DenoiserModel::raw_tokens(const ag::Var& image) const {
  const int64_t h = image.shape()[1], w = image.shape()[2];
  if (h % patch_ != 0 || w % patch_ != 0)
    throw ArgumentError("image " + shape_str(image.shape()) + " does not tile into " + std::to_string(patch_) +
                        "-pixel patches");
  const int64_t rows = h / patch_, cols = w / patch_;
  ag::Var x = ag::add(embed_(ag::patchify(image, patch_)), ag::constant(sinusoidal_positions(rows, cols, width_)));

  ag::Var q = q_(x), k = k_(x), v = v_(x);
  ag::Var attn = ag::softmax_rows(ag::scale(ag::matmul(q, ag::transpose(k)), 1.0 / std::sqrt(static_cast<double>(width_))));
  x = ag::add(x, o_(ag::matmul(attn, v)));
  x = ag::add(x, mlp2_(ag::leaky_relu(mlp1_(x), slope_)));
  return x;
}

ag::Var DenoiserModel::forward(const ag::Var& image) const {
  const int64_t rows = image.shape()[1] / patch_, cols = image.shape()[2] / patch_;
  ag::Var tokens = raw_tokens(image);
  if (!artifact_.empty()) {
    if (artifact_rows_ != rows || artifact_cols_ != cols)
      throw ModelError("artifact map fitted on a " + std::to_string(artifact_rows_) + "x" +
                       std::to_string(artifact_cols_) + " patch grid, input has " + std::to_string(rows) + "x" +
                       std::to_string(cols));
    tokens = ag::sub(tokens, ag::constant(artifact_));
  }
  return ag::tokens_to_map(tokens, rows, cols);
}

void DenoiserModel::set_artifact_map(Tensor map, int64_t grid_rows, int64_t grid_cols) {
  if (!map.empty()) {
    if (map.shape() != Shape{grid_rows * grid_cols, width_})
      throw ModelError("artifact map " + shape_str(map.shape()) + " does not fit a " + std::to_string(grid_rows) +
                       "x" + std::to_string(grid_cols) + " grid of width " + std::to_string(width_));
    if (!map.all_finite()) throw ModelError("artifact map must be finite");
  }
  artifact_ = std::move(map);
  artifact_rows_ = artifact_.empty() ? 0 : grid_rows;
  artifact_cols_ = artifact_.empty() ? 0 : grid_cols;
}

void DenoiserModel::fit(std::span<const Tensor> images) {
  ag::NoGradGuard no_grad;
  std::vector<Tensor> tokens;
  tokens.reserve(images.size());
  for (const auto& img : images) tokens.push_back(raw_tokens(ag::constant(img)).value());
  Tensor map = fit_artifact_map(tokens);
  set_artifact_map(std::move(map), images.front().dim(1) / patch_, images.front().dim(2) / patch_);
}

RobustEncoder::RobustEncoder(EncoderConfig cfg)
    : cfg_(cfg), rng_(cfg.seed), conv_(cfg_, params_, rng_), denoiser_(cfg_, params_, rng_) {}

void RobustEncoder::save(const std::filesystem::path& path) const {
  nlohmann::json config = cfg_;
  nn::ParameterList all = params_;
  const auto [rows, cols] = denoiser_.artifact_grid();
  config["artifact_grid"] = {rows, cols};
  if (!denoiser_.artifact_map().empty()) all.add("dvt.artifact_map", denoiser_.artifact_map());
  nn::save_checkpoint(path, "encoder", config, all);
}

RobustEncoder RobustEncoder::load(const std::filesystem::path& path) {
  const auto header = nn::read_checkpoint_header(path);
  if (header.kind != "encoder") throw ModelError(path.string() + " is a '" + header.kind + "' checkpoint");
  RobustEncoder enc(header.config.get<EncoderConfig>());
  const auto grid = header.config.value("artifact_grid", std::vector<int64_t>{0, 0});
  nn::ParameterList all = enc.params_;
  const bool has_artifact = grid.size() == 2 && grid[0] > 0;
  if (has_artifact) all.add("dvt.artifact_map", Tensor({grid[0] * grid[1], enc.cfg_.plan.c32}));
  nn::load_checkpoint(path, "encoder", all);
  if (has_artifact) enc.denoiser_.set_artifact_map(all.items().back().var.value(), grid[0], grid[1]);
  return enc;
}

FeaturePyramid extract_pyramid(const Tensor& image, const RobustEncoder& encoder) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ArgumentError("expected image [3, H, W], got " + shape_str(image.shape()));
  require_divisible(image.dim(1), image.dim(2));
  ag::NoGradGuard no_grad;
  const auto vars = encoder.conv().forward(ag::constant(image));
  return {vars.f4.value(), vars.f8.value(), vars.f16.value(), Tensor()};
}

Tensor extract_denoised(const Tensor& image, const DenoiserModel& model) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ArgumentError("expected image [3, H, W], got " + shape_str(image.shape()));
  require_divisible(image.dim(1), image.dim(2));
  ag::NoGradGuard no_grad;
  return model.forward(ag::constant(image)).value();
}

FeaturePyramid extract_features(const Tensor& image, const RobustEncoder& encoder) {
  FeaturePyramid p = extract_pyramid(image, encoder);
  p.f32 = extract_denoised(image, encoder.denoiser());
  return p;
}

Tensor fit_artifact_map(std::span<const Tensor> token_batches) {
  if (token_batches.size() < 2)
    throw InsufficientDataError("fitting an artifact map needs at least two images, got " +
                                std::to_string(token_batches.size()));
  const Shape& shape = token_batches.front().shape();
  if (shape.size() != 2) throw ArgumentError("token batches must be [N, C]");
  const int64_t n = shape[0], c = shape[1];
  Tensor map(shape, 0.0);
  for (const auto& t : token_batches) {
    if (t.shape() != shape) throw ArgumentError("token batches differ in shape");
    std::vector<double> mean(static_cast<size_t>(c), 0.0);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t k = 0; k < c; ++k) mean[static_cast<size_t>(k)] += t.at(i, k);
    for (double& m : mean) m /= static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t k = 0; k < c; ++k) map.at(i, k) += t.at(i, k) - mean[static_cast<size_t>(k)];
  }
  for (double& v : map.values()) v /= static_cast<double>(token_batches.size());
  return map;
}

std::pair<FeaturePyramid, FeaturePyramid> encode_pair(const StereoSample& sample, const RobustEncoder& encoder) {
  sample.validate();
  return {extract_features(sample.left, encoder), extract_features(sample.right, encoder)};
}

Tensor pad_to_multiple(const Tensor& image, int64_t multiple) {
  const int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const int64_t ph = (h + multiple - 1) / multiple * multiple, pw = (w + multiple - 1) / multiple * multiple;
  if (ph == h && pw == w) return image;
  Tensor out({c, ph, pw});
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < ph; ++y)
      for (int64_t x = 0; x < pw; ++x) out.at(ch, y, x) = image.at(ch, std::min(y, h - 1), std::min(x, w - 1));
  return out;
}

}  // namespace wxs::encoder
