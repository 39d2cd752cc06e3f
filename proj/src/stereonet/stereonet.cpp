#include "wxstereo/stereonet/stereonet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include "wxstereo/core/bounded_queue.hpp"
#include "wxstereo/core/errors.hpp"

namespace wxs::stereonet {
namespace {

constexpr int64_t kQuarter = 4;

std::vector<double> range_values(int64_t n) {
  std::vector<double> v(static_cast<size_t>(n));
  std::iota(v.begin(), v.end(), 0.0);
  return v;
}

ag::Var as_map(const ag::Var& plane) {
  return ag::reshape(plane, {1, plane.shape()[0], plane.shape()[1]});
}

ag::Var to_full_resolution(const ag::Var& quarter) {
  ag::Var up = ag::upsample(as_map(quarter), kQuarter);
  return ag::scale(ag::reshape(up, {up.shape()[1], up.shape()[2]}), static_cast<double>(kQuarter));
}

Tensor crop(const Tensor& map, int64_t h, int64_t w) {
  if (map.dim(0) == h && map.dim(1) == w) return map;
  Tensor out({h, w});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) out.at(y, x) = map.at(y, x);
  return out;
}

}  // namespace

void to_json(nlohmann::json& j, const StereoConfig& c) {
  j = nlohmann::json{{"encoder", c.encoder},
                     {"D", c.d_range},
                     {"K", c.iterations},
                     {"temperature", c.temperature},
                     {"lookup_radius", c.lookup_radius},
                     {"lookup_temperature", c.lookup_temperature},
                     {"context_channels", c.context_channels},
                     {"hidden_channels", c.hidden_channels},
                     {"zero_update", c.zero_update}};
}

void from_json(const nlohmann::json& j, StereoConfig& c) {
  if (j.contains("encoder")) c.encoder = j.at("encoder").get<encoder::EncoderConfig>();
  c.d_range = j.value("D", c.d_range);
  c.iterations = j.value("K", c.iterations);
  c.temperature = j.value("temperature", c.temperature);
  c.lookup_radius = j.value("lookup_radius", c.lookup_radius);
  c.lookup_temperature = j.value("lookup_temperature", c.lookup_temperature);
  c.context_channels = j.value("context_channels", c.context_channels);
  c.hidden_channels = j.value("hidden_channels", c.hidden_channels);
  c.zero_update = j.value("zero_update", c.zero_update);
  if (c.d_range < 1) throw ConfigError("D must be at least 1");
  if (c.iterations < 0) throw ConfigError("K must be non-negative");
  if (c.temperature <= 0.0 || c.lookup_temperature <= 0.0) throw ConfigError("temperatures must be positive");
  if (c.lookup_radius < 0) throw ConfigError("lookup_radius must be non-negative");
}

CostVolume build_cost_volume(const Tensor& left_f4, const Tensor& right_f4, int64_t d_range) {
  if (left_f4.rank() != 3 || left_f4.shape() != right_f4.shape())
    throw ArgumentError("cost volume needs equal [C, h, w] features, got " + shape_str(left_f4.shape()) + " and " +
                        shape_str(right_f4.shape()));
  if (d_range < 1 || d_range > left_f4.dim(2))
    throw ArgumentError("disparity range " + std::to_string(d_range) + " must lie in [1, " +
                        std::to_string(left_f4.dim(2)) + "] for quarter width " + std::to_string(left_f4.dim(2)));
  ag::NoGradGuard no_grad;
  ag::Var cost = ag::correlation_volume(ag::l2_normalize_channels(ag::constant(left_f4)),
                                        ag::l2_normalize_channels(ag::constant(right_f4)), d_range, -1.0);
  return {cost.value(), d_range};
}

Tensor soft_argmin(const CostVolume& volume, double temperature) {
  if (temperature <= 0.0) throw ArgumentError("soft_argmin temperature must be positive");
  ag::NoGradGuard no_grad;
  const auto values = range_values(volume.d_range);
  return ag::soft_expectation(ag::constant(volume.cost), values, temperature).value();
}

Tensor upsample_disparity(const Tensor& quarter) {
  ag::NoGradGuard no_grad;
  return to_full_resolution(ag::constant(quarter)).value();
}

Refiner::Refiner(const StereoConfig& cfg, nn::ParameterList& params, std::mt19937_64& rng)
    : d_range_(cfg.d_range),
      lookup_temperature_(cfg.lookup_temperature),
      slope_(cfg.encoder.leaky_slope) {
  for (int64_t o = -cfg.lookup_radius; o <= cfg.lookup_radius; ++o) offsets_.push_back(static_cast<double>(o));
  const auto& p = cfg.encoder.plan;
  const auto init = cfg.zero_update ? nn::Init::zero : nn::Init::he;
  const int64_t n_off = static_cast<int64_t>(offsets_.size());
  ctx_proj_ = nn::make_conv(params, "refine.ctx", p.c8 + p.c16 + p.c32, cfg.context_channels, 1, 1, true,
                            nn::Init::he, rng);
  up1_ = nn::make_conv(params, "refine.up1", n_off + cfg.context_channels + 1, cfg.hidden_channels, 3, 1, true,
                       init, rng);
  up2_ = nn::make_conv(params, "refine.up2", cfg.hidden_channels, 1, 3, 1, true, nn::Init::zero, rng);
  lookup_gain_ = params.add("refine.gain", Tensor({1}, 0.0));
}

Refiner::Trace Refiner::run(const ag::Var& initial_quarter, const RefineInputs& in, int64_t iterations) const {
  if (iterations < 0) throw ArgumentError("refinement iterations must be non-negative");
  Trace trace;
  trace.initial_up = to_full_resolution(initial_quarter);
  if (iterations == 0) return trace;

  // Context is read-only across iterations.
  ag::Var ctx = ag::leaky_relu(
      ctx_proj_(ag::concat_channels({ag::upsample(in.f8, 2), ag::upsample(in.f16, 4), ag::upsample(in.f32, 8)})),
      slope_);
  ag::Var left = ag::l2_normalize_channels(in.left_f4);
  ag::Var right = ag::l2_normalize_channels(in.right_f4);
  const double d_max = static_cast<double>(d_range_);

  ag::Var d = initial_quarter;
  for (int64_t k = 0; k < iterations; ++k) {
    ag::Var corr = ag::warp_correlation(left, right, d, offsets_);
    ag::Var delta_match = ag::scale_by(ag::soft_expectation(corr, offsets_, lookup_temperature_), lookup_gain_);
    ag::Var x = ag::concat_channels({corr, ctx, as_map(ag::scale(d, 1.0 / d_max))});
    ag::Var delta_ctx = up2_(ag::leaky_relu(up1_(x), slope_));
    ag::Var delta = ag::add(delta_match, ag::reshape(delta_ctx, d.shape()));
    d = ag::clamp_restoring(ag::add(d, delta), 0.0, d_max);
    trace.refined.push_back(to_full_resolution(d));
  }
  return trace;
}

DisparityEstimate refine(const Refiner& refiner, const Tensor& initial_quarter, const RefineInputs& inputs,
                         int64_t iterations) {
  ag::NoGradGuard no_grad;
  const auto trace = refiner.run(ag::constant(initial_quarter), inputs, iterations);
  DisparityEstimate est;
  est.initial = trace.initial_up.value();
  for (const auto& r : trace.refined) est.refined.push_back(r.value());
  est.iterations = iterations;
  return est;
}

StereoModel::StereoModel(StereoConfig cfg)
    : cfg_(std::move(cfg)),
      encoder_(cfg_.encoder),
      rng_(cfg_.encoder.seed ^ 0x5deece66dULL),
      refiner_(cfg_, refiner_params_, rng_) {
  params_.extend(encoder_.parameters());
  params_.extend(refiner_params_);
}

Refiner::Trace StereoModel::forward(const Tensor& left, const Tensor& right) const {
  if (left.rank() != 3 || left.dim(0) != 3 || left.shape() != right.shape())
    throw ArgumentError("stereo forward needs two [3, H, W] images of equal size");
  encoder::require_divisible(left.dim(1), left.dim(2));
  const int64_t quarter_w = left.dim(2) / kQuarter;
  if (cfg_.d_range > quarter_w)
    throw ArgumentError("disparity range " + std::to_string(cfg_.d_range) + " exceeds quarter width " +
                        std::to_string(quarter_w));

  ag::Var l_img = ag::constant(left), r_img = ag::constant(right);
  const auto lp = encoder_.conv().forward(l_img);
  const auto rp = encoder_.conv().forward(r_img);
  RefineInputs in{lp.f4, rp.f4, lp.f8, lp.f16, encoder_.denoiser().forward(l_img)};

  ag::Var cost = ag::correlation_volume(ag::l2_normalize_channels(in.left_f4),
                                        ag::l2_normalize_channels(in.right_f4), cfg_.d_range, -1.0);
  const auto values = range_values(cfg_.d_range);
  ag::Var initial = ag::soft_expectation(cost, values, cfg_.temperature);
  return refiner_.run(initial, in, cfg_.iterations);
}

void StereoModel::save(const std::filesystem::path& path) const {
  nlohmann::json config = cfg_;
  nn::ParameterList all = params_;
  const auto [rows, cols] = encoder_.denoiser().artifact_grid();
  config["artifact_grid"] = {rows, cols};
  if (!encoder_.denoiser().artifact_map().empty()) all.add("dvt.artifact_map", encoder_.denoiser().artifact_map());
  nn::save_checkpoint(path, "stereo", config, all);
}

StereoModel StereoModel::load(const std::filesystem::path& path) {
  const auto header = nn::read_checkpoint_header(path);
  if (header.kind != "stereo") throw ModelError(path.string() + " is a '" + header.kind + "' checkpoint");
  StereoModel model(header.config.get<StereoConfig>());
  const auto grid = header.config.value("artifact_grid", std::vector<int64_t>{0, 0});
  nn::ParameterList all = model.params_;
  const bool has_artifact = grid.size() == 2 && grid[0] > 0;
  if (has_artifact) all.add("dvt.artifact_map", Tensor({grid[0] * grid[1], model.cfg_.encoder.plan.c32}));
  nn::load_checkpoint(path, "stereo", all);
  if (has_artifact) model.encoder_.denoiser().set_artifact_map(all.items().back().var.value(), grid[0], grid[1]);
  return model;
}

ag::Var l1_loss(const ag::Var& initial, const std::vector<ag::Var>& refined, const Tensor& gt, const Tensor& mask,
                double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ArgumentError("gamma must lie in (0, 1]");
  const auto k_total = static_cast<int>(refined.size());
  ag::Var total = ag::scale(ag::masked_l1_mean(initial, gt, mask), std::pow(gamma, k_total + 1));
  for (int k = 1; k <= k_total; ++k)
    total = ag::add(total, ag::scale(ag::masked_l1_mean(refined[static_cast<size_t>(k - 1)], gt, mask),
                                     std::pow(gamma, k_total - k)));
  return total;
}

double l1_loss(const DisparityEstimate& estimate, const Tensor& gt, const Tensor& mask, double gamma) {
  ag::NoGradGuard no_grad;
  std::vector<ag::Var> refined;
  for (const auto& r : estimate.refined) refined.push_back(ag::constant(r));
  return l1_loss(ag::constant(estimate.initial), refined, gt, mask, gamma).value()[0];
}

double train_step(StereoModel& model, std::span<const StereoSample> batch, AdamState& state, double gamma) {
  if (batch.empty()) throw ArgumentError("train_step needs a nonempty batch");
  auto& params = model.parameters();
  params.zero_grad();

  ag::Var total;
  for (const auto& s : batch) {
    const auto trace = model.forward(s.left, s.right);
    ag::Var loss = l1_loss(trace.initial_up, trace.refined, s.disparity, s.valid_mask, gamma);
    total = total.defined() ? ag::add(total, loss) : loss;
  }
  total = ag::scale(total, 1.0 / static_cast<double>(batch.size()));
  const double loss_value = total.value()[0];
  if (!std::isfinite(loss_value))
    throw TrainingError("non-finite loss at step " + std::to_string(state.step) + "; aborting");
  ag::backward(total);

  auto& items = params.items();
  if (state.m.size() != items.size()) {
    state.m.clear();
    state.v.clear();
    for (const auto& p : items) {
      state.m.emplace_back(p.var.shape(), 0.0);
      state.v.emplace_back(p.var.shape(), 0.0);
    }
  }
  for (const auto& p : items)
    if (!p.var.grad().empty() && !p.var.grad().all_finite())
      throw TrainingError("non-finite gradient in '" + p.name + "' at step " + std::to_string(state.step));

  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < items.size(); ++i) {
    ag::Var& var = items[i].var;
    const Tensor& g = var.grad();
    if (g.empty()) continue;
    Tensor& w = var.mutable_value();
    if (state.kind == Optimizer::sgd) {
      for (int64_t j = 0; j < w.numel(); ++j) w[j] -= state.lr * g[j];
      continue;
    }
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (int64_t j = 0; j < w.numel(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      w[j] -= state.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + state.eps);
    }
  }
  return loss_value;
}

DisparityEstimate estimate(const StereoModel& model, const StereoSample& sample) {
  const int64_t h = sample.left.dim(1), w = sample.left.dim(2);
  const Tensor left = encoder::pad_to_multiple(sample.left, 32);
  const Tensor right = encoder::pad_to_multiple(sample.right, 32);
  ag::NoGradGuard no_grad;
  const auto trace = model.forward(left, right);
  DisparityEstimate est;
  est.initial = crop(trace.initial_up.value(), h, w);
  for (const auto& r : trace.refined) est.refined.push_back(crop(r.value(), h, w));
  est.iterations = static_cast<int64_t>(est.refined.size());
  return est;
}

Tensor predict(const StereoModel& model, const StereoSample& sample) { return estimate(model, sample).final(); }

double dataset_epe(const StereoModel& model, const std::vector<StereoSample>& samples) {
  double err = 0.0;
  int64_t count = 0;
  for (const auto& s : samples) {
    const Tensor pred = predict(model, s);
    for (int64_t i = 0; i < pred.numel(); ++i) {
      if (s.valid_mask[i] == 0.0) continue;
      err += std::fabs(pred[i] - s.disparity[i]);
      ++count;
    }
  }
  if (count == 0) throw UndefinedLossError("no valid pixels to evaluate");
  return err / static_cast<double>(count);
}

TrainLog train(StereoModel& model, const std::vector<StereoSample>& samples, const TrainOptions& options,
               const std::function<void(int64_t, double)>& on_step) {
  if (samples.empty()) throw ArgumentError("training needs at least one sample");
  if (options.steps < 0 || options.batch_size < 1) throw ArgumentError("steps >= 0 and batch_size >= 1 required");
  for (const auto& s : samples) s.validate();

  BoundedQueue<std::vector<StereoSample>> queue(options.queue_capacity);
  std::thread producer([&] {
    std::mt19937_64 rng(options.seed);
    std::vector<size_t> order(samples.size());
    size_t cursor = order.size();
    for (int64_t step = 0; step < options.steps; ++step) {
      std::vector<StereoSample> batch;
      for (int64_t b = 0; b < options.batch_size; ++b) {
        if (cursor == order.size()) {
          std::iota(order.begin(), order.end(), size_t{0});
          std::shuffle(order.begin(), order.end(), rng);
          cursor = 0;
        }
        batch.push_back(samples[order[cursor++]]);
      }
      if (!queue.push(std::move(batch))) return;
    }
    queue.close();
  });

  TrainLog log;
  AdamState state;
  state.lr = options.lr;
  try {
    while (auto batch = queue.pop()) {
      const double loss = train_step(model, *batch, state, options.gamma);
      log.losses.push_back(loss);
      ++log.steps_run;
      if (on_step) on_step(log.steps_run, loss);
      if (options.eval_every > 0 && log.steps_run % options.eval_every == 0) {
        const double epe = dataset_epe(model, samples);
        log.evals.emplace_back(log.steps_run, epe);
        if (options.target_epe > 0.0 && epe < options.target_epe) {
          log.reached_target = true;
          break;
        }
      }
    }
  } catch (...) {
    queue.close();
    producer.join();
    throw;
  }
  queue.close();
  producer.join();
  log.final_epe = !log.evals.empty() && log.evals.back().first == log.steps_run ? log.evals.back().second
                                                                                  : dataset_epe(model, samples);
  if (options.target_epe > 0.0 && log.final_epe < options.target_epe) log.reached_target = true;
  return log;
}

}  // namespace wxs::stereonet
