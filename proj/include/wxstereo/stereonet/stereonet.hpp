#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "wxstereo/autograd/nn.hpp"
#include "wxstereo/core/dataset.hpp"
#include "wxstereo/encoder/encoder.hpp"

namespace wxs::stereonet {

/// Matching costs [D, H/4, W/4] for disparities 0..D-1 at quarter resolution.
struct CostVolume {
  Tensor cost;
  int64_t d_range = 0;
};

/// Full-resolution estimates: the upsampled soft-argmin result and one map per
/// refinement iteration.
struct DisparityEstimate {
  Tensor initial;
  std::vector<Tensor> refined;
  int64_t iterations = 0;

  const Tensor& final() const { return refined.empty() ? initial : refined.back(); }
};

struct StereoConfig {
  encoder::EncoderConfig encoder;
  int64_t d_range = 48;          // quarter-resolution candidates (192 px at full resolution)
  int64_t iterations = 4;        // K
  double temperature = 0.05;     // soft-argmin over the cost volume
  int64_t lookup_radius = 2;     // refinement correlation offsets -r..r (quarter px)
  double lookup_temperature = 0.1;
  int64_t context_channels = 16;
  int64_t hidden_channels = 24;
  bool zero_update = false;      // zero-initialise the update network
};

void to_json(nlohmann::json& j, const StereoConfig& c);
void from_json(const nlohmann::json& j, StereoConfig& c);

/// Throws ArgumentError when D exceeds W/4 or feature shapes differ. Costs are
/// cosine correlations; shifts falling off the left edge cost -1.
CostVolume build_cost_volume(const Tensor& left_f4, const Tensor& right_f4, int64_t d_range);

/// Σ_d d · softmax_d(cost / temperature); values in [0, D-1].
Tensor soft_argmin(const CostVolume& volume, double temperature);

/// Features the refiner reads: matching features at stride 4 for both views
/// and the left view's context pyramid (strides 8, 16, 32).
struct RefineInputs {
  ag::Var left_f4;
  ag::Var right_f4;
  ag::Var f8;
  ag::Var f16;
  ag::Var f32;
};

/// Recurrent residual refiner. Each iteration looks up correlations around the
/// current estimate, predicts a residual Δ, and clamps the updated map to
/// [0, D] at quarter resolution ([0, 4D] at full resolution).
class Refiner {
 public:
  Refiner(const StereoConfig& cfg, nn::ParameterList& params, std::mt19937_64& rng);

  struct Trace {
    ag::Var initial_up;
    std::vector<ag::Var> refined;  // full resolution
  };
  Trace run(const ag::Var& initial_quarter, const RefineInputs& in, int64_t iterations) const;

 private:
  int64_t d_range_;
  double lookup_temperature_;
  std::vector<double> offsets_;
  double slope_;
  nn::Conv2d ctx_proj_, up1_, up2_;
  ag::Var lookup_gain_;
};

/// Convenience wrapper over Refiner::run on plain tensors.
DisparityEstimate refine(const Refiner& refiner, const Tensor& initial_quarter, const RefineInputs& inputs,
                         int64_t iterations);

/// Upsamples a quarter-resolution disparity to full resolution, scaling
/// values by 4.
Tensor upsample_disparity(const Tensor& quarter);

class StereoModel {
 public:
  explicit StereoModel(StereoConfig cfg = {});
  StereoModel(const StereoModel&) = delete;
  StereoModel& operator=(const StereoModel&) = delete;
  StereoModel(StereoModel&&) = default;
  StereoModel& operator=(StereoModel&&) = default;

  const StereoConfig& config() const { return cfg_; }
  nn::ParameterList& parameters() { return params_; }
  const nn::ParameterList& parameters() const { return params_; }
  encoder::RobustEncoder& encoder() { return encoder_; }
  const encoder::RobustEncoder& encoder() const { return encoder_; }
  const Refiner& refiner() const { return refiner_; }

  /// Differentiable forward on images with H, W divisible by 32.
  Refiner::Trace forward(const Tensor& left, const Tensor& right) const;

  void save(const std::filesystem::path& path) const;
  static StereoModel load(const std::filesystem::path& path);

 private:
  StereoConfig cfg_;
  encoder::RobustEncoder encoder_;
  std::mt19937_64 rng_;
  nn::ParameterList refiner_params_;
  Refiner refiner_;
  nn::ParameterList params_;  // encoder + refiner, in that order
};

/// Σ_k γ^{K-k} · mean_valid |refined_k - gt| + γ^{K+1} · mean_valid |initial - gt|.
/// Throws UndefinedLossError for an empty mask, ArgumentError for γ ∉ (0, 1].
ag::Var l1_loss(const ag::Var& initial, const std::vector<ag::Var>& refined, const Tensor& gt, const Tensor& mask,
                double gamma);
double l1_loss(const DisparityEstimate& estimate, const Tensor& gt, const Tensor& mask, double gamma);

enum class Optimizer { adam, sgd };

/// Optimizer state; `sgd` ignores the moment buffers.
struct AdamState {
  Optimizer kind = Optimizer::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

/// One Adam step on the mean loss over `batch`. Returns the loss before the
/// update. Throws TrainingError on a non-finite loss or gradient.
double train_step(StereoModel& model, std::span<const StereoSample> batch, AdamState& state, double gamma);

struct TrainOptions {
  int64_t steps = 2000;
  int64_t batch_size = 1;
  double lr = 2e-3;
  double gamma = 0.9;
  uint64_t seed = 0;
  size_t queue_capacity = 4;  // batches buffered ahead of the optimizer
  int64_t eval_every = 50;    // 0 disables periodic evaluation
  double target_epe = 0.0;    // > 0: stop at the first evaluation below it
};

struct TrainLog {
  std::vector<double> losses;                       // one per step run
  std::vector<std::pair<int64_t, double>> evals;    // (steps completed, EPE)
  int64_t steps_run = 0;
  double final_epe = 0.0;
  bool reached_target = false;
};

/// Batches are assembled on a producer thread (per-epoch shuffles seeded by
/// `seed`) and handed over through a BoundedQueue; the calling thread runs the
/// optimizer. Deterministic for a fixed seed.
TrainLog train(StereoModel& model, const std::vector<StereoSample>& samples, const TrainOptions& options,
               const std::function<void(int64_t step, double loss)>& on_step = {});

/// Pooled end-point error: Σ|pred - gt| / Σ valid over all samples.
double dataset_epe(const StereoModel& model, const std::vector<StereoSample>& samples);

/// Full-resolution estimate; pads to a multiple of 32 internally and crops.
DisparityEstimate estimate(const StereoModel& model, const StereoSample& sample);
/// Final refined map [H, W], all values >= 0.
Tensor predict(const StereoModel& model, const StereoSample& sample);

}  // namespace wxs::stereonet
