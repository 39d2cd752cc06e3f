#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "wxstereo/core/errors.hpp"
#include "wxstereo/stereonet/stereonet.hpp"
#include "wxstereo/synthetic/synthetic.hpp"
#include "support.hpp"

using namespace wxs;
using namespace wxs::stereonet;

namespace {

StereoConfig toy_config(int64_t k = 4) {
  StereoConfig cfg;
  cfg.encoder.plan = {16, 24, 32, 32};
  cfg.encoder.stem_channels = 8;
  cfg.d_range = 8;
  cfg.hidden_channels = 16;
  cfg.iterations = k;
  return cfg;
}

StereoSample toy_pair(int64_t index = 0, int64_t h = 96, int64_t w = 192) {
  synthetic::SyntheticConfig sc;
  sc.seed = 3;
  sc.height = h;
  sc.width = w;
  return synthetic::render_pair(sc, index);
}

double masked_mae(const Tensor& pred, const StereoSample& s) {
  double acc = 0;
  int64_t n = 0;
  for (int64_t i = 0; i < pred.numel(); ++i)
    if (s.valid_mask[i] != 0.0) {
      acc += std::abs(pred[i] - s.disparity[i]);
      ++n;
    }
  return acc / static_cast<double>(n);
}

// Right features equal the left ones moved `shift` columns to the left, so
// left column x matches right column x - shift.
std::pair<Tensor, Tensor> shifted_features(std::mt19937_64& rng, int64_t c, int64_t h, int64_t w, int64_t shift) {
  const Tensor left = test::random_tensor({c, h, w}, rng);
  Tensor right({c, h, w}, 0.0);
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        const int64_t src = x + shift;
        right.at(ch, y, x) = src < w ? left.at(ch, y, src) : 0.3;
      }
  return {left, right};
}

}  // namespace

TEST_CASE("cost volume: self-correlation of unit features is 1") {
  std::mt19937_64 rng(1);
  const Tensor f = test::random_tensor({6, 3, 10}, rng);
  const auto vol = build_cost_volume(f, f, 4);
  REQUIRE(vol.cost.shape() == Shape{4, 3, 10});
  for (int64_t y = 0; y < 3; ++y)
    for (int64_t x = 0; x < 10; ++x) CHECK(vol.cost.at(0, y, x) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(build_cost_volume(f, f, 1).cost.shape() == Shape{1, 3, 10});
  CHECK_THROWS_AS(build_cost_volume(f, f, 11), ArgumentError);
  CHECK_THROWS_AS(build_cost_volume(f, Tensor({6, 3, 9}), 2), ArgumentError);
}

TEST_CASE("cost volume: argmax recovers a constructed shift on interior columns") {
  std::mt19937_64 rng(2);
  for (int64_t shift : {0, 3, 7}) {
    const int64_t d = 10, w = 32;
    const auto [l, r] = shifted_features(rng, 8, 4, w, shift);
    const auto vol = build_cost_volume(l, r, d);
    for (int64_t y = 0; y < 4; ++y)
      for (int64_t x = d - 1; x < w - shift; ++x) {
        int64_t best = 0;
        for (int64_t k = 1; k < d; ++k)
          if (vol.cost.at(k, y, x) > vol.cost.at(best, y, x)) best = k;
        CHECK(best == shift);
      }
  }
}

TEST_CASE("soft argmin: examples and bounds") {
  CostVolume one_hot{Tensor({6, 1, 1}, 0.0), 6};
  one_hot.cost[4] = 1.0;
  CHECK(std::abs(soft_argmin(one_hot, 0.01)[0] - 4.0) < 1e-4);

  const CostVolume uniform{Tensor({5, 2, 2}, 0.3), 5};
  const Tensor flat = soft_argmin(uniform, 0.05);
  for (double v : flat.values()) CHECK(v == doctest::Approx(2.0).epsilon(1e-15));

  std::mt19937_64 rng(3);
  const CostVolume vol{test::random_tensor({7, 3, 4}, rng), 7};
  const Tensor got = soft_argmin(vol, 0.2);
  for (int64_t p = 0; p < 12; ++p) {
    double z = 0, acc = 0;
    for (int64_t d = 0; d < 7; ++d) z += std::exp(vol.cost[d * 12 + p] / 0.2);
    for (int64_t d = 0; d < 7; ++d) acc += d * std::exp(vol.cost[d * 12 + p] / 0.2) / z;
    CHECK(std::abs(got[p] - acc) < 1e-6);
    CHECK(got[p] >= 0.0);
    CHECK(got[p] <= 6.0);
  }
  // Extreme costs must not overflow.
  const CostVolume wild{test::random_tensor({7, 3, 4}, rng, -1e4, 1e4), 7};
  const Tensor extreme = soft_argmin(wild, 0.01);
  for (double v : extreme.values()) {
    CHECK(std::isfinite(v));
    CHECK(v >= 0.0);
    CHECK(v <= 6.0);
  }
}

TEST_CASE("refine: K = 0 upsamples and scales the initial map") {
  std::mt19937_64 rng(4);
  StereoModel model(toy_config());
  const Tensor quarter = test::random_tensor({2, 3}, rng, 0, 7);
  const auto est = refine(model.refiner(), quarter, {}, 0);
  CHECK(est.refined.empty());
  REQUIRE(est.initial.shape() == Shape{8, 12});
  // Output pixel X samples input coordinate X / 4, so stride-aligned pixels
  // carry exactly four times the quarter value.
  for (int64_t y = 0; y < 2; ++y)
    for (int64_t x = 0; x < 3; ++x) CHECK(est.initial.at(4 * y, 4 * x) == 4.0 * quarter.at(y, x));
  CHECK(est.final() == est.initial);
}

TEST_CASE("refine: a zero update network returns the initial map at every iteration") {
  StereoConfig cfg = toy_config(3);
  cfg.zero_update = true;
  StereoModel model(cfg);
  const auto s = toy_pair(0, 64, 128);
  const auto est = estimate(model, s);
  REQUIRE(est.refined.size() == 3);
  for (const auto& r : est.refined) CHECK(r == est.initial);
}

TEST_CASE("refine: refined maps stay inside [0, 4D]") {
  StereoModel model(toy_config(4));
  std::mt19937_64 rng(5);
  // Push the update network hard so the clamp is exercised.
  for (auto& p : model.parameters().items())
    if (p.name.rfind("refine.", 0) == 0)
      for (double& v : p.var.mutable_value().storage()) v = std::uniform_real_distribution<double>(-20, 20)(rng);
  const auto s = toy_pair(1, 64, 128);
  const auto est = estimate(model, s);
  bool hit_bound = false;
  for (const auto& r : est.refined)
    for (double v : r.values()) {
      CHECK(v >= 0.0);
      CHECK(v <= 4.0 * 8);
      hit_bound = hit_bound || v == 0.0 || v == 32.0;
    }
  CHECK(hit_bound);
}

TEST_CASE("l1 loss: examples") {
  const Tensor gt({2, 3}, 5.0), mask({2, 3}, 1.0);
  DisparityEstimate perfect{gt, {gt, gt}, 2};
  CHECK(l1_loss(perfect, gt, mask, 0.9) == 0.0);

  // K = 1, error 2 everywhere, gamma 1: refined term 2 plus initial term 2.
  const Tensor off({2, 3}, 7.0);
  CHECK(l1_loss(DisparityEstimate{off, {off}, 1}, gt, mask, 1.0) == 4.0);
  // Weighting: gamma^{K-k} on refined_k, gamma^{K+1} on the initial map.
  const Tensor off1({2, 3}, 6.0);
  const double g = 0.5;
  CHECK(l1_loss(DisparityEstimate{off, {off1, off}, 2}, gt, mask, g) ==
        doctest::Approx(g * 1.0 + 1.0 * 2.0 + g * g * g * 2.0).epsilon(1e-15));

  CHECK_THROWS_AS(l1_loss(perfect, gt, Tensor({2, 3}, 0.0), 0.9), UndefinedLossError);
  CHECK_THROWS_AS(l1_loss(perfect, gt, mask, 0.0), ArgumentError);
  CHECK_THROWS_AS(l1_loss(perfect, gt, mask, 1.5), ArgumentError);
}

TEST_CASE("l1 loss: predictions at invalid pixels never matter") {
  std::mt19937_64 rng(6);
  const Tensor gt = test::random_tensor({4, 6}, rng, 0, 10);
  Tensor mask({4, 6}, 1.0);
  for (int64_t i = 0; i < 24; i += 2) mask[i] = 0.0;
  Tensor pred = gt;
  for (int64_t i = 0; i < 24; ++i) pred[i] += i % 2 ? 2.0 : 100.0;
  const DisparityEstimate est{pred, {pred}, 1};
  CHECK(l1_loss(est, gt, mask, 1.0) == 4.0);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor changed = pred;
    for (int64_t i = 0; i < 24; i += 2) changed[i] = std::uniform_real_distribution<double>(-50, 50)(rng);
    CHECK(l1_loss(DisparityEstimate{changed, {changed}, 1}, gt, mask, 0.9) == l1_loss(est, gt, mask, 0.9));
  }
}

TEST_CASE("train step: zero learning rate leaves parameters untouched") {
  StereoModel model(toy_config(2));
  const auto s = toy_pair(0, 64, 128);
  AdamState st;
  st.lr = 0.0;
  const auto before = model.parameters().snapshot();
  const double l1 = train_step(model, std::span<const StereoSample>(&s, 1), st, 0.9);
  CHECK(model.parameters().snapshot() == before);
  const double l2 = train_step(model, std::span<const StereoSample>(&s, 1), st, 0.9);
  CHECK(model.parameters().snapshot() == before);
  CHECK(l1 == l2);
}

TEST_CASE("train step: a diverging step aborts with a training error") {
  StereoModel model(toy_config(1));
  const auto s = toy_pair(0, 64, 128);
  AdamState st;
  st.kind = Optimizer::sgd;
  st.lr = 1e6;
  CHECK_THROWS_AS(
      {
        for (int i = 0; i < 20; ++i) train_step(model, std::span<const StereoSample>(&s, 1), st, 0.9);
      },
      TrainingError);
}

TEST_CASE("train step: small gradient steps lower the loss") {
  // Plain gradient descent at a small rate is a descent method, so the
  // training objective falls at nearly every step.
  const auto s = toy_pair(0);
  StereoModel model(toy_config(4));
  AdamState st;
  st.kind = Optimizer::sgd;
  st.lr = 1e-5;
  double prev = train_step(model, std::span<const StereoSample>(&s, 1), st, 0.9);
  int decreases = 0;
  for (int k = 0; k < 50; ++k) {
    const double l = train_step(model, std::span<const StereoSample>(&s, 1), st, 0.9);
    decreases += l < prev;
    prev = l;
  }
  CHECK(decreases >= 45);
}

TEST_CASE("train step: with one iteration the refined error falls step by step") {
  const auto s = toy_pair(0);
  StereoModel model(toy_config(1));
  AdamState st;
  st.kind = Optimizer::sgd;
  st.lr = 1e-4;
  double prev = masked_mae(estimate(model, s).final(), s);
  int decreases = 0;
  for (int k = 0; k < 50; ++k) {
    train_step(model, std::span<const StereoSample>(&s, 1), st, 0.9);
    const double e = masked_mae(estimate(model, s).final(), s);
    decreases += e < prev;
    prev = e;
  }
  CHECK(decreases >= 45);
}

TEST_CASE("train: deterministic for a fixed seed") {
  std::vector<StereoSample> samples{toy_pair(0, 64, 128), toy_pair(1, 64, 128), toy_pair(2, 64, 128)};
  TrainOptions opt;
  opt.steps = 6;
  opt.batch_size = 2;
  opt.eval_every = 3;
  opt.queue_capacity = 1;
  opt.seed = 4;
  StereoModel a(toy_config(2)), b(toy_config(2));
  const auto la = train(a, samples, opt);
  const auto lb = train(b, samples, opt);
  CHECK(la.losses == lb.losses);
  CHECK(la.steps_run == 6);
  REQUIRE(la.evals.size() == 2);
  CHECK(la.evals[1].first == 6);
  CHECK(la.final_epe == la.evals[1].second);
  CHECK(a.parameters().snapshot() == b.parameters().snapshot());
}

TEST_CASE("train: stops at the first evaluation under the target") {
  std::vector<StereoSample> samples{toy_pair(0, 64, 128)};
  TrainOptions opt;
  opt.steps = 10;
  opt.eval_every = 2;
  opt.target_epe = 1e9;
  StereoModel m(toy_config(1));
  const auto log = train(m, samples, opt);
  CHECK(log.reached_target);
  CHECK(log.steps_run == 2);
}

TEST_CASE("predict: shape, sign and determinism, including unpadded sizes") {
  StereoModel model(toy_config(2));
  auto s = toy_pair(0, 64, 128);
  const Tensor a = predict(model, s), b = predict(model, s);
  CHECK(a == b);
  CHECK(a.shape() == s.disparity.shape());
  for (double v : a.values()) CHECK(v >= 0.0);

  StereoSample odd;
  odd.left = Tensor({3, 50, 100}, 0.4);
  odd.right = Tensor({3, 50, 100}, 0.4);
  odd.disparity = Tensor({50, 100}, 0.0);
  odd.valid_mask = Tensor({50, 100}, 1.0);
  CHECK(predict(model, odd).shape() == Shape{50, 100});
}

TEST_CASE("stereo checkpoint roundtrip") {
  test::TempDir dir("stereo");
  StereoModel model(toy_config(2));
  auto s = toy_pair(0, 64, 128);
  std::vector<Tensor> lefts{s.left, toy_pair(1, 64, 128).left};
  model.encoder().denoiser().fit(lefts);
  model.save(dir / "m.ckpt");
  const StereoModel back = StereoModel::load(dir / "m.ckpt");
  CHECK(back.config().iterations == 2);
  CHECK(back.parameters().snapshot() == model.parameters().snapshot());
  CHECK(predict(back, s) == predict(model, s));
  model.encoder().save(dir / "e.ckpt");
  CHECK_THROWS_AS(StereoModel::load(dir / "e.ckpt"), ModelError);
}
