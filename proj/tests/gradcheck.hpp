#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>

#include "wxstereo/autograd/autograd.hpp"
#include "wxstereo/autograd/nn.hpp"

namespace wxs::test {

struct GradCheckResult {
  int64_t checked = 0;
  int64_t failed = 0;
  double worst = 0.0;  // max |analytic - numeric| / (max(|analytic|, |numeric|) + atol/rtol)
  std::string first_failure;
};

/// Compares the analytic gradient of a random projection of `forward(image)`
/// against central differences at `samples` random coordinates of the image
/// and `samples` random parameter coordinates. A coordinate passes when
/// |g - fd| <= rtol * max(|g|, |fd|) + atol.
inline GradCheckResult gradcheck(const std::function<ag::Var(const ag::Var&)>& forward, const Tensor& image,
                                 nn::ParameterList& params, int64_t samples, uint64_t seed, double rtol = 1e-3,
                                 double atol = 1e-8, double h = 1e-6) {
  std::mt19937_64 rng(seed);
  ag::Var x = ag::parameter(image);
  params.zero_grad();
  const ag::Var out = forward(x);
  Tensor proj(out.shape());
  std::normal_distribution<double> nd;
  for (int64_t i = 0; i < proj.numel(); ++i) proj[i] = nd(rng);
  ag::backward(ag::weighted_sum(out, proj));

  auto objective = [&] {
    ag::NoGradGuard guard;
    const Tensor y = forward(x).value();
    double acc = 0;
    for (int64_t i = 0; i < y.numel(); ++i) acc += y[i] * proj[i];
    return acc;
  };

  GradCheckResult r;
  auto probe = [&](ag::Var& v, int64_t idx, const std::string& what) {
    const double analytic = v.grad().empty() ? 0.0 : v.grad()[idx];
    double& slot = v.mutable_value()[idx];
    const double saved = slot;
    slot = saved + h;
    const double up = objective();
    slot = saved - h;
    const double down = objective();
    slot = saved;
    const double numeric = (up - down) / (2 * h);
    const double err = std::abs(analytic - numeric);
    const double allowed = rtol * std::max(std::abs(analytic), std::abs(numeric)) + atol;
    r.worst = std::max(r.worst, err / (std::max(std::abs(analytic), std::abs(numeric)) + atol / rtol));
    ++r.checked;
    if (err > allowed) {
      if (r.failed++ == 0)
        r.first_failure = what + "[" + std::to_string(idx) + "]: analytic " + std::to_string(analytic) +
                          " numeric " + std::to_string(numeric);
    }
  };

  std::uniform_int_distribution<int64_t> pick_px(0, image.numel() - 1);
  for (int64_t s = 0; s < samples; ++s) probe(x, pick_px(rng), "input");

  auto& items = params.items();
  std::vector<size_t> with_grad;
  for (size_t i = 0; i < items.size(); ++i)
    if (!items[i].var.grad().empty()) with_grad.push_back(i);
  if (!with_grad.empty()) {
    std::uniform_int_distribution<size_t> pick_param(0, with_grad.size() - 1);
    for (int64_t s = 0; s < samples; ++s) {
      auto& item = items[with_grad[pick_param(rng)]];
      std::uniform_int_distribution<int64_t> pick_el(0, item.var.value().numel() - 1);
      probe(item.var, pick_el(rng), item.name);
    }
  }
  return r;
}

}  // namespace wxs::test
