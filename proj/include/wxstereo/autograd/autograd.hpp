#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "wxstereo/core/tensor.hpp"

// Minimal tape-free reverse-mode differentiation over Tensor values. Each op
// returns a Var whose node remembers its inputs and a backward closure;
// backward() walks the graph in reverse topological order.

namespace wxs::ag {

struct Node {
  Tensor value;
  Tensor grad;  // empty until something flows back
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  /// Zero-initialised gradient buffer shaped like value.
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }
  const std::shared_ptr<Node>& node() const { return node_; }
  void zero_grad() { node_->grad = Tensor(); }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Tensor value);
Var parameter(Tensor value);

/// Seeds d(root)/d(root) = 1 for a single-element root and accumulates into
/// every reachable node that requires gradients.
void backward(const Var& root);

/// While alive, ops on this thread record no graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

// Elementwise
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// a * s for a single-element s.
Var scale_by(const Var& a, const Var& s);
Var leaky_relu(const Var& x, double slope);
Var clamp(const Var& x, double lo, double hi);
/// Same forward as clamp; at clamped entries the gradient still passes when a
/// descent step would move the input back towards [lo, hi].
Var clamp_restoring(const Var& x, double lo, double hi);
/// a [C, H, W] + bias [C] broadcast over space, or a [N, M] + bias [M] over rows.
Var add_bias(const Var& a, const Var& bias);

// Shape
Var reshape(const Var& x, Shape shape);
Var concat_channels(const std::vector<Var>& parts);
Var transpose(const Var& x);

// Reductions
Var sum(const Var& x);
/// Σ x ⊙ weights with a constant weight tensor.
Var weighted_sum(const Var& x, const Tensor& weights);
/// mean over mask != 0 of |pred - target|; throws UndefinedLossError on an empty mask.
Var masked_l1_mean(const Var& pred, const Tensor& target, const Tensor& mask);

// Dense
Var matmul(const Var& a, const Var& b);
Var softmax_rows(const Var& x);
Var conv2d(const Var& x, const Var& weight, const Var& bias, int64_t stride, int64_t pad);

// Spatial
/// Bilinear resize of [C, h, w] to [C, h*factor, w*factor]; output pixel X maps
/// to input coordinate X / factor (edge-clamped), matching stride-aligned features.
Var upsample(const Var& x, int64_t factor);
/// [3, H, W] → [(H/p)(W/p), 3p²] non-overlapping patches, row-major grid.
Var patchify(const Var& image, int64_t patch);
/// [N, C] tokens on a gh×gw grid → [C, gh, gw].
Var tokens_to_map(const Var& tokens, int64_t grid_h, int64_t grid_w);

// Stereo
/// x / max(‖x[:, y, x]‖, eps) per pixel.
Var l2_normalize_channels(const Var& x, double eps = 1e-12);
/// [D, H, W]: <a[:, y, x], b[:, y, x - d]>, `fill` where x - d < 0.
Var correlation_volume(const Var& a, const Var& b, int64_t d_range, double fill);
/// Σ_i values[i] · softmax_i(vol[i] / temperature) over the first axis of [V, H, W] → [H, W].
Var soft_expectation(const Var& vol, std::span<const double> values, double temperature);
/// [O, h, w]: <left[:, y, x], right sampled at (x - disparity[y, x] - offsets[o])>, bilinear with zero
/// padding. Differentiable in both feature maps and the disparity.
Var warp_correlation(const Var& left, const Var& right, const Var& disparity, std::span<const double> offsets);

}  // namespace wxs::ag
