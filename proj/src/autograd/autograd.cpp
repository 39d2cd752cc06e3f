#include "wxstereo/autograd/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "wxstereo/core/errors.hpp"
#include "wxstereo/kernels/kernels.hpp"

namespace wxs::ag {
namespace {

thread_local bool g_grad_enabled = true;

Var make(Tensor value, std::initializer_list<Var> inputs, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled)
    for (const auto& v : inputs) needs = needs || v.requires_grad();
  if (needs) {
    node->requires_grad = true;
    for (const auto& v : inputs) node->inputs.push_back(v.node());
    node->backward_fn = std::move(fn);
  }
  return Var(std::move(node));
}

Var make(Tensor value, const std::vector<Var>& inputs, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled)
    for (const auto& v : inputs) needs = needs || v.requires_grad();
  if (needs) {
    node->requires_grad = true;
    for (const auto& v : inputs) node->inputs.push_back(v.node());
    node->backward_fn = std::move(fn);
  }
  return Var(std::move(node));
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw ArgumentError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void require_rank(const Var& a, int64_t rank, const char* op) {
  if (a.value().rank() != rank)
    throw ArgumentError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                        shape_str(a.shape()));
}

Tensor transposed(const Tensor& t) {
  const int64_t n = t.dim(0), m = t.dim(1);
  Tensor out({m, n});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j) out.at(j, i) = t.at(i, j);
  return out;
}

// Bilinear interpolation taps for one axis of a factor-`f` upsample.
struct Taps {
  std::vector<int64_t> i0, i1;
  std::vector<double> w1;
};

Taps upsample_taps(int64_t in, int64_t factor) {
  Taps t;
  const int64_t out = in * factor;
  t.i0.resize(static_cast<size_t>(out));
  t.i1.resize(static_cast<size_t>(out));
  t.w1.resize(static_cast<size_t>(out));
  for (int64_t o = 0; o < out; ++o) {
    const double s = std::min(static_cast<double>(o) / static_cast<double>(factor), static_cast<double>(in - 1));
    const auto i0 = static_cast<int64_t>(std::floor(s));
    t.i0[static_cast<size_t>(o)] = i0;
    t.i1[static_cast<size_t>(o)] = std::min(i0 + 1, in - 1);
    t.w1[static_cast<size_t>(o)] = s - static_cast<double>(i0);
  }
  return t;
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.empty() && value.numel() > 0) grad = Tensor(value.shape(), 0.0);
  if (grad.shape() != value.shape()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var parameter(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& root) {
  if (!root.defined() || root.value().numel() != 1) throw ArgumentError("backward: root must be a scalar");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
  return make(std::move(out), {a, b}, [](Node& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      auto& g = in->grad_buffer();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  return make(std::move(out), {a, b}, [](Node& self) {
    const double sign[2] = {1.0, -1.0};
    for (size_t k = 0; k < 2; ++k) {
      auto& in = self.inputs[k];
      if (!in->requires_grad) continue;
      auto& g = in->grad_buffer();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += sign[k] * self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  return make(std::move(out), {a, b}, [](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    if (x.requires_grad) {
      auto& g = x.grad_buffer();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * y.value[i];
    }
    if (y.requires_grad) {
      auto& g = y.grad_buffer();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * x.value[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= s;
  return make(std::move(out), {a}, [s](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += s * self.grad[i];
  });
}

Var scale_by(const Var& a, const Var& s) {
  if (s.value().numel() != 1) throw ArgumentError("scale_by: scale must have one element");
  const double k = s.value()[0];
  Tensor out = a.value();
  for (double& v : out.values()) v *= k;
  return make(std::move(out), {a, s}, [](Node& self) {
    Node& x = *self.inputs[0];
    Node& f = *self.inputs[1];
    if (x.requires_grad) {
      auto& g = x.grad_buffer();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += f.value[0] * self.grad[i];
    }
    if (f.requires_grad) {
      double acc = 0.0;
      for (int64_t i = 0; i < self.grad.numel(); ++i) acc += self.grad[i] * x.value[i];
      f.grad_buffer()[0] += acc;
    }
  });
}

Var leaky_relu(const Var& x, double slope) {
  Tensor out = x.value();
  for (double& v : out.values()) v = v > 0.0 ? v : slope * v;
  return make(std::move(out), {x}, [slope](Node& self) {
    Node& in = *self.inputs[0];
    auto& g = in.grad_buffer();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * (in.value[i] > 0.0 ? 1.0 : slope);
  });
}

Var clamp(const Var& x, double lo, double hi) {
  Tensor out = x.value();
  for (double& v : out.values()) v = std::clamp(v, lo, hi);
  return make(std::move(out), {x}, [lo, hi](Node& self) {
    Node& in = *self.inputs[0];
    auto& g = in.grad_buffer();
    for (int64_t i = 0; i < g.numel(); ++i)
      if (in.value[i] >= lo && in.value[i] <= hi) g[i] += self.grad[i];
  });
}

Var clamp_restoring(const Var& x, double lo, double hi) {
  Tensor out = x.value();
  for (double& v : out.values()) v = std::clamp(v, lo, hi);
  return make(std::move(out), {x}, [lo, hi](Node& self) {
    Node& in = *self.inputs[0];
    auto& g = in.grad_buffer();
    for (int64_t i = 0; i < g.numel(); ++i) {
      const double v = in.value[i], gi = self.grad[i];
      if ((v >= lo && v <= hi) || (v < lo && gi < 0.0) || (v > hi && gi > 0.0)) g[i] += gi;
    }
  });
}

Var add_bias(const Var& a, const Var& bias) {
  require_rank(bias, 1, "add_bias");
  const Tensor& av = a.value();
  const int64_t nb = bias.value().numel();
  Tensor out = av;
  if (av.rank() == 3) {
    if (av.dim(0) != nb) throw ArgumentError("add_bias: channel mismatch");
    const int64_t plane = av.dim(1) * av.dim(2);
    for (int64_t c = 0; c < nb; ++c)
      for (int64_t i = 0; i < plane; ++i) out[c * plane + i] += bias.value()[c];
  } else if (av.rank() == 2) {
    if (av.dim(1) != nb) throw ArgumentError("add_bias: width mismatch");
    for (int64_t r = 0; r < av.dim(0); ++r)
      for (int64_t c = 0; c < nb; ++c) out.at(r, c) += bias.value()[c];
  } else {
    throw ArgumentError("add_bias: expected rank 2 or 3, got " + shape_str(av.shape()));
  }
  return make(std::move(out), {a, bias}, [](Node& self) {
    Node& x = *self.inputs[0];
    Node& b = *self.inputs[1];
    if (x.requires_grad) {
      auto& g = x.grad_buffer();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (b.requires_grad) {
      auto& g = b.grad_buffer();
      const int64_t nb = g.numel();
      if (self.value.rank() == 3) {
        const int64_t plane = self.value.dim(1) * self.value.dim(2);
        for (int64_t c = 0; c < nb; ++c)
          for (int64_t i = 0; i < plane; ++i) g[c] += self.grad[c * plane + i];
      } else {
        for (int64_t r = 0; r < self.value.dim(0); ++r)
          for (int64_t c = 0; c < nb; ++c) g[c] += self.grad.at(r, c);
      }
    }
  });
}

// ---------------------------------------------------------------------- shape

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return make(std::move(out), {x}, [](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
  });
}

Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw ArgumentError("concat_channels: nothing to concatenate");
  const Shape& first = parts.front().shape();
  if (first.size() != 3) throw ArgumentError("concat_channels: expected [C, H, W] parts");
  int64_t channels = 0;
  for (const auto& p : parts) {
    if (p.shape().size() != 3 || p.shape()[1] != first[1] || p.shape()[2] != first[2])
      throw ArgumentError("concat_channels: spatial mismatch " + shape_str(p.shape()) + " vs " + shape_str(first));
    channels += p.shape()[0];
  }
  Tensor out({channels, first[1], first[2]});
  int64_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data(), p.value().data() + p.value().numel(), out.data() + offset);
    offset += p.value().numel();
  }
  return make(std::move(out), parts, [](Node& self) {
    int64_t offset = 0;
    for (auto& in : self.inputs) {
      const int64_t n = in->value.numel();
      if (in->requires_grad) {
        auto& g = in->grad_buffer();
        for (int64_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
      }
      offset += n;
    }
  });
}

Var transpose(const Var& x) {
  require_rank(x, 2, "transpose");
  return make(transposed(x.value()), {x}, [](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    const Tensor gt = transposed(self.grad);
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += gt[i];
  });
}

// ----------------------------------------------------------------- reductions

Var sum(const Var& x) {
  double acc = 0.0;
  for (double v : x.value().values()) acc += v;
  return make(Tensor({1}, acc), {x}, [](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[0];
  });
}

Var weighted_sum(const Var& x, const Tensor& weights) {
  if (weights.shape() != x.shape()) throw ArgumentError("weighted_sum: shape mismatch");
  double acc = 0.0;
  for (int64_t i = 0; i < weights.numel(); ++i) acc += x.value()[i] * weights[i];
  return make(Tensor({1}, acc), {x}, [weights](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[0] * weights[i];
  });
}

Var masked_l1_mean(const Var& pred, const Tensor& target, const Tensor& mask) {
  if (pred.shape() != target.shape() || mask.shape() != target.shape())
    throw ArgumentError("masked_l1_mean: shape mismatch " + shape_str(pred.shape()) + ", " +
                        shape_str(target.shape()) + ", " + shape_str(mask.shape()));
  int64_t count = 0;
  double acc = 0.0;
  for (int64_t i = 0; i < target.numel(); ++i) {
    if (mask[i] == 0.0) continue;
    ++count;
    acc += std::fabs(pred.value()[i] - target[i]);
  }
  if (count == 0) throw UndefinedLossError("L1 loss over an empty valid mask is undefined");
  const double inv = 1.0 / static_cast<double>(count);
  return make(Tensor({1}, acc * inv), {pred}, [target, mask, inv](Node& self) {
    Node& p = *self.inputs[0];
    auto& g = p.grad_buffer();
    for (int64_t i = 0; i < g.numel(); ++i) {
      if (mask[i] == 0.0) continue;
      const double d = p.value[i] - target[i];
      g[i] += self.grad[0] * inv * static_cast<double>((d > 0.0) - (d < 0.0));
    }
  });
}

// ---------------------------------------------------------------------- dense

Var matmul(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const int64_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  if (b.shape()[0] != k) throw ArgumentError("matmul: inner dimension mismatch");
  Tensor out({n, m});
  kernels::matmul(n, k, m, a.value().values(), b.value().values(), out.values());
  return make(std::move(out), {a, b}, [n, k, m](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    if (x.requires_grad) {
      Tensor tmp({n, k});
      kernels::matmul(n, m, k, self.grad.values(), transposed(y.value).values(), tmp.values());
      auto& g = x.grad_buffer();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += tmp[i];
    }
    if (y.requires_grad) {
      Tensor tmp({k, m});
      kernels::matmul(k, n, m, transposed(x.value).values(), self.grad.values(), tmp.values());
      auto& g = y.grad_buffer();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += tmp[i];
    }
  });
}

Var softmax_rows(const Var& x) {
  require_rank(x, 2, "softmax_rows");
  Tensor out = x.value();
  const int64_t n = out.dim(0), m = out.dim(1);
  for (int64_t r = 0; r < n; ++r) {
    double mx = -INFINITY;
    for (int64_t c = 0; c < m; ++c) mx = std::max(mx, out.at(r, c));
    double z = 0.0;
    for (int64_t c = 0; c < m; ++c) z += (out.at(r, c) = std::exp(out.at(r, c) - mx));
    for (int64_t c = 0; c < m; ++c) out.at(r, c) /= z;
  }
  return make(std::move(out), {x}, [n, m](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (int64_t r = 0; r < n; ++r) {
      double dot = 0.0;
      for (int64_t c = 0; c < m; ++c) dot += self.grad.at(r, c) * self.value.at(r, c);
      for (int64_t c = 0; c < m; ++c) g.at(r, c) += self.value.at(r, c) * (self.grad.at(r, c) - dot);
    }
  });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int64_t stride, int64_t pad) {
  require_rank(x, 3, "conv2d");
  require_rank(weight, 4, "conv2d");
  const Shape& ws = weight.shape();
  if (ws[2] != ws[3]) throw ArgumentError("conv2d: square kernels only");
  if (ws[1] != x.shape()[0])
    throw ArgumentError("conv2d: input has " + std::to_string(x.shape()[0]) + " channels, weight expects " +
                        std::to_string(ws[1]));
  if (bias.defined() && bias.value().numel() != ws[0]) throw ArgumentError("conv2d: bias size mismatch");

  kernels::ConvGeometry g{x.shape()[0], x.shape()[1], x.shape()[2], ws[0], ws[2], stride, pad};
  if (g.out_h() <= 0 || g.out_w() <= 0) throw ArgumentError("conv2d: input too small");
  Tensor out({g.out_channels, g.out_h(), g.out_w()});
  kernels::conv2d_forward(g, x.value().values(), weight.value().values(),
                          bias.defined() ? bias.value().values() : std::span<const double>{}, out.values());

  std::vector<Var> ins{x, weight};
  if (bias.defined()) ins.push_back(bias);
  return make(std::move(out), ins, [g](Node& self) {
    Node& in = *self.inputs[0];
    Node& w = *self.inputs[1];
    Node* b = self.inputs.size() > 2 ? self.inputs[2].get() : nullptr;
    if (in.requires_grad) kernels::conv2d_backward_input(g, self.grad.values(), w.value.values(), in.grad_buffer().values());
    const bool want_b = b && b->requires_grad;
    if (w.requires_grad || want_b) {
      Tensor dw(w.value.shape(), 0.0);
      Tensor db(Shape{g.out_channels}, 0.0);
      kernels::conv2d_backward_weight(g, self.grad.values(), in.value.values(), dw.values(), db.values());
      if (w.requires_grad) {
        auto& gw = w.grad_buffer();
        for (int64_t i = 0; i < gw.numel(); ++i) gw[i] += dw[i];
      }
      if (want_b) {
        auto& gb = b->grad_buffer();
        for (int64_t i = 0; i < gb.numel(); ++i) gb[i] += db[i];
      }
    }
  });
}

// -------------------------------------------------------------------- spatial

Var upsample(const Var& x, int64_t factor) {
  require_rank(x, 3, "upsample");
  if (factor < 1) throw ArgumentError("upsample: factor must be >= 1");
  const int64_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const int64_t oh = h * factor, ow = w * factor;
  auto ty = std::make_shared<Taps>(upsample_taps(h, factor));
  auto tx = std::make_shared<Taps>(upsample_taps(w, factor));
  Tensor out({c, oh, ow});
  const Tensor& in = x.value();
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < oh; ++y) {
      const auto y0 = ty->i0[static_cast<size_t>(y)], y1 = ty->i1[static_cast<size_t>(y)];
      const double wy = ty->w1[static_cast<size_t>(y)];
      for (int64_t xo = 0; xo < ow; ++xo) {
        const auto x0 = tx->i0[static_cast<size_t>(xo)], x1 = tx->i1[static_cast<size_t>(xo)];
        const double wx = tx->w1[static_cast<size_t>(xo)];
        out.at(ch, y, xo) = (1 - wy) * ((1 - wx) * in.at(ch, y0, x0) + wx * in.at(ch, y0, x1)) +
                            wy * ((1 - wx) * in.at(ch, y1, x0) + wx * in.at(ch, y1, x1));
      }
    }
  return make(std::move(out), {x}, [ty, tx, c, oh, ow](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t y = 0; y < oh; ++y) {
        const auto y0 = ty->i0[static_cast<size_t>(y)], y1 = ty->i1[static_cast<size_t>(y)];
        const double wy = ty->w1[static_cast<size_t>(y)];
        for (int64_t xo = 0; xo < ow; ++xo) {
          const auto x0 = tx->i0[static_cast<size_t>(xo)], x1 = tx->i1[static_cast<size_t>(xo)];
          const double wx = tx->w1[static_cast<size_t>(xo)];
          const double gv = self.grad.at(ch, y, xo);
          g.at(ch, y0, x0) += gv * (1 - wy) * (1 - wx);
          g.at(ch, y0, x1) += gv * (1 - wy) * wx;
          g.at(ch, y1, x0) += gv * wy * (1 - wx);
          g.at(ch, y1, x1) += gv * wy * wx;
        }
      }
  });
}

Var patchify(const Var& image, int64_t patch) {
  require_rank(image, 3, "patchify");
  const int64_t c = image.shape()[0], h = image.shape()[1], w = image.shape()[2];
  if (h % patch != 0 || w % patch != 0)
    throw ArgumentError("patchify: " + shape_str(image.shape()) + " not divisible by patch " + std::to_string(patch));
  const int64_t gh = h / patch, gw = w / patch, width = c * patch * patch;
  Tensor out({gh * gw, width});
  const Tensor& in = image.value();
  for (int64_t gy = 0; gy < gh; ++gy)
    for (int64_t gx = 0; gx < gw; ++gx)
      for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t py = 0; py < patch; ++py)
          for (int64_t px = 0; px < patch; ++px)
            out.at(gy * gw + gx, (ch * patch + py) * patch + px) = in.at(ch, gy * patch + py, gx * patch + px);
  return make(std::move(out), {image}, [c, gh, gw, patch](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (int64_t gy = 0; gy < gh; ++gy)
      for (int64_t gx = 0; gx < gw; ++gx)
        for (int64_t ch = 0; ch < c; ++ch)
          for (int64_t py = 0; py < patch; ++py)
            for (int64_t px = 0; px < patch; ++px)
              g.at(ch, gy * patch + py, gx * patch + px) +=
                  self.grad.at(gy * gw + gx, (ch * patch + py) * patch + px);
  });
}

Var tokens_to_map(const Var& tokens, int64_t grid_h, int64_t grid_w) {
  require_rank(tokens, 2, "tokens_to_map");
  const int64_t n = tokens.shape()[0], c = tokens.shape()[1];
  if (n != grid_h * grid_w) throw ArgumentError("tokens_to_map: token count does not match grid");
  Tensor out({c, grid_h, grid_w});
  for (int64_t t = 0; t < n; ++t)
    for (int64_t ch = 0; ch < c; ++ch) out[ch * n + t] = tokens.value().at(t, ch);
  return make(std::move(out), {tokens}, [n, c](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (int64_t t = 0; t < n; ++t)
      for (int64_t ch = 0; ch < c; ++ch) g.at(t, ch) += self.grad[ch * n + t];
  });
}

// --------------------------------------------------------------------- stereo

Var l2_normalize_channels(const Var& x, double eps) {
  require_rank(x, 3, "l2_normalize_channels");
  const int64_t c = x.shape()[0], plane = x.shape()[1] * x.shape()[2];
  Tensor out = x.value();
  auto norms = std::make_shared<std::vector<double>>(static_cast<size_t>(plane));
  for (int64_t p = 0; p < plane; ++p) {
    double acc = 0.0;
    for (int64_t ch = 0; ch < c; ++ch) acc += out[ch * plane + p] * out[ch * plane + p];
    const double n = std::max(std::sqrt(acc), eps);
    (*norms)[static_cast<size_t>(p)] = n;
    for (int64_t ch = 0; ch < c; ++ch) out[ch * plane + p] /= n;
  }
  return make(std::move(out), {x}, [norms, c, plane, eps](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (int64_t p = 0; p < plane; ++p) {
      const double n = (*norms)[static_cast<size_t>(p)];
      if (n <= eps) {
        for (int64_t ch = 0; ch < c; ++ch) g[ch * plane + p] += self.grad[ch * plane + p] / eps;
        continue;
      }
      double dot = 0.0;
      for (int64_t ch = 0; ch < c; ++ch) dot += self.grad[ch * plane + p] * self.value[ch * plane + p];
      for (int64_t ch = 0; ch < c; ++ch)
        g[ch * plane + p] += (self.grad[ch * plane + p] - self.value[ch * plane + p] * dot) / n;
    }
  });
}

Var correlation_volume(const Var& a, const Var& b, int64_t d_range, double fill) {
  require_rank(a, 3, "correlation_volume");
  require_same_shape(a, b, "correlation_volume");
  const int64_t c = a.shape()[0], h = a.shape()[1], w = a.shape()[2];
  Tensor out({d_range, h, w});
  kernels::correlation_forward(c, h, w, d_range, a.value().values(), b.value().values(), fill, out.values());
  return make(std::move(out), {a, b}, [c, h, w, d_range](Node& self) {
    Node& l = *self.inputs[0];
    Node& r = *self.inputs[1];
    Tensor da(l.value.shape(), 0.0), db(r.value.shape(), 0.0);
    kernels::correlation_backward(c, h, w, d_range, l.value.values(), r.value.values(), self.grad.values(),
                                  da.values(), db.values());
    if (l.requires_grad) {
      auto& g = l.grad_buffer();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += da[i];
    }
    if (r.requires_grad) {
      auto& g = r.grad_buffer();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += db[i];
    }
  });
}

Var soft_expectation(const Var& vol, std::span<const double> values, double temperature) {
  require_rank(vol, 3, "soft_expectation");
  if (temperature <= 0.0) throw ArgumentError("soft_expectation: temperature must be positive");
  const int64_t v = vol.shape()[0], plane = vol.shape()[1] * vol.shape()[2];
  if (static_cast<int64_t>(values.size()) != v) throw ArgumentError("soft_expectation: value count mismatch");
  auto vals = std::make_shared<std::vector<double>>(values.begin(), values.end());
  auto probs = std::make_shared<Tensor>(vol.shape());
  Tensor out({vol.shape()[1], vol.shape()[2]});
  const Tensor& in = vol.value();
  for (int64_t p = 0; p < plane; ++p) {
    double mx = -INFINITY;
    for (int64_t i = 0; i < v; ++i) mx = std::max(mx, in[i * plane + p] / temperature);
    double z = 0.0;
    for (int64_t i = 0; i < v; ++i) z += ((*probs)[i * plane + p] = std::exp(in[i * plane + p] / temperature - mx));
    double e = 0.0;
    for (int64_t i = 0; i < v; ++i) {
      (*probs)[i * plane + p] /= z;
      e += (*vals)[static_cast<size_t>(i)] * (*probs)[i * plane + p];
    }
    out[p] = e;
  }
  return make(std::move(out), {vol}, [vals, probs, v, plane, temperature](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (int64_t p = 0; p < plane; ++p) {
      const double gp = self.grad[p], e = self.value[p];
      for (int64_t i = 0; i < v; ++i)
        g[i * plane + p] += gp * (*probs)[i * plane + p] * ((*vals)[static_cast<size_t>(i)] - e) / temperature;
    }
  });
}

Var warp_correlation(const Var& left, const Var& right, const Var& disparity, std::span<const double> offsets) {
  require_rank(left, 3, "warp_correlation");
  require_same_shape(left, right, "warp_correlation");
  const int64_t c = left.shape()[0], h = left.shape()[1], w = left.shape()[2];
  if (disparity.shape() != Shape{h, w}) throw ArgumentError("warp_correlation: disparity must be [h, w]");
  const auto n_off = static_cast<int64_t>(offsets.size());
  auto offs = std::make_shared<std::vector<double>>(offsets.begin(), offsets.end());

  const Tensor& L = left.value();
  const Tensor& R = right.value();
  const Tensor& D = disparity.value();
  auto sample = [&R, w](int64_t ch, int64_t y, int64_t x) { return (x < 0 || x >= w) ? 0.0 : R.at(ch, y, x); };

  Tensor out({n_off, h, w});
  for (int64_t o = 0; o < n_off; ++o)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        const double u = static_cast<double>(x) - D.at(y, x) - (*offs)[static_cast<size_t>(o)];
        const double fl = std::floor(u);
        const auto x0 = static_cast<int64_t>(fl);
        const double w1 = u - fl;
        double acc = 0.0;
        for (int64_t ch = 0; ch < c; ++ch)
          acc += L.at(ch, y, x) * ((1 - w1) * sample(ch, y, x0) + w1 * sample(ch, y, x0 + 1));
        out.at(o, y, x) = acc;
      }

  return make(std::move(out), {left, right, disparity}, [offs, c, h, w, n_off](Node& self) {
    Node& ln = *self.inputs[0];
    Node& rn = *self.inputs[1];
    Node& dn = *self.inputs[2];
    const Tensor& L = ln.value;
    const Tensor& R = rn.value;
    const Tensor& D = dn.value;
    Tensor* gl = ln.requires_grad ? &ln.grad_buffer() : nullptr;
    Tensor* gr = rn.requires_grad ? &rn.grad_buffer() : nullptr;
    Tensor* gd = dn.requires_grad ? &dn.grad_buffer() : nullptr;
    auto sample = [&R, w](int64_t ch, int64_t y, int64_t x) { return (x < 0 || x >= w) ? 0.0 : R.at(ch, y, x); };
    for (int64_t o = 0; o < n_off; ++o)
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
          const double g = self.grad.at(o, y, x);
          if (g == 0.0) continue;
          const double u = static_cast<double>(x) - D.at(y, x) - (*offs)[static_cast<size_t>(o)];
          const double fl = std::floor(u);
          const auto x0 = static_cast<int64_t>(fl);
          const double w1 = u - fl;
          double dslope = 0.0;
          for (int64_t ch = 0; ch < c; ++ch) {
            const double r0 = sample(ch, y, x0), r1 = sample(ch, y, x0 + 1);
            const double lv = L.at(ch, y, x);
            if (gl) gl->at(ch, y, x) += g * ((1 - w1) * r0 + w1 * r1);
            if (gr) {
              if (x0 >= 0 && x0 < w) gr->at(ch, y, x0) += g * (1 - w1) * lv;
              if (x0 + 1 >= 0 && x0 + 1 < w) gr->at(ch, y, x0 + 1) += g * w1 * lv;
            }
            dslope += lv * (r1 - r0);
          }
          // du/dd = -1
          if (gd) gd->at(y, x) -= g * dslope;
        }
  });
}

}  // namespace wxs::ag
