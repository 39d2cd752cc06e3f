// Reference kernels: direct loops in the textbook order, no blocking, no
// threading. Tests compare the OpenMP kernels against these.

#include <algorithm>
#include <cmath>

#include "wxstereo/kernels/kernels.hpp"

namespace wxs::kernels {

double token_similarity(std::span<const double> a, double disp_a, std::span<const double> b, double disp_b,
                        double alpha, double d_max) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  // sqrt(na * nb) is exactly na when a == b, so self-cosine is exactly 1. The
  // blend is written term by term so alpha = 1 ignores the cosine entirely.
  const double feat = (na == 0.0 || nb == 0.0) ? 0.0 : std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
  const double disp = std::clamp(1.0 - std::fabs(disp_a - disp_b) / d_max, 0.0, 1.0);
  return (1.0 - alpha) * feat + alpha * disp;
}

namespace serial {

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y) {
  const int64_t oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  for (int64_t oc = 0; oc < g.out_channels; ++oc)
    for (int64_t oy = 0; oy < oh; ++oy)
      for (int64_t ox = 0; ox < ow; ++ox) {
        double acc = b.empty() ? 0.0 : b[oc];
        for (int64_t ic = 0; ic < g.in_channels; ++ic)
          for (int64_t ky = 0; ky < k; ++ky) {
            const int64_t iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.in_h) continue;
            for (int64_t kx = 0; kx < k; ++kx) {
              const int64_t ix = ox * g.stride - g.pad + kx;
              if (ix < 0 || ix >= g.in_w) continue;
              acc += w[((oc * g.in_channels + ic) * k + ky) * k + kx] * x[(ic * g.in_h + iy) * g.in_w + ix];
            }
          }
        y[(oc * oh + oy) * ow + ox] = acc;
      }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> dy, std::span<const double> w,
                           std::span<double> dx) {
  const int64_t oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  for (int64_t oc = 0; oc < g.out_channels; ++oc)
    for (int64_t oy = 0; oy < oh; ++oy)
      for (int64_t ox = 0; ox < ow; ++ox) {
        const double gy = dy[(oc * oh + oy) * ow + ox];
        for (int64_t ic = 0; ic < g.in_channels; ++ic)
          for (int64_t ky = 0; ky < k; ++ky) {
            const int64_t iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.in_h) continue;
            for (int64_t kx = 0; kx < k; ++kx) {
              const int64_t ix = ox * g.stride - g.pad + kx;
              if (ix < 0 || ix >= g.in_w) continue;
              dx[(ic * g.in_h + iy) * g.in_w + ix] += gy * w[((oc * g.in_channels + ic) * k + ky) * k + kx];
            }
          }
      }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> dy, std::span<const double> x,
                            std::span<double> dw, std::span<double> db) {
  const int64_t oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  for (int64_t oc = 0; oc < g.out_channels; ++oc)
    for (int64_t oy = 0; oy < oh; ++oy)
      for (int64_t ox = 0; ox < ow; ++ox) {
        const double gy = dy[(oc * oh + oy) * ow + ox];
        if (!db.empty()) db[oc] += gy;
        for (int64_t ic = 0; ic < g.in_channels; ++ic)
          for (int64_t ky = 0; ky < k; ++ky) {
            const int64_t iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.in_h) continue;
            for (int64_t kx = 0; kx < k; ++kx) {
              const int64_t ix = ox * g.stride - g.pad + kx;
              if (ix < 0 || ix >= g.in_w) continue;
              dw[((oc * g.in_channels + ic) * k + ky) * k + kx] += gy * x[(ic * g.in_h + iy) * g.in_w + ix];
            }
          }
      }
}

void correlation_forward(int64_t c, int64_t h, int64_t w, int64_t d_range, std::span<const double> a,
                         std::span<const double> b, double fill, std::span<double> out) {
  for (int64_t d = 0; d < d_range; ++d)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        double v = fill;
        if (x - d >= 0) {
          v = 0.0;
          for (int64_t ch = 0; ch < c; ++ch) v += a[(ch * h + y) * w + x] * b[(ch * h + y) * w + x - d];
        }
        out[(d * h + y) * w + x] = v;
      }
}

void correlation_backward(int64_t c, int64_t h, int64_t w, int64_t d_range, std::span<const double> a,
                          std::span<const double> b, std::span<const double> dout, std::span<double> da,
                          std::span<double> db) {
  for (int64_t d = 0; d < d_range; ++d)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = d; x < w; ++x) {
        const double g = dout[(d * h + y) * w + x];
        for (int64_t ch = 0; ch < c; ++ch) {
          da[(ch * h + y) * w + x] += g * b[(ch * h + y) * w + x - d];
          db[(ch * h + y) * w + x - d] += g * a[(ch * h + y) * w + x];
        }
      }
}

void matmul(int64_t n, int64_t k, int64_t m, std::span<const double> a, std::span<const double> b,
            std::span<double> out) {
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * m + j];
      out[i * m + j] = acc;
    }
}

void similarity_matrix(const SimilarityInputs& in, std::span<double> out) {
  const auto width = static_cast<size_t>(in.width);
  for (int64_t i = 0; i < in.n_src; ++i)
    for (int64_t j = 0; j < in.n_dst; ++j)
      out[i * in.n_dst + j] = token_similarity(in.src_features.subspan(static_cast<size_t>(i) * width, width),
                                               in.src_disparity[i],
                                               in.dst_features.subspan(static_cast<size_t>(j) * width, width),
                                               in.dst_disparity[j], in.alpha, in.d_max);
}

}  // namespace serial
}  // namespace wxs::kernels
