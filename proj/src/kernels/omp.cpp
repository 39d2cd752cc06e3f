#include <algorithm>
#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "wxstereo/kernels/kernels.hpp"

namespace wxs::kernels {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace omp {
namespace {

// Output columns [lo, hi) whose input column ox*stride - pad + kx is in range.
inline void valid_cols(const ConvGeometry& g, int64_t kx, int64_t ow, int64_t& lo, int64_t& hi) {
  const int64_t off = kx - g.pad;
  lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
  const int64_t last = g.in_w - 1 - off;  // ox*stride <= last
  hi = last < 0 ? 0 : std::min(ow, last / g.stride + 1);
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y) {
  const int64_t oh = g.out_h(), ow = g.out_w(), k = g.kernel, s = g.stride;
#pragma omp parallel for schedule(static)
  for (int64_t oc = 0; oc < g.out_channels; ++oc) {
    double* plane = y.data() + oc * oh * ow;
    std::fill(plane, plane + oh * ow, b.empty() ? 0.0 : b[oc]);
    for (int64_t ic = 0; ic < g.in_channels; ++ic) {
      const double* xin = x.data() + ic * g.in_h * g.in_w;
      for (int64_t ky = 0; ky < k; ++ky)
        for (int64_t kx = 0; kx < k; ++kx) {
          const double wv = w[((oc * g.in_channels + ic) * k + ky) * k + kx];
          int64_t lo, hi;
          valid_cols(g, kx, ow, lo, hi);
          for (int64_t oy = 0; oy < oh; ++oy) {
            const int64_t iy = oy * s - g.pad + ky;
            if (iy < 0 || iy >= g.in_h) continue;
            const double* xrow = xin + iy * g.in_w + (kx - g.pad);
            double* yrow = plane + oy * ow;
            for (int64_t ox = lo; ox < hi; ++ox) yrow[ox] += wv * xrow[ox * s];
          }
        }
    }
  }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> dy, std::span<const double> w,
                           std::span<double> dx) {
  const int64_t oh = g.out_h(), ow = g.out_w(), k = g.kernel, s = g.stride;
#pragma omp parallel for schedule(static)
  for (int64_t ic = 0; ic < g.in_channels; ++ic) {
    double* dxin = dx.data() + ic * g.in_h * g.in_w;
    for (int64_t oc = 0; oc < g.out_channels; ++oc) {
      const double* gplane = dy.data() + oc * oh * ow;
      for (int64_t ky = 0; ky < k; ++ky)
        for (int64_t kx = 0; kx < k; ++kx) {
          const double wv = w[((oc * g.in_channels + ic) * k + ky) * k + kx];
          int64_t lo, hi;
          valid_cols(g, kx, ow, lo, hi);
          for (int64_t oy = 0; oy < oh; ++oy) {
            const int64_t iy = oy * s - g.pad + ky;
            if (iy < 0 || iy >= g.in_h) continue;
            double* xrow = dxin + iy * g.in_w + (kx - g.pad);
            const double* grow = gplane + oy * ow;
            for (int64_t ox = lo; ox < hi; ++ox) xrow[ox * s] += wv * grow[ox];
          }
        }
    }
  }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> dy, std::span<const double> x,
                            std::span<double> dw, std::span<double> db) {
  const int64_t oh = g.out_h(), ow = g.out_w(), k = g.kernel, s = g.stride;
#pragma omp parallel for schedule(static)
  for (int64_t oc = 0; oc < g.out_channels; ++oc) {
    const double* gplane = dy.data() + oc * oh * ow;
    if (!db.empty()) {
      double acc = 0.0;
      for (int64_t i = 0; i < oh * ow; ++i) acc += gplane[i];
      db[oc] += acc;
    }
    for (int64_t ic = 0; ic < g.in_channels; ++ic) {
      const double* xin = x.data() + ic * g.in_h * g.in_w;
      for (int64_t ky = 0; ky < k; ++ky)
        for (int64_t kx = 0; kx < k; ++kx) {
          int64_t lo, hi;
          valid_cols(g, kx, ow, lo, hi);
          double acc = 0.0;
          for (int64_t oy = 0; oy < oh; ++oy) {
            const int64_t iy = oy * s - g.pad + ky;
            if (iy < 0 || iy >= g.in_h) continue;
            const double* xrow = xin + iy * g.in_w + (kx - g.pad);
            const double* grow = gplane + oy * ow;
            for (int64_t ox = lo; ox < hi; ++ox) acc += grow[ox] * xrow[ox * s];
          }
          dw[((oc * g.in_channels + ic) * k + ky) * k + kx] += acc;
        }
    }
  }
}

void correlation_forward(int64_t c, int64_t h, int64_t w, int64_t d_range, std::span<const double> a,
                         std::span<const double> b, double fill, std::span<double> out) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t d = 0; d < d_range; ++d)
    for (int64_t y = 0; y < h; ++y) {
      double* row = out.data() + (d * h + y) * w;
      const int64_t start = std::min(d, w);
      std::fill(row, row + start, fill);
      std::fill(row + start, row + w, 0.0);
      for (int64_t ch = 0; ch < c; ++ch) {
        const double* ar = a.data() + (ch * h + y) * w;
        const double* br = b.data() + (ch * h + y) * w - d;
        for (int64_t x = start; x < w; ++x) row[x] += ar[x] * br[x];
      }
    }
}

void correlation_backward(int64_t c, int64_t h, int64_t w, int64_t d_range, std::span<const double> a,
                          std::span<const double> b, std::span<const double> dout, std::span<double> da,
                          std::span<double> db) {
#pragma omp parallel for schedule(static)
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t d = 0; d < std::min(d_range, w); ++d)
      for (int64_t y = 0; y < h; ++y) {
        const double* g = dout.data() + (d * h + y) * w;
        const double* ar = a.data() + (ch * h + y) * w;
        const double* br = b.data() + (ch * h + y) * w;
        double* dar = da.data() + (ch * h + y) * w;
        double* dbr = db.data() + (ch * h + y) * w;
        for (int64_t x = d; x < w; ++x) {
          dar[x] += g[x] * br[x - d];
          dbr[x - d] += g[x] * ar[x];
        }
      }
}

void matmul(int64_t n, int64_t k, int64_t m, std::span<const double> a, std::span<const double> b,
            std::span<double> out) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    double* row = out.data() + i * m;
    std::fill(row, row + m, 0.0);
    for (int64_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b.data() + p * m;
      for (int64_t j = 0; j < m; ++j) row[j] += av * brow[j];
    }
  }
}

void similarity_matrix(const SimilarityInputs& in, std::span<double> out) {
  // Same accumulation order as token_similarity, so results are bit-identical
  // to the serial kernel; only the norms are hoisted.
  const int64_t width = in.width;
  std::vector<double> src_norm(static_cast<size_t>(in.n_src)), dst_norm(static_cast<size_t>(in.n_dst));
  for (int64_t i = 0; i < in.n_src; ++i) {
    double acc = 0.0;
    for (int64_t c = 0; c < width; ++c) acc += in.src_features[i * width + c] * in.src_features[i * width + c];
    src_norm[static_cast<size_t>(i)] = acc;
  }
  for (int64_t j = 0; j < in.n_dst; ++j) {
    double acc = 0.0;
    for (int64_t c = 0; c < width; ++c) acc += in.dst_features[j * width + c] * in.dst_features[j * width + c];
    dst_norm[static_cast<size_t>(j)] = acc;
  }
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < in.n_src; ++i) {
    const double* a = in.src_features.data() + i * width;
    const double na = src_norm[static_cast<size_t>(i)];
    for (int64_t j = 0; j < in.n_dst; ++j) {
      const double* b = in.dst_features.data() + j * width;
      double dot = 0.0;
      for (int64_t c = 0; c < width; ++c) dot += a[c] * b[c];
      const double nb = dst_norm[static_cast<size_t>(j)];
      const double feat = (na == 0.0 || nb == 0.0) ? 0.0 : std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
      const double disp =
          std::clamp(1.0 - std::fabs(in.src_disparity[i] - in.dst_disparity[j]) / in.d_max, 0.0, 1.0);
      out[i * in.n_dst + j] = (1.0 - in.alpha) * feat + in.alpha * disp;
    }
  }
}

}  // namespace omp
}  // namespace wxs::kernels
