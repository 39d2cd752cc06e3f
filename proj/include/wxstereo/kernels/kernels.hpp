#pragma once

#include <cstdint>
#include <span>

// Hot loops live here in two flavours: `serial` is the plain reference used by
// tests, `omp` is the OpenMP-parallel version the library runs. Both share the
// same signatures so tests and benchmarks can swap them.

namespace wxs::kernels {

struct ConvGeometry {
  int64_t in_channels = 0;
  int64_t in_h = 0;
  int64_t in_w = 0;
  int64_t out_channels = 0;
  int64_t kernel = 3;
  int64_t stride = 1;
  int64_t pad = 1;

  int64_t out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  int64_t out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
};

/// Token similarity inputs for the cross-view matcher: features are [n, width]
/// row-major, disparities have one entry per token.
struct SimilarityInputs {
  std::span<const double> src_features;
  std::span<const double> src_disparity;
  std::span<const double> dst_features;
  std::span<const double> dst_disparity;
  int64_t n_src = 0;
  int64_t n_dst = 0;
  int64_t width = 0;
  double alpha = 0.5;
  double d_max = 1.0;
};

#define WXS_KERNEL_DECLS                                                                                       \
  /* y[Co,Ho,Wo] = conv(x[Ci,H,W], w[Co,Ci,k,k]) + b[Co]; bias may be empty. */                              \
  void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,           \
                      std::span<const double> b, std::span<double> y);                                       \
  /* dx += conv^T(dy) */                                                                                       \
  void conv2d_backward_input(const ConvGeometry& g, std::span<const double> dy, std::span<const double> w,    \
                             std::span<double> dx);                                                           \
  /* dw += dy (*) x, db += sum(dy); db may be empty. */                                                       \
  void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> dy, std::span<const double> x,   \
                              std::span<double> dw, std::span<double> db);                                    \
  /* out[d,y,x] = <a[:,y,x], b[:,y,x-d]>, `fill` where x-d < 0. */                                            \
  void correlation_forward(int64_t c, int64_t h, int64_t w, int64_t d_range, std::span<const double> a,       \
                           std::span<const double> b, double fill, std::span<double> out);                    \
  /* da += ..., db += ... for the in-range entries. */                                                        \
  void correlation_backward(int64_t c, int64_t h, int64_t w, int64_t d_range, std::span<const double> a,      \
                            std::span<const double> b, std::span<const double> dout, std::span<double> da,    \
                            std::span<double> db);                                                            \
  /* out[n,m] = a[n,k] * b[k,m] */                                                                             \
  void matmul(int64_t n, int64_t k, int64_t m, std::span<const double> a, std::span<const double> b,          \
              std::span<double> out);                                                                          \
  /* out[i,j] = combined cross-view similarity of src token i and dst token j. */                            \
  void similarity_matrix(const SimilarityInputs& in, std::span<double> out);

namespace serial {
WXS_KERNEL_DECLS
}
namespace omp {
WXS_KERNEL_DECLS
}

#undef WXS_KERNEL_DECLS

/// Scalar similarity shared by both kernel flavours and the public API.
double token_similarity(std::span<const double> a, double disp_a, std::span<const double> b, double disp_b,
                        double alpha, double d_max);

/// Number of OpenMP threads the parallel kernels will use (1 without OpenMP).
int max_threads();

// The library runs the parallel versions.
using omp::conv2d_backward_input;
using omp::conv2d_backward_weight;
using omp::conv2d_forward;
using omp::correlation_backward;
using omp::correlation_forward;
using omp::matmul;
using omp::similarity_matrix;

}  // namespace wxs::kernels
