#include <doctest.h>

#include <random>

#include "wxstereo/kernels/kernels.hpp"
#include "support.hpp"

using namespace wxs;
namespace k = wxs::kernels;

namespace {

// Direct 7-loop convolution used as the reference for both kernel flavours.
std::vector<double> conv_oracle(const k::ConvGeometry& g, const Tensor& x, const Tensor& w, const Tensor& b) {
  std::vector<double> y(static_cast<size_t>(g.out_channels * g.out_h() * g.out_w()), 0.0);
  for (int64_t o = 0; o < g.out_channels; ++o)
    for (int64_t oy = 0; oy < g.out_h(); ++oy)
      for (int64_t ox = 0; ox < g.out_w(); ++ox) {
        double acc = b.empty() ? 0.0 : b[o];
        for (int64_t c = 0; c < g.in_channels; ++c)
          for (int64_t ky = 0; ky < g.kernel; ++ky)
            for (int64_t kx = 0; kx < g.kernel; ++kx) {
              const int64_t iy = oy * g.stride - g.pad + ky, ix = ox * g.stride - g.pad + kx;
              if (iy < 0 || ix < 0 || iy >= g.in_h || ix >= g.in_w) continue;
              acc += x[(c * g.in_h + iy) * g.in_w + ix] * w[((o * g.in_channels + c) * g.kernel + ky) * g.kernel + kx];
            }
        y[static_cast<size_t>((o * g.out_h() + oy) * g.out_w() + ox)] = acc;
      }
  return y;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("conv2d: serial and omp match a direct oracle, forward and backward") {
  std::mt19937_64 rng(5);
  for (const auto& [stride, kernel, pad] : std::vector<std::tuple<int64_t, int64_t, int64_t>>{
           {1, 3, 1}, {2, 3, 1}, {1, 1, 0}, {2, 4, 1}}) {
    k::ConvGeometry g{3, 9, 11, 4, kernel, stride, pad};
    const Tensor x = test::random_tensor({3, 9, 11}, rng);
    const Tensor w = test::random_tensor({4, 3, kernel, kernel}, rng);
    const Tensor b = test::random_tensor({4}, rng);
    const auto expect = conv_oracle(g, x, w, b);
    const size_t ny = expect.size();
    std::vector<double> ys(ny), yo(ny);
    k::serial::conv2d_forward(g, x.values(), w.values(), b.values(), ys);
    k::omp::conv2d_forward(g, x.values(), w.values(), b.values(), yo);
    CHECK(max_diff(ys, expect) < 1e-12);
    CHECK(max_diff(yo, expect) < 1e-12);

    // Backward is the adjoint: <dy, conv(x)> = <conv^T(dy), x> (no bias).
    const Tensor dy = test::random_tensor({4, g.out_h(), g.out_w()}, rng);
    std::vector<double> dxs(x.values().size(), 0.0), dxo(dxs.size(), 0.0);
    k::serial::conv2d_backward_input(g, dy.values(), w.values(), dxs);
    k::omp::conv2d_backward_input(g, dy.values(), w.values(), dxo);
    const auto y0 = conv_oracle(g, x, w, Tensor());
    double lhs = 0, rhs = 0;
    for (size_t i = 0; i < ny; ++i) lhs += dy[static_cast<int64_t>(i)] * y0[i];
    for (size_t i = 0; i < dxs.size(); ++i) rhs += dxs[i] * x[static_cast<int64_t>(i)];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
    CHECK(max_diff(dxs, dxo) < 1e-12);

    std::vector<double> dws(w.values().size(), 0.0), dwo(dws.size(), 0.0), dbs(4, 0.0), dbo(4, 0.0);
    k::serial::conv2d_backward_weight(g, dy.values(), x.values(), dws, dbs);
    k::omp::conv2d_backward_weight(g, dy.values(), x.values(), dwo, dbo);
    double rhs_w = 0;
    for (size_t i = 0; i < dws.size(); ++i) rhs_w += dws[i] * w[static_cast<int64_t>(i)];
    CHECK(lhs == doctest::Approx(rhs_w).epsilon(1e-10));
    CHECK(max_diff(dws, dwo) < 1e-12);
    CHECK(max_diff(dbs, dbo) < 1e-12);
  }
}

TEST_CASE("correlation: both flavours agree with the definition") {
  std::mt19937_64 rng(6);
  const int64_t c = 3, h = 4, w = 9, d = 5;
  const Tensor a = test::random_tensor({c, h, w}, rng), b = test::random_tensor({c, h, w}, rng);
  std::vector<double> s(static_cast<size_t>(d * h * w)), o(s.size());
  k::serial::correlation_forward(c, h, w, d, a.values(), b.values(), -1.0, s);
  k::omp::correlation_forward(c, h, w, d, a.values(), b.values(), -1.0, o);
  for (int64_t dd = 0; dd < d; ++dd)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        double expect = -1.0;
        if (x - dd >= 0) {
          expect = 0;
          for (int64_t ch = 0; ch < c; ++ch) expect += a.at(ch, y, x) * b.at(ch, y, x - dd);
        }
        const auto i = static_cast<size_t>((dd * h + y) * w + x);
        CHECK(s[i] == doctest::Approx(expect).epsilon(1e-12));
        CHECK(o[i] == s[i]);
      }

  const Tensor dout = test::random_tensor({d, h, w}, rng);
  std::vector<double> das(a.values().size()), dbs(das.size()), dao(das.size()), dbo(das.size());
  k::serial::correlation_backward(c, h, w, d, a.values(), b.values(), dout.values(), das, dbs);
  k::omp::correlation_backward(c, h, w, d, a.values(), b.values(), dout.values(), dao, dbo);
  CHECK(max_diff(das, dao) < 1e-12);
  CHECK(max_diff(dbs, dbo) < 1e-12);
}

TEST_CASE("matmul and similarity matrix: flavours agree") {
  std::mt19937_64 rng(7);
  const Tensor a = test::random_tensor({5, 7}, rng), b = test::random_tensor({7, 3}, rng);
  std::vector<double> s(15), o(15);
  k::serial::matmul(5, 7, 3, a.values(), b.values(), s);
  k::omp::matmul(5, 7, 3, a.values(), b.values(), o);
  for (int64_t i = 0; i < 5; ++i)
    for (int64_t j = 0; j < 3; ++j) {
      double e = 0;
      for (int64_t q = 0; q < 7; ++q) e += a.at(i, q) * b.at(q, j);
      CHECK(s[static_cast<size_t>(i * 3 + j)] == doctest::Approx(e).epsilon(1e-12));
    }
  CHECK(max_diff(s, o) < 1e-12);

  const Tensor fs = test::random_tensor({6, 4}, rng), fd = test::random_tensor({9, 4}, rng);
  const Tensor ds = test::random_tensor({6}, rng, 0, 10), dd = test::random_tensor({9}, rng, 0, 10);
  k::SimilarityInputs in{fs.values(), ds.values(), fd.values(), dd.values(), 6, 9, 4, 0.3, 12.0};
  std::vector<double> ss(54), so(54);
  k::serial::similarity_matrix(in, ss);
  k::omp::similarity_matrix(in, so);
  CHECK(ss == so);
  for (int64_t i = 0; i < 6; ++i)
    for (int64_t j = 0; j < 9; ++j)
      CHECK(ss[static_cast<size_t>(i * 9 + j)] ==
            k::token_similarity(fs.values().subspan(static_cast<size_t>(i * 4), 4), ds[i],
                                fd.values().subspan(static_cast<size_t>(j * 4), 4), dd[j], 0.3, 12.0));
}
