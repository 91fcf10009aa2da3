#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "gfn/kernels.hpp"
#include "gfn/rng.hpp"

using namespace gfn;
using kernels::Ops;

namespace {

std::vector<double> random_vec(RngStream& rng, size_t n, double scale = 2.0) {
  std::vector<double> v(n);
  for (double& x : v) x = (rng.uniform01() - 0.5) * scale;
  return v;
}

// Sizes chosen to cover the vector width boundary and tails.
const size_t kSizes[] = {0, 1, 2, 3, 4, 5, 7, 8, 9, 16, 33, 64, 257};

}  // namespace

TEST_CASE("scalar gemv matches an independent triple loop") {
  RngStream rng(7, StreamPurpose::kTest, 0);
  const Ops& ops = kernels::scalar_ops();
  for (size_t rows : {1u, 3u, 17u}) {
    for (size_t cols : {1u, 5u, 32u}) {
      const auto w = random_vec(rng, rows * cols);
      const auto x = random_vec(rng, cols);
      const auto b = random_vec(rng, rows);
      std::vector<double> y(rows);
      ops.gemv(w.data(), rows, cols, x.data(), b.data(), y.data());
      for (size_t r = 0; r < rows; ++r) {
        double expect = b[r];
        for (size_t c = 0; c < cols; ++c) expect += w[r * cols + c] * x[c];
        CHECK(y[r] == doctest::Approx(expect).epsilon(1e-13));
      }
    }
  }
}

TEST_CASE("gemv_t_acc and ger_acc satisfy the adjoint identity") {
  // <W x, y> == <x, W^T y>, and d/dW <W x, y> == y x^T.
  RngStream rng(11, StreamPurpose::kTest, 0);
  const Ops& ops = kernels::active_ops();
  const size_t rows = 13, cols = 29;
  const auto w = random_vec(rng, rows * cols);
  const auto x = random_vec(rng, cols);
  const auto y = random_vec(rng, rows);
  std::vector<double> wx(rows);
  ops.gemv(w.data(), rows, cols, x.data(), nullptr, wx.data());
  std::vector<double> wty(cols, 0.0);
  ops.gemv_t_acc(w.data(), rows, cols, y.data(), wty.data());
  CHECK(ops.dot(wx.data(), y.data(), rows) ==
        doctest::Approx(ops.dot(x.data(), wty.data(), cols)).epsilon(1e-12));

  std::vector<double> outer(rows * cols, 0.0);
  ops.ger_acc(outer.data(), rows, cols, y.data(), x.data());
  for (size_t r = 0; r < rows; ++r)
    for (size_t c = 0; c < cols; ++c)
      CHECK(outer[r * cols + c] == doctest::Approx(y[r] * x[c]).epsilon(1e-14));
}

TEST_CASE("avx2 variant matches the scalar reference") {
  const Ops* avx2 = kernels::avx2_ops();
  if (!avx2) {
    MESSAGE("AVX2 variant unavailable on this machine; skipping equivalence checks");
    return;
  }
  const Ops& ref = kernels::scalar_ops();
  RngStream rng(3, StreamPurpose::kTest, 1);

  for (size_t n : kSizes) {
    const auto a = random_vec(rng, n);
    const auto b = random_vec(rng, n);
    const double tol = 1e-13 * (1.0 + static_cast<double>(n));
    CHECK(avx2->dot(a.data(), b.data(), n) ==
          doctest::Approx(ref.dot(a.data(), b.data(), n)).epsilon(tol));
    CHECK(avx2->sum(a.data(), n) == doctest::Approx(ref.sum(a.data(), n)).epsilon(tol));

    auto y1 = random_vec(rng, n);
    auto y2 = y1;
    ref.axpy(n, 0.7, a.data(), y1.data());
    avx2->axpy(n, 0.7, a.data(), y2.data());
    for (size_t i = 0; i < n; ++i) CHECK(y2[i] == doctest::Approx(y1[i]).epsilon(1e-14));

    std::vector<double> l1(n), l2(n);
    ref.leaky_relu(n, 0.01, a.data(), l1.data());
    avx2->leaky_relu(n, 0.01, a.data(), l2.data());
    for (size_t i = 0; i < n; ++i) CHECK(l1[i] == l2[i]);  // elementwise, bit-equal

    std::vector<double> g1(n, 0.0), g2(n, 0.0);
    ref.leaky_relu_grad_acc(n, 0.01, a.data(), b.data(), g1.data());
    avx2->leaky_relu_grad_acc(n, 0.01, a.data(), b.data(), g2.data());
    for (size_t i = 0; i < n; ++i) CHECK(g2[i] == doctest::Approx(g1[i]).epsilon(1e-14));
  }

  for (size_t rows : {1u, 4u, 7u, 32u}) {
    for (size_t cols : {1u, 3u, 8u, 65u}) {
      const auto w = random_vec(rng, rows * cols);
      const auto x = random_vec(rng, cols);
      const auto bias = random_vec(rng, rows);
      const auto gy = random_vec(rng, rows);
      const double tol = 1e-13 * (1.0 + static_cast<double>(cols));

      std::vector<double> y1(rows), y2(rows);
      ref.gemv(w.data(), rows, cols, x.data(), bias.data(), y1.data());
      avx2->gemv(w.data(), rows, cols, x.data(), bias.data(), y2.data());
      for (size_t r = 0; r < rows; ++r) CHECK(y2[r] == doctest::Approx(y1[r]).epsilon(tol));

      std::vector<double> gx1(cols, 0.0), gx2(cols, 0.0);
      ref.gemv_t_acc(w.data(), rows, cols, gy.data(), gx1.data());
      avx2->gemv_t_acc(w.data(), rows, cols, gy.data(), gx2.data());
      for (size_t c = 0; c < cols; ++c)
        CHECK(gx2[c] == doctest::Approx(gx1[c]).epsilon(1e-13 * (1.0 + rows)));

      auto w1 = w, w2 = w;
      ref.ger_acc(w1.data(), rows, cols, gy.data(), x.data());
      avx2->ger_acc(w2.data(), rows, cols, gy.data(), x.data());
      for (size_t i = 0; i < w.size(); ++i)
        CHECK(w2[i] == doctest::Approx(w1[i]).epsilon(1e-14));
    }
  }

  // Adam: identical trajectories over several steps within tolerance.
  const size_t n = 37;
  auto w1 = random_vec(rng, n), w2 = w1;
  std::vector<double> m1(n, 0.0), v1(n, 0.0), m2(n, 0.0), v2(n, 0.0);
  for (int t = 1; t <= 5; ++t) {
    const auto g = random_vec(rng, n);
    const double bc1 = 1.0 / (1.0 - std::pow(0.9, t));
    const double bc2 = 1.0 / (1.0 - std::pow(0.999, t));
    ref.adam_update(n, 0.01, 0.9, 0.999, 1e-8, bc1, bc2, g.data(), m1.data(), v1.data(),
                    w1.data());
    avx2->adam_update(n, 0.01, 0.9, 0.999, 1e-8, bc1, bc2, g.data(), m2.data(), v2.data(),
                      w2.data());
  }
  for (size_t i = 0; i < n; ++i) CHECK(w2[i] == doctest::Approx(w1[i]).epsilon(1e-13));
}

TEST_CASE("drain_acc moves gradients and clears the source") {
  const Ops& ops = kernels::active_ops();
  RngStream rng(5, StreamPurpose::kTest, 2);
  for (size_t n : kSizes) {
    auto src = random_vec(rng, n);
    const auto src_copy = src;
    auto dst = random_vec(rng, n);
    const auto dst_copy = dst;
    ops.drain_acc(n, src.data(), dst.data());
    for (size_t i = 0; i < n; ++i) {
      CHECK(src[i] == 0.0);
      CHECK(dst[i] == doctest::Approx(dst_copy[i] + src_copy[i]).epsilon(1e-15));
    }
  }
}

TEST_CASE("adam first step moves a parameter by about lr") {
  const Ops& ops = kernels::active_ops();
  double w = 0.5, m = 0.0, v = 0.0;
  const double g = 1.0, lr = 0.25;
  const double bc1 = 1.0 / (1.0 - 0.9), bc2 = 1.0 / (1.0 - 0.999);
  ops.adam_update(1, lr, 0.9, 0.999, 1e-8, bc1, bc2, &g, &m, &v, &w);
  CHECK(w == doctest::Approx(0.5 - lr).epsilon(1e-7));  // off only by the eps in the denom
}

TEST_CASE("kernel selection honors the GFN_KERNELS override") {
  // The active table is cached per process; just sanity-check the name is one
  // of the two variants and consistent with availability.
  const Ops& ops = kernels::active_ops();
  const std::string name = ops.name;
  CHECK((name == "scalar" || name == "avx2"));
  if (!kernels::avx2_available()) CHECK(name == "scalar");
}
