#include "gfn/kernels.hpp"

// AVX2+FMA variants. This translation unit is compiled with -mavx2 -mfma on
// x86-64 only; everywhere else avx2_ops() reports the variant as absent and
// the scalar reference kernels are used.

#if defined(GFN_HAVE_AVX2) && defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

#include <cmath>

namespace gfn::kernels {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d swap = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, swap));
}

double dot_(const double* a, const double* b, size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

double sum_(const double* x, size_t n) {
  __m256d acc = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double s = hsum(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}

void gemv_(const double* w, size_t rows, size_t cols, const double* x, const double* bias,
           double* y) {
  for (size_t r = 0; r < rows; ++r) {
    const double s = dot_(w + r * cols, x, cols);
    y[r] = bias ? bias[r] + s : s;
  }
}

void axpy_(size_t n, double a, const double* x, double* y) {
  const __m256d av = _mm256_set1_pd(a);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d yv = _mm256_loadu_pd(y + i);
    yv = _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), yv);
    _mm256_storeu_pd(y + i, yv);
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

void gemv_t_acc_(const double* w, size_t rows, size_t cols, const double* gy, double* gx) {
  for (size_t r = 0; r < rows; ++r) {
    if (gy[r] == 0.0) continue;
    axpy_(cols, gy[r], w + r * cols, gx);
  }
}

void ger_acc_(double* w, size_t rows, size_t cols, const double* gy, const double* x) {
  for (size_t r = 0; r < rows; ++r) {
    if (gy[r] == 0.0) continue;
    axpy_(cols, gy[r], x, w + r * cols);
  }
}

void drain_acc_(size_t n, double* src, double* dst) {
  const __m256d zero = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d s = _mm256_loadu_pd(src + i);
    __m256d d = _mm256_loadu_pd(dst + i);
    _mm256_storeu_pd(dst + i, _mm256_add_pd(d, s));
    _mm256_storeu_pd(src + i, zero);
  }
  for (; i < n; ++i) {
    dst[i] += src[i];
    src[i] = 0.0;
  }
}

void leaky_relu_(size_t n, double slope, const double* x, double* y) {
  const __m256d sl = _mm256_set1_pd(slope);
  const __m256d zero = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d xv = _mm256_loadu_pd(x + i);
    __m256d pos = _mm256_cmp_pd(xv, zero, _CMP_GT_OQ);
    _mm256_storeu_pd(y + i, _mm256_blendv_pd(_mm256_mul_pd(sl, xv), xv, pos));
  }
  for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : slope * x[i];
}

void leaky_relu_grad_acc_(size_t n, double slope, const double* x, const double* gy,
                          double* gx) {
  const __m256d sl = _mm256_set1_pd(slope);
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d zero = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d xv = _mm256_loadu_pd(x + i);
    __m256d pos = _mm256_cmp_pd(xv, zero, _CMP_GT_OQ);
    __m256d factor = _mm256_blendv_pd(sl, one, pos);
    __m256d g = _mm256_loadu_pd(gx + i);
    g = _mm256_fmadd_pd(_mm256_loadu_pd(gy + i), factor, g);
    _mm256_storeu_pd(gx + i, g);
  }
  for (; i < n; ++i) gx[i] += gy[i] * (x[i] > 0.0 ? 1.0 : slope);
}

void adam_update_(size_t n, double lr, double beta1, double beta2, double eps, double inv_bc1,
                  double inv_bc2, const double* g, double* m, double* v, double* w) {
  const __m256d b1 = _mm256_set1_pd(beta1);
  const __m256d b2 = _mm256_set1_pd(beta2);
  const __m256d omb1 = _mm256_set1_pd(1.0 - beta1);
  const __m256d omb2 = _mm256_set1_pd(1.0 - beta2);
  const __m256d bc1 = _mm256_set1_pd(inv_bc1);
  const __m256d bc2 = _mm256_set1_pd(inv_bc2);
  const __m256d lrv = _mm256_set1_pd(lr);
  const __m256d epsv = _mm256_set1_pd(eps);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d gv = _mm256_loadu_pd(g + i);
    __m256d mv = _mm256_loadu_pd(m + i);
    __m256d vv = _mm256_loadu_pd(v + i);
    mv = _mm256_fmadd_pd(b1, mv, _mm256_mul_pd(omb1, gv));
    vv = _mm256_fmadd_pd(b2, vv, _mm256_mul_pd(omb2, _mm256_mul_pd(gv, gv)));
    _mm256_storeu_pd(m + i, mv);
    _mm256_storeu_pd(v + i, vv);
    const __m256d mhat = _mm256_mul_pd(mv, bc1);
    const __m256d vhat = _mm256_mul_pd(vv, bc2);
    const __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(vhat), epsv);
    __m256d wv = _mm256_loadu_pd(w + i);
    wv = _mm256_sub_pd(wv, _mm256_div_pd(_mm256_mul_pd(lrv, mhat), denom));
    _mm256_storeu_pd(w + i, wv);
  }
  for (; i < n; ++i) {
    const double gi = g[i];
    m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
    v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
    w[i] -= lr * (m[i] * inv_bc1) / (std::sqrt(v[i] * inv_bc2) + eps);
  }
}

const Ops kAvx2Ops = {
    .name = "avx2",
    .dot = dot_,
    .sum = sum_,
    .gemv = gemv_,
    .gemv_t_acc = gemv_t_acc_,
    .ger_acc = ger_acc_,
    .axpy = axpy_,
    .drain_acc = drain_acc_,
    .leaky_relu = leaky_relu_,
    .leaky_relu_grad_acc = leaky_relu_grad_acc_,
    .adam_update = adam_update_,
};

}  // namespace

const Ops* avx2_ops_build() { return &kAvx2Ops; }

}  // namespace gfn::kernels

#else

namespace gfn::kernels {
const Ops* avx2_ops_build() { return nullptr; }
}  // namespace gfn::kernels

#endif
