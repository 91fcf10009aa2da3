#include <cmath>

#include "gfn/kernels.hpp"

// Reference kernels. Plain loops, one accumulation order; the SIMD variants
// are checked against these.

namespace gfn::kernels {
namespace {

double dot_(const double* a, const double* b, size_t n) {
  double s = 0.0;
  for (size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

double sum_(const double* x, size_t n) {
  double s = 0.0;
  for (size_t i = 0; i < n; ++i) s += x[i];
  return s;
}

void gemv_(const double* w, size_t rows, size_t cols, const double* x, const double* bias,
           double* y) {
  for (size_t r = 0; r < rows; ++r) {
    double s = bias ? bias[r] : 0.0;
    const double* row = w + r * cols;
    for (size_t c = 0; c < cols; ++c) s += row[c] * x[c];
    y[r] = s;
  }
}

void gemv_t_acc_(const double* w, size_t rows, size_t cols, const double* gy, double* gx) {
  for (size_t r = 0; r < rows; ++r) {
    const double g = gy[r];
    if (g == 0.0) continue;
    const double* row = w + r * cols;
    for (size_t c = 0; c < cols; ++c) gx[c] += g * row[c];
  }
}

void ger_acc_(double* w, size_t rows, size_t cols, const double* gy, const double* x) {
  for (size_t r = 0; r < rows; ++r) {
    const double g = gy[r];
    if (g == 0.0) continue;
    double* row = w + r * cols;
    for (size_t c = 0; c < cols; ++c) row[c] += g * x[c];
  }
}

void axpy_(size_t n, double a, const double* x, double* y) {
  for (size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void drain_acc_(size_t n, double* src, double* dst) {
  for (size_t i = 0; i < n; ++i) {
    dst[i] += src[i];
    src[i] = 0.0;
  }
}

void leaky_relu_(size_t n, double slope, const double* x, double* y) {
  for (size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : slope * x[i];
}

void leaky_relu_grad_acc_(size_t n, double slope, const double* x, const double* gy,
                          double* gx) {
  for (size_t i = 0; i < n; ++i) gx[i] += gy[i] * (x[i] > 0.0 ? 1.0 : slope);
}

void adam_update_(size_t n, double lr, double beta1, double beta2, double eps, double inv_bc1,
                  double inv_bc2, const double* g, double* m, double* v, double* w) {
  for (size_t i = 0; i < n; ++i) {
    const double gi = g[i];
    m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
    v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
    const double mhat = m[i] * inv_bc1;
    const double vhat = v[i] * inv_bc2;
    w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

}  // namespace

const Ops& scalar_ops() {
  static const Ops ops = {
      .name = "scalar",
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
  return ops;
}

}  // namespace gfn::kernels
