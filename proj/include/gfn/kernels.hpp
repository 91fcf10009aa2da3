#pragma once

#include <cstddef>

namespace gfn::kernels {

// Double-precision primitives behind the network and optimizer inner loops.
// Two implementations exist: a scalar reference and an AVX2+FMA variant.
// active_ops() picks one at startup (runtime CPU check, overridable with
// GFN_KERNELS=scalar|avx2). The two paths are equivalence-tested; they may
// differ in the last bits because vector accumulation reorders sums.
struct Ops {
  const char* name;

  double (*dot)(const double* a, const double* b, size_t n);
  double (*sum)(const double* x, size_t n);

  // y = W x + bias; W is row-major (rows x cols); bias may be null.
  void (*gemv)(const double* w, size_t rows, size_t cols, const double* x,
               const double* bias, double* y);
  // gx += W^T gy
  void (*gemv_t_acc)(const double* w, size_t rows, size_t cols, const double* gy, double* gx);
  // W += gy x^T
  void (*ger_acc)(double* w, size_t rows, size_t cols, const double* gy, const double* x);
  // y += a * x
  void (*axpy)(size_t n, double a, const double* x, double* y);
  // dst += src; src = 0. Used to reduce per-trajectory gradient buffers.
  void (*drain_acc)(size_t n, double* src, double* dst);

  void (*leaky_relu)(size_t n, double slope, const double* x, double* y);
  // gx += gy * (x > 0 ? 1 : slope)
  void (*leaky_relu_grad_acc)(size_t n, double slope, const double* x, const double* gy,
                              double* gx);

  // One Adam update over a flat block. inv_bc1/inv_bc2 are the bias-correction
  // reciprocals 1/(1-beta1^t), 1/(1-beta2^t) supplied by the caller.
  void (*adam_update)(size_t n, double lr, double beta1, double beta2, double eps,
                      double inv_bc1, double inv_bc2, const double* g, double* m, double* v,
                      double* w);
};

const Ops& scalar_ops();

// Null when the AVX2 variant was not built or the CPU lacks AVX2/FMA.
const Ops* avx2_ops();
bool avx2_available();

// Cached process-wide selection.
const Ops& active_ops();

}  // namespace gfn::kernels
