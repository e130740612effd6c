// Scalar reference kernels. These define the semantics the SIMD variants are
// tested against; keep them simple and obviously correct.

#include <cmath>
#include <cstddef>

#include "pan/kernels.hpp"
#include "pan/tensor.hpp"

namespace pan {
namespace {

void axpy2d_scalar(int rows, int cols, double a,
                   const double* x, std::ptrdiff_t xrs, std::ptrdiff_t xcs,
                   double* y, std::ptrdiff_t yrs, std::ptrdiff_t ycs) {
    for (int r = 0; r < rows; ++r) {
        const double* xp = x + r * xrs;
        double* yp = y + r * yrs;
        for (int c = 0; c < cols; ++c)
            yp[c * ycs] += a * xp[c * xcs];
    }
}

double dot2d_scalar(int rows, int cols,
                    const double* x, std::ptrdiff_t xrs, std::ptrdiff_t xcs,
                    const double* y, std::ptrdiff_t yrs, std::ptrdiff_t ycs) {
    double acc = 0.0;
    for (int r = 0; r < rows; ++r) {
        const double* xp = x + r * xrs;
        const double* yp = y + r * yrs;
        for (int c = 0; c < cols; ++c)
            acc += xp[c * xcs] * yp[c * ycs];
    }
    return acc;
}

void vadd_scalar(int n, const double* a, const double* b, double* out) {
    for (int i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void vmul_scalar(int n, const double* a, const double* b, double* out) {
    for (int i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void vmul_acc_scalar(int n, const double* a, const double* b, double* acc) {
    for (int i = 0; i < n; ++i) acc[i] += a[i] * b[i];
}

void vaxpy_scalar(int n, double a, const double* x, double* y) {
    for (int i = 0; i < n; ++i) y[i] += a * x[i];
}

double vsum_scalar(int n, const double* x) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += x[i];
    return s;
}

void leaky_fwd_scalar(int n, double alpha, const double* x, double* y) {
    for (int i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : alpha * x[i];
}

void leaky_bwd_scalar(int n, double alpha, const double* x, const double* g, double* gx) {
    for (int i = 0; i < n; ++i) gx[i] += g[i] * (x[i] > 0.0 ? 1.0 : alpha);
}

void sigmoid_fwd_scalar(int n, const double* x, double* y) {
    for (int i = 0; i < n; ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
}

void sigmoid_bwd_scalar(int n, const double* y, const double* g, double* gx) {
    for (int i = 0; i < n; ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
}

void adam_step_scalar(int n, double* p, double* m, double* v, const double* g,
                      double lr, double b1, double b2, double eps,
                      double bc1, double bc2) {
    for (int i = 0; i < n; ++i) {
        double mi = b1 * m[i] + (1.0 - b1) * g[i];
        double vi = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        double mhat = mi * bc1;
        double vhat = vi * bc2;
        double pi = p[i] - lr * mhat / (std::sqrt(vhat) + eps);
        m[i] = quantize_f32(mi);
        v[i] = quantize_f32(vi);
        p[i] = quantize_f32(pi);
    }
}

} // namespace

const KernelTable& scalar_kernels() {
    static const KernelTable table = {
        "scalar",
        axpy2d_scalar, dot2d_scalar,
        vadd_scalar, vmul_scalar, vmul_acc_scalar, vaxpy_scalar, vsum_scalar,
        leaky_fwd_scalar, leaky_bwd_scalar,
        sigmoid_fwd_scalar, sigmoid_bwd_scalar,
        adam_step_scalar,
    };
    return table;
}

} // namespace pan
