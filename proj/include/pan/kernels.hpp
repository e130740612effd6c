#pragma once

#include <cstddef>
#include <string>

namespace pan {

// Data-parallel inner loops behind the tensor ops. Two implementations exist:
// a scalar reference (kernels_scalar.cpp) and an AVX2 variant
// (kernels_avx2.cpp) selected at runtime when the CPU supports it. Both are
// deterministic; the AVX2 reductions reassociate sums, so cross-backend
// results agree only to rounding (equivalence-tested in test_kernels).
//
// axpy2d / dot2d walk a rows x cols window with independent row/column
// strides for source and destination. Convolution forward, input-gradient
// and weight-gradient all reduce to these two, with unit column strides
// (the fast path) everywhere except stride-2 layers.
struct KernelTable {
    const char* name;

    // y[r,c] += a * x[r,c] over the strided window.
    void (*axpy2d)(int rows, int cols, double a,
                   const double* x, std::ptrdiff_t xrs, std::ptrdiff_t xcs,
                   double* y, std::ptrdiff_t yrs, std::ptrdiff_t ycs);

    // sum over the window of x[r,c] * y[r,c].
    double (*dot2d)(int rows, int cols,
                    const double* x, std::ptrdiff_t xrs, std::ptrdiff_t xcs,
                    const double* y, std::ptrdiff_t yrs, std::ptrdiff_t ycs);

    void (*vadd)(int n, const double* a, const double* b, double* out);
    void (*vmul)(int n, const double* a, const double* b, double* out);
    void (*vmul_acc)(int n, const double* a, const double* b, double* acc); // acc += a.*b
    void (*vaxpy)(int n, double a, const double* x, double* y);             // y += a*x
    double (*vsum)(int n, const double* x);

    // leaky slope alpha; alpha = 0 gives plain relu. Backward accumulates.
    void (*leaky_fwd)(int n, double alpha, const double* x, double* y);
    void (*leaky_bwd)(int n, double alpha, const double* x, const double* g, double* gx);

    void (*sigmoid_fwd)(int n, const double* x, double* y);
    void (*sigmoid_bwd)(int n, const double* y, const double* g, double* gx); // gx += g*y*(1-y)

    // One fused Adam update, in place. bc1/bc2 are the bias-correction
    // factors 1/(1-b1^t) and 1/(1-b2^t). Updated params and moments are
    // rounded to the f32 grid (checkpoint blobs are f32; resume must be
    // bit-exact).
    void (*adam_step)(int n, double* p, double* m, double* v, const double* g,
                      double lr, double b1, double b2, double eps,
                      double bc1, double bc2);
};

enum class KernelBackend { Auto, Scalar, Avx2 };

// Active table. First use resolves Auto via CPU detection, honoring the
// PAN_KERNELS environment variable (scalar|avx2|auto) when set.
const KernelTable& kernels();

// Force a backend (throws ParameterError if unsupported on this CPU).
void select_kernels(KernelBackend backend);

const KernelTable& scalar_kernels();
// nullptr when this build or CPU has no AVX2 path.
const KernelTable* avx2_kernels();

} // namespace pan
