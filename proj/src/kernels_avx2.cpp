// AVX2 + FMA kernel variants. Compiled with -mavx2 -mfma on x86-64 only;
// dispatch happens at runtime in kernels.cpp. Strided windows fall back to
// the scalar loop inside each kernel, so only the unit-stride fast paths are
// vectorized. Reductions reassociate relative to the scalar table and agree
// with it to rounding, not bitwise.

#include "pan/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cmath>
#include <cstddef>

#include "pan/tensor.hpp"

namespace pan {
namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(lo) + _mm_cvtsd_f64(_mm_unpackhi_pd(lo, lo));
}

void axpy2d_avx2(int rows, int cols, double a,
                 const double* x, std::ptrdiff_t xrs, std::ptrdiff_t xcs,
                 double* y, std::ptrdiff_t yrs, std::ptrdiff_t ycs) {
    if (xcs == 1 && ycs == 1) {
        const __m256d av = _mm256_set1_pd(a);
        for (int r = 0; r < rows; ++r) {
            const double* xp = x + r * xrs;
            double* yp = y + r * yrs;
            int c = 0;
            for (; c + 8 <= cols; c += 8) {
                __m256d y0 = _mm256_loadu_pd(yp + c);
                __m256d y1 = _mm256_loadu_pd(yp + c + 4);
                y0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(xp + c), y0);
                y1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(xp + c + 4), y1);
                _mm256_storeu_pd(yp + c, y0);
                _mm256_storeu_pd(yp + c + 4, y1);
            }
            for (; c + 4 <= cols; c += 4) {
                __m256d y0 = _mm256_loadu_pd(yp + c);
                y0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(xp + c), y0);
                _mm256_storeu_pd(yp + c, y0);
            }
            for (; c < cols; ++c)
                yp[c] += a * xp[c];
        }
        return;
    }
    for (int r = 0; r < rows; ++r) {
        const double* xp = x + r * xrs;
        double* yp = y + r * yrs;
        for (int c = 0; c < cols; ++c)
            yp[c * ycs] += a * xp[c * xcs];
    }
}

double dot2d_avx2(int rows, int cols,
                  const double* x, std::ptrdiff_t xrs, std::ptrdiff_t xcs,
                  const double* y, std::ptrdiff_t yrs, std::ptrdiff_t ycs) {
    if (xcs == 1 && ycs == 1) {
        __m256d acc0 = _mm256_setzero_pd();
        __m256d acc1 = _mm256_setzero_pd();
        double tail = 0.0;
        for (int r = 0; r < rows; ++r) {
            const double* xp = x + r * xrs;
            const double* yp = y + r * yrs;
            int c = 0;
            for (; c + 8 <= cols; c += 8) {
                acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(xp + c), _mm256_loadu_pd(yp + c), acc0);
                acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(xp + c + 4), _mm256_loadu_pd(yp + c + 4), acc1);
            }
            for (; c + 4 <= cols; c += 4)
                acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(xp + c), _mm256_loadu_pd(yp + c), acc0);
            for (; c < cols; ++c)
                tail += xp[c] * yp[c];
        }
        return hsum(_mm256_add_pd(acc0, acc1)) + tail;
    }
    double acc = 0.0;
    for (int r = 0; r < rows; ++r) {
        const double* xp = x + r * xrs;
        const double* yp = y + r * yrs;
        for (int c = 0; c < cols; ++c)
            acc += xp[c * xcs] * yp[c * ycs];
    }
    return acc;
}

void vadd_avx2(int n, const double* a, const double* b, double* out) {
    int i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void vmul_avx2(int n, const double* a, const double* b, double* out) {
    int i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void vmul_acc_avx2(int n, const double* a, const double* b, double* acc) {
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d v = _mm256_loadu_pd(acc + i);
        v = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), v);
        _mm256_storeu_pd(acc + i, v);
    }
    for (; i < n; ++i) acc[i] += a[i] * b[i];
}

void vaxpy_avx2(int n, double a, const double* x, double* y) {
    const __m256d av = _mm256_set1_pd(a);
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d v = _mm256_loadu_pd(y + i);
        v = _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), v);
        _mm256_storeu_pd(y + i, v);
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

double vsum_avx2(int n, const double* x) {
    __m256d acc = _mm256_setzero_pd();
    int i = 0;
    for (; i + 4 <= n; i += 4)
        acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    double s = hsum(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

void leaky_fwd_avx2(int n, double alpha, const double* x, double* y) {
    const __m256d av = _mm256_set1_pd(alpha);
    const __m256d zero = _mm256_setzero_pd();
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d xv = _mm256_loadu_pd(x + i);
        __m256d pos = _mm256_cmp_pd(xv, zero, _CMP_GT_OQ);
        _mm256_storeu_pd(y + i, _mm256_blendv_pd(_mm256_mul_pd(av, xv), xv, pos));
    }
    for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : alpha * x[i];
}

void leaky_bwd_avx2(int n, double alpha, const double* x, const double* g, double* gx) {
    const __m256d av = _mm256_set1_pd(alpha);
    const __m256d one = _mm256_set1_pd(1.0);
    const __m256d zero = _mm256_setzero_pd();
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d xv = _mm256_loadu_pd(x + i);
        __m256d pos = _mm256_cmp_pd(xv, zero, _CMP_GT_OQ);
        __m256d slope = _mm256_blendv_pd(av, one, pos);
        __m256d acc = _mm256_loadu_pd(gx + i);
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(g + i), slope, acc);
        _mm256_storeu_pd(gx + i, acc);
    }
    for (; i < n; ++i) gx[i] += g[i] * (x[i] > 0.0 ? 1.0 : alpha);
}

// exp stays scalar; it is nowhere near the hot path.
void sigmoid_fwd_avx2(int n, const double* x, double* y) {
    for (int i = 0; i < n; ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
}

void sigmoid_bwd_avx2(int n, const double* y, const double* g, double* gx) {
    const __m256d one = _mm256_set1_pd(1.0);
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d yv = _mm256_loadu_pd(y + i);
        __m256d t = _mm256_mul_pd(yv, _mm256_sub_pd(one, yv));
        __m256d acc = _mm256_loadu_pd(gx + i);
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(g + i), t, acc);
        _mm256_storeu_pd(gx + i, acc);
    }
    for (; i < n; ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
}

inline __m256d round_f32(__m256d v) {
    return _mm256_cvtps_pd(_mm256_cvtpd_ps(v));
}

void adam_step_avx2(int n, double* p, double* m, double* v, const double* g,
                    double lr, double b1, double b2, double eps,
                    double bc1, double bc2) {
    const __m256d b1v = _mm256_set1_pd(b1);
    const __m256d b2v = _mm256_set1_pd(b2);
    const __m256d n1v = _mm256_set1_pd(1.0 - b1);
    const __m256d n2v = _mm256_set1_pd(1.0 - b2);
    const __m256d bc1v = _mm256_set1_pd(bc1);
    const __m256d bc2v = _mm256_set1_pd(bc2);
    const __m256d lrv = _mm256_set1_pd(lr);
    const __m256d epsv = _mm256_set1_pd(eps);
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d gv = _mm256_loadu_pd(g + i);
        __m256d mv = _mm256_fmadd_pd(b1v, _mm256_loadu_pd(m + i), _mm256_mul_pd(n1v, gv));
        __m256d vv = _mm256_fmadd_pd(b2v, _mm256_loadu_pd(v + i),
                                     _mm256_mul_pd(n2v, _mm256_mul_pd(gv, gv)));
        __m256d mhat = _mm256_mul_pd(mv, bc1v);
        __m256d vhat = _mm256_mul_pd(vv, bc2v);
        __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(vhat), epsv);
        __m256d step = _mm256_div_pd(_mm256_mul_pd(lrv, mhat), denom);
        __m256d pv = _mm256_sub_pd(_mm256_loadu_pd(p + i), step);
        _mm256_storeu_pd(m + i, round_f32(mv));
        _mm256_storeu_pd(v + i, round_f32(vv));
        _mm256_storeu_pd(p + i, round_f32(pv));
    }
    for (; i < n; ++i) {
        double mi = b1 * m[i] + (1.0 - b1) * g[i];
        double vi = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        double pi = p[i] - lr * (mi * bc1) / (std::sqrt(vi * bc2) + eps);
        m[i] = quantize_f32(mi);
        v[i] = quantize_f32(vi);
        p[i] = quantize_f32(pi);
    }
}

} // namespace

const KernelTable* avx2_kernels_impl() {
    static const KernelTable table = {
        "avx2",
        axpy2d_avx2, dot2d_avx2,
        vadd_avx2, vmul_avx2, vmul_acc_avx2, vaxpy_avx2, vsum_avx2,
        leaky_fwd_avx2, leaky_bwd_avx2,
        sigmoid_fwd_avx2, sigmoid_bwd_avx2,
        adam_step_avx2,
    };
    return &table;
}

} // namespace pan

#else

namespace pan {
const KernelTable* avx2_kernels_impl() { return nullptr; }
} // namespace pan

#endif
