// AVX2 kernels. Compiled with -mavx2 on x86-64 only; elsewhere this TU
// provides the null stub. Multiplies and adds stay separate (no FMA) and
// reductions keep the scalar reference's four-lane accumulation order, so
// results are bit-identical to the scalar backend.

#include "mtms/kernels.hpp"

#if defined(__AVX2__) && (defined(__x86_64__) || defined(_M_X64))

#include <immintrin.h>

#include <cmath>

namespace mtms::kernels {
namespace {

void v_add(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i),
                                                _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void v_sub(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i),
                                                _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void v_mul(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i),
                                                _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void v_scale(double c, const double* x, double* out, std::size_t n) {
    const __m256d vc = _mm256_set1_pd(c);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_mul_pd(vc, _mm256_loadu_pd(x + i)));
    }
    for (; i < n; ++i) out[i] = c * x[i];
}

void v_axpy(double c, const double* x, double* y, std::size_t n) {
    const __m256d vc = _mm256_set1_pd(c);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d prod = _mm256_mul_pd(vc, _mm256_loadu_pd(x + i));
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
    }
    for (; i < n; ++i) y[i] += c * x[i];
}

double v_dot(const double* a, const double* b, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_loadu_pd(a + i),
                                               _mm256_loadu_pd(b + i)));
    }
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, acc);
    for (; i < n; ++i) lanes[i & 3] += a[i] * b[i];
    return (lanes[0] + lanes[2]) + (lanes[1] + lanes[3]);
}

double v_sum(const double* x, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    }
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, acc);
    for (; i < n; ++i) lanes[i & 3] += x[i];
    return (lanes[0] + lanes[2]) + (lanes[1] + lanes[3]);
}

void v_matmul_nn(const double* a, const double* b, double* c,
                 std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            const __m256d vav = _mm256_set1_pd(av);
            const double* brow = b + p * n;
            std::size_t j = 0;
            for (; j + 4 <= n; j += 4) {
                const __m256d prod = _mm256_mul_pd(vav, _mm256_loadu_pd(brow + j));
                _mm256_storeu_pd(crow + j, _mm256_add_pd(_mm256_loadu_pd(crow + j), prod));
            }
            for (; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void v_matmul_nt(const double* a, const double* b, double* c,
                 std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            c[i * n + j] += v_dot(arow, b + j * k, k);
        }
    }
}

void v_matmul_tn(const double* a, const double* b, double* c,
                 std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = a + p * m;
        const double* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            const __m256d vav = _mm256_set1_pd(av);
            double* crow = c + i * n;
            std::size_t j = 0;
            for (; j + 4 <= n; j += 4) {
                const __m256d prod = _mm256_mul_pd(vav, _mm256_loadu_pd(brow + j));
                _mm256_storeu_pd(crow + j, _mm256_add_pd(_mm256_loadu_pd(crow + j), prod));
            }
            for (; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void v_leaky_relu(double slope, const double* x, double* out, std::size_t n) {
    const __m256d vslope = _mm256_set1_pd(slope);
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d vx = _mm256_loadu_pd(x + i);
        const __m256d mask = _mm256_cmp_pd(vx, zero, _CMP_GT_OQ);
        const __m256d neg = _mm256_mul_pd(vslope, vx);
        _mm256_storeu_pd(out + i, _mm256_blendv_pd(neg, vx, mask));
    }
    for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : slope * x[i];
}

void v_leaky_relu_grad(double slope, const double* x, const double* gy,
                       double* gx, std::size_t n) {
    const __m256d vslope = _mm256_set1_pd(slope);
    const __m256d vone = _mm256_set1_pd(1.0);
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d vx = _mm256_loadu_pd(x + i);
        const __m256d mask = _mm256_cmp_pd(vx, zero, _CMP_GT_OQ);
        const __m256d factor = _mm256_blendv_pd(vslope, vone, mask);
        const __m256d prod = _mm256_mul_pd(_mm256_loadu_pd(gy + i), factor);
        _mm256_storeu_pd(gx + i, _mm256_add_pd(_mm256_loadu_pd(gx + i), prod));
    }
    for (; i < n; ++i) gx[i] += gy[i] * (x[i] > 0.0 ? 1.0 : slope);
}

void v_adam_update(double lr, double eps, double bc1, double bc2,
                   double beta1, double beta2,
                   double* p, const double* g, double* m, double* v,
                   std::size_t n) {
    const __m256d vb1 = _mm256_set1_pd(beta1);
    const __m256d vb1c = _mm256_set1_pd(1.0 - beta1);
    const __m256d vb2 = _mm256_set1_pd(beta2);
    const __m256d vb2c = _mm256_set1_pd(1.0 - beta2);
    const __m256d vbc1 = _mm256_set1_pd(bc1);
    const __m256d vbc2 = _mm256_set1_pd(bc2);
    const __m256d vlr = _mm256_set1_pd(lr);
    const __m256d veps = _mm256_set1_pd(eps);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d vg = _mm256_loadu_pd(g + i);
        const __m256d vm = _mm256_add_pd(_mm256_mul_pd(vb1, _mm256_loadu_pd(m + i)),
                                         _mm256_mul_pd(vb1c, vg));
        const __m256d vgg = _mm256_mul_pd(vg, vg);
        const __m256d vv = _mm256_add_pd(_mm256_mul_pd(vb2, _mm256_loadu_pd(v + i)),
                                         _mm256_mul_pd(vb2c, vgg));
        _mm256_storeu_pd(m + i, vm);
        _mm256_storeu_pd(v + i, vv);
        const __m256d mhat = _mm256_div_pd(vm, vbc1);
        const __m256d vhat = _mm256_div_pd(vv, vbc2);
        const __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(vhat), veps);
        const __m256d step = _mm256_mul_pd(vlr, _mm256_div_pd(mhat, denom));
        _mm256_storeu_pd(p + i, _mm256_sub_pd(_mm256_loadu_pd(p + i), step));
    }
    for (; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * (g[i] * g[i]);
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p[i] = p[i] - lr * (mhat / (std::sqrt(vhat) + eps));
    }
}

void v_adadelta_update(double lr, double rho, double eps,
                       double* p, const double* g, double* accum_g,
                       double* accum_dx, std::size_t n) {
    const __m256d vrho = _mm256_set1_pd(rho);
    const __m256d vrhoc = _mm256_set1_pd(1.0 - rho);
    const __m256d veps = _mm256_set1_pd(eps);
    const __m256d vlr = _mm256_set1_pd(lr);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d vg = _mm256_loadu_pd(g + i);
        const __m256d vag = _mm256_add_pd(
            _mm256_mul_pd(vrho, _mm256_loadu_pd(accum_g + i)),
            _mm256_mul_pd(vrhoc, _mm256_mul_pd(vg, vg)));
        _mm256_storeu_pd(accum_g + i, vag);
        const __m256d ratio = _mm256_div_pd(
            _mm256_sqrt_pd(_mm256_add_pd(_mm256_loadu_pd(accum_dx + i), veps)),
            _mm256_sqrt_pd(_mm256_add_pd(vag, veps)));
        const __m256d delta = _mm256_mul_pd(vg, ratio);
        const __m256d vadx = _mm256_add_pd(
            _mm256_mul_pd(vrho, _mm256_loadu_pd(accum_dx + i)),
            _mm256_mul_pd(vrhoc, _mm256_mul_pd(delta, delta)));
        _mm256_storeu_pd(accum_dx + i, vadx);
        _mm256_storeu_pd(p + i, _mm256_sub_pd(_mm256_loadu_pd(p + i),
                                              _mm256_mul_pd(vlr, delta)));
    }
    for (; i < n; ++i) {
        accum_g[i] = rho * accum_g[i] + (1.0 - rho) * (g[i] * g[i]);
        const double delta =
            g[i] * (std::sqrt(accum_dx[i] + eps) / std::sqrt(accum_g[i] + eps));
        accum_dx[i] = rho * accum_dx[i] + (1.0 - rho) * (delta * delta);
        p[i] = p[i] - lr * delta;
    }
}

} // namespace

const Backend* avx2_backend() {
    static const Backend backend = {
        "avx2",
        v_add, v_sub, v_mul, v_scale, v_axpy,
        v_dot, v_sum,
        v_matmul_nn, v_matmul_nt, v_matmul_tn,
        v_leaky_relu, v_leaky_relu_grad,
        v_adam_update, v_adadelta_update,
    };
    return &backend;
}

} // namespace mtms::kernels

#else

namespace mtms::kernels {

const Backend* avx2_backend() { return nullptr; }

} // namespace mtms::kernels

#endif
