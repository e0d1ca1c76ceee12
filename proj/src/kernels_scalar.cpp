// Scalar reference kernels. These define the numerical contract: every other
// backend must reproduce their results bit for bit. Reductions keep four
// interleaved partial sums (combined pairwise) so that 4-lane vector variants
// can match them without reordering arithmetic.

#include "mtms/kernels.hpp"

#include <cmath>
#include <cstring>

namespace mtms::kernels {
namespace {

void s_add(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void s_sub(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void s_mul(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void s_scale(double c, const double* x, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = c * x[i];
}

void s_axpy(double c, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += c * x[i];
}

double s_dot(const double* a, const double* b, std::size_t n) {
    double acc[4] = {0.0, 0.0, 0.0, 0.0};
    for (std::size_t i = 0; i < n; ++i) acc[i & 3] += a[i] * b[i];
    return (acc[0] + acc[2]) + (acc[1] + acc[3]);
}

double s_sum(const double* x, std::size_t n) {
    double acc[4] = {0.0, 0.0, 0.0, 0.0};
    for (std::size_t i = 0; i < n; ++i) acc[i & 3] += x[i];
    return (acc[0] + acc[2]) + (acc[1] + acc[3]);
}

// c(m×n) += a(m×k) · b(k×n); accumulation runs over k in order, with the
// output row contiguous in the inner loop.
void s_matmul_nn(const double* a, const double* b, double* c,
                 std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c(m×n) += a(m×k) · b(n×k)ᵀ; each output entry is a dot over contiguous rows.
void s_matmul_nt(const double* a, const double* b, double* c,
                 std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            c[i * n + j] += s_dot(arow, b + j * k, k);
        }
    }
}

// c(m×n) += a(k×m)ᵀ · b(k×n)
void s_matmul_tn(const double* a, const double* b, double* c,
                 std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = a + p * m;
        const double* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void s_leaky_relu(double slope, const double* x, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : slope * x[i];
}

void s_leaky_relu_grad(double slope, const double* x, const double* gy,
                       double* gx, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) gx[i] += gy[i] * (x[i] > 0.0 ? 1.0 : slope);
}

void s_adam_update(double lr, double eps, double bc1, double bc2,
                   double beta1, double beta2,
                   double* p, const double* g, double* m, double* v,
                   std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * (g[i] * g[i]);
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p[i] = p[i] - lr * (mhat / (std::sqrt(vhat) + eps));
    }
}

void s_adadelta_update(double lr, double rho, double eps,
                       double* p, const double* g, double* accum_g,
                       double* accum_dx, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        accum_g[i] = rho * accum_g[i] + (1.0 - rho) * (g[i] * g[i]);
        const double delta =
            g[i] * (std::sqrt(accum_dx[i] + eps) / std::sqrt(accum_g[i] + eps));
        accum_dx[i] = rho * accum_dx[i] + (1.0 - rho) * (delta * delta);
        p[i] = p[i] - lr * delta;
    }
}

} // namespace

const Backend& scalar_backend() {
    static const Backend backend = {
        "scalar",
        s_add, s_sub, s_mul, s_scale, s_axpy,
        s_dot, s_sum,
        s_matmul_nn, s_matmul_nt, s_matmul_tn,
        s_leaky_relu, s_leaky_relu_grad,
        s_adam_update, s_adadelta_update,
    };
    return backend;
}

} // namespace mtms::kernels
