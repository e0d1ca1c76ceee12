#pragma once
// Data-parallel inner-loop kernels: one scalar reference implementation and
// (on x86-64) an AVX2 variant, selected at runtime.
//
// Every variant must produce bit-identical results to the scalar reference.
// This is possible because the reference fixes the accumulation order the
// vector lanes would use anyway: reductions (dot, sum) run four interleaved
// partial sums, and matrix products accumulate over k with the output row as
// the innermost contiguous axis. Vector variants must not use FMA (the
// reference rounds after every multiply) and the whole project builds with
// -ffp-contract=off. Equivalence tests assert exact equality, not tolerances.

#include <cstddef>
#include <string>
#include <vector>

namespace mtms::kernels {

struct Backend {
    const char* name;

    // Elementwise, out may alias inputs.
    void (*add)(const double* a, const double* b, double* out, std::size_t n);
    void (*sub)(const double* a, const double* b, double* out, std::size_t n);
    void (*mul)(const double* a, const double* b, double* out, std::size_t n);
    void (*scale)(double c, const double* x, double* out, std::size_t n);
    // y += c * x
    void (*axpy)(double c, const double* x, double* y, std::size_t n);

    // Reductions, four interleaved accumulators (lane i holds indices == i mod 4).
    double (*dot)(const double* a, const double* b, std::size_t n);
    double (*sum)(const double* x, std::size_t n);

    // Matrix products over row-major storage. All ACCUMULATE into c
    // (callers zero c first when they want an overwrite).
    //   matmul_nn: c(m×n) += a(m×k) · b(k×n)
    //   matmul_nt: c(m×n) += a(m×k) · b(n×k)ᵀ
    //   matmul_tn: c(m×n) += a(k×m)ᵀ · b(k×n)
    void (*matmul_nn)(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n);
    void (*matmul_nt)(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n);
    void (*matmul_tn)(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n);

    void (*leaky_relu)(double slope, const double* x, double* out, std::size_t n);
    // gx += gy * (x > 0 ? 1 : slope)
    void (*leaky_relu_grad)(double slope, const double* x, const double* gy,
                            double* gx, std::size_t n);

    // Optimizer updates, applied in place. Bias corrections for Adam are
    // precomputed by the caller: bc1 = 1-beta1^t, bc2 = 1-beta2^t.
    void (*adam_update)(double lr, double eps, double bc1, double bc2,
                        double beta1, double beta2,
                        double* p, const double* g, double* m, double* v,
                        std::size_t n);
    void (*adadelta_update)(double lr, double rho, double eps,
                            double* p, const double* g, double* accum_g,
                            double* accum_dx, std::size_t n);
};

const Backend& scalar_backend();

// Null when this build/CPU cannot run AVX2.
const Backend* avx2_backend();

// Currently selected backend. Defaults to the widest variant the CPU
// supports; the MTMS_KERNELS environment variable ("scalar"/"avx2") or
// select() override that.
const Backend& active();

// name: "scalar", "avx2", or "auto". Throws std::invalid_argument for an
// unknown name or an unavailable variant.
void select(const std::string& name);

std::vector<const Backend*> available();

} // namespace mtms::kernels
