#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace etma::kernels {

/// Dispatch table for the f64 inner loops the tensor layer runs hot:
/// elementwise arithmetic, reductions, and the three matmul layouts that
/// cover forward passes and both backward rules. All matmul kernels
/// ACCUMULATE into C; callers zero C when they want a plain product.
/// Transcendentals (exp, erf, tanh, log) stay scalar at the tensor layer.
struct Backend {
    const char* name;

    void (*add)(const double* a, const double* b, double* out, std::size_t n);
    void (*sub)(const double* a, const double* b, double* out, std::size_t n);
    void (*mul)(const double* a, const double* b, double* out, std::size_t n);
    // out += a * b
    void (*mul_add)(const double* a, const double* b, double* out, std::size_t n);
    // y += alpha * x
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    void (*scale)(double alpha, double* x, std::size_t n);
    double (*dot)(const double* a, const double* b, std::size_t n);
    double (*sum)(const double* x, std::size_t n);
    double (*max)(const double* x, std::size_t n);

    // C[m x n] += A[m x k] * B[k x n]
    void (*matmul_nn)(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                      std::size_t n);
    // C[m x n] += A[m x k] * B[n x k]^T
    void (*matmul_nt)(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                      std::size_t n);
    // C[m x n] += A[k x m]^T * B[k x n]
    void (*matmul_tn)(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                      std::size_t n);
};

/// Portable reference kernels; the ground truth the SIMD variants are
/// equivalence-tested against.
const Backend& scalar_backend();

/// Backends usable on this machine (scalar first). AVX2+FMA is included
/// when the binary carries it and the CPU reports support.
const std::vector<const Backend*>& available_backends();

/// The backend every tensor op routes through. Defaults to the last entry
/// of available_backends(); the ETMA_KERNELS environment variable
/// ("scalar", "avx2") pins it at startup.
const Backend& active();

/// Select by name; throws ConfigError if the backend is not available.
void select(const std::string& name);

}  // namespace etma::kernels
