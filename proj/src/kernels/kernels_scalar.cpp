#include <cstddef>

#include "etma/kernels.hpp"

// Scalar reference kernels. Loop orders are chosen so the AVX2 variants can
// keep the same per-element accumulation sequence: matmul_nn and matmul_tn
// run i-k-j (rank-1 updates of C rows), matmul_nt is a dot per C element.

namespace etma::kernels {
namespace {

void add_scalar(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_scalar(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_scalar(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void mul_add_scalar(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] += a[i] * b[i];
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void scale_scalar(double alpha, double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= alpha;
}

double dot_scalar(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

double sum_scalar(const double* x, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

double max_scalar(const double* x, std::size_t n) {
    double m = x[0];
    for (std::size_t i = 1; i < n; ++i) {
        if (x[i] > m) m = x[i];
    }
    return m;
}

void matmul_nn_scalar(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                      std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* c_row = c + i * n;
        for (std::size_t l = 0; l < k; ++l) {
            const double a_il = a[i * k + l];
            const double* b_row = b + l * n;
            for (std::size_t j = 0; j < n; ++j) c_row[j] += a_il * b_row[j];
        }
    }
}

void matmul_nt_scalar(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                      std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* a_row = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            c[i * n + j] += dot_scalar(a_row, b + j * k, k);
        }
    }
}

void matmul_tn_scalar(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                      std::size_t n) {
    for (std::size_t l = 0; l < k; ++l) {
        const double* a_row = a + l * m;
        const double* b_row = b + l * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double a_li = a_row[i];
            double* c_row = c + i * n;
            for (std::size_t j = 0; j < n; ++j) c_row[j] += a_li * b_row[j];
        }
    }
}

}  // namespace

const Backend& scalar_backend() {
    static const Backend backend = {
        "scalar",         add_scalar,       sub_scalar,       mul_scalar,
        mul_add_scalar,   axpy_scalar,      scale_scalar,     dot_scalar,
        sum_scalar,       max_scalar,       matmul_nn_scalar, matmul_nt_scalar,
        matmul_tn_scalar,
    };
    return backend;
}

}  // namespace etma::kernels
