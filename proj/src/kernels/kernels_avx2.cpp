// AVX2/FMA variants of the f64 kernels. This translation unit is compiled
// with -mavx2 -mfma on x86-64 only; dispatch.cpp checks CPU support at
// runtime before handing these out. Results can differ from the scalar
// reference in the last ulp (FMA contraction, 4-lane partial sums); the
// equivalence suite bounds that difference.

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cstddef>

#include "etma/kernels.hpp"

namespace etma::kernels {
namespace {

void add_avx2(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_avx2(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_avx2(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void mul_add_avx2(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d acc = _mm256_loadu_pd(out + i);
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
        _mm256_storeu_pd(out + i, acc);
    }
    for (; i < n; ++i) out[i] += a[i] * b[i];
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d acc = _mm256_loadu_pd(y + i);
        acc = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), acc);
        _mm256_storeu_pd(y + i, acc);
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale_avx2(double alpha, double* x, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(x + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    }
    for (; i < n; ++i) x[i] *= alpha;
}

double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d shuf = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, shuf));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
    }
    double out = hsum(acc);
    for (; i < n; ++i) out += a[i] * b[i];
    return out;
}

double sum_avx2(const double* x, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    double out = hsum(acc);
    for (; i < n; ++i) out += x[i];
    return out;
}

double max_avx2(const double* x, std::size_t n) {
    if (n < 4) {
        double m = x[0];
        for (std::size_t i = 1; i < n; ++i) m = x[i] > m ? x[i] : m;
        return m;
    }
    __m256d acc = _mm256_loadu_pd(x);
    std::size_t i = 4;
    for (; i + 4 <= n; i += 4) acc = _mm256_max_pd(acc, _mm256_loadu_pd(x + i));
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, acc);
    double m = lanes[0];
    for (int l = 1; l < 4; ++l) m = lanes[l] > m ? lanes[l] : m;
    for (; i < n; ++i) m = x[i] > m ? x[i] : m;
    return m;
}

// Rank-1 update form: for each (i, l), C row i += A[i][l] * B row l,
// vectorized over j.
void matmul_nn_avx2(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* c_row = c + i * n;
        for (std::size_t l = 0; l < k; ++l) {
            const __m256d a_il = _mm256_set1_pd(a[i * k + l]);
            const double* b_row = b + l * n;
            std::size_t j = 0;
            for (; j + 4 <= n; j += 4) {
                __m256d acc = _mm256_loadu_pd(c_row + j);
                acc = _mm256_fmadd_pd(a_il, _mm256_loadu_pd(b_row + j), acc);
                _mm256_storeu_pd(c_row + j, acc);
            }
            const double a_s = a[i * k + l];
            for (; j < n; ++j) c_row[j] += a_s * b_row[j];
        }
    }
}

void matmul_nt_avx2(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* a_row = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            c[i * n + j] += dot_avx2(a_row, b + j * k, k);
        }
    }
}

void matmul_tn_avx2(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
    for (std::size_t l = 0; l < k; ++l) {
        const double* a_row = a + l * m;
        const double* b_row = b + l * n;
        for (std::size_t i = 0; i < m; ++i) {
            const __m256d a_li = _mm256_set1_pd(a_row[i]);
            double* c_row = c + i * n;
            std::size_t j = 0;
            for (; j + 4 <= n; j += 4) {
                __m256d acc = _mm256_loadu_pd(c_row + j);
                acc = _mm256_fmadd_pd(a_li, _mm256_loadu_pd(b_row + j), acc);
                _mm256_storeu_pd(c_row + j, acc);
            }
            for (; j < n; ++j) c_row[j] += a_row[i] * b_row[j];
        }
    }
}

}  // namespace

const Backend* avx2_backend_impl() {
    static const Backend backend = {
        "avx2",         add_avx2,       sub_avx2,       mul_avx2,       mul_add_avx2,
        axpy_avx2,      scale_avx2,     dot_avx2,       sum_avx2,       max_avx2,
        matmul_nn_avx2, matmul_nt_avx2, matmul_tn_avx2,
    };
    return &backend;
}

}  // namespace etma::kernels

#endif  // x86-64
