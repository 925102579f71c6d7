#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "etma/common.hpp"
#include "etma/kernels.hpp"
#include "etma/rng.hpp"

using namespace etma;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n, double lo = -2.0, double hi = 2.0) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.next_uniform(lo, hi);
    return v;
}

void check_close(const std::vector<double>& a, const std::vector<double>& b, double tol) {
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double scale = std::max(1.0, std::max(std::abs(a[i]), std::abs(b[i])));
        REQUIRE(std::abs(a[i] - b[i]) <= tol * scale);
    }
}

}  // namespace

TEST_CASE("scalar matmul_nn matches a naive triple loop") {
    Rng rng(11);
    const std::size_t m = 5, k = 7, n = 6;
    const auto a = random_vec(rng, m * k);
    const auto b = random_vec(rng, k * n);
    std::vector<double> c(m * n, 0.0), ref(m * n, 0.0);
    kernels::scalar_backend().matmul_nn(a.data(), b.data(), c.data(), m, k, n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t l = 0; l < k; ++l) ref[i * n + j] += a[i * k + l] * b[l * n + j];
    check_close(c, ref, 1e-14);
}

TEST_CASE("scalar matmul_nt and matmul_tn agree with explicit transposes") {
    Rng rng(12);
    const std::size_t m = 4, k = 9, n = 5;
    const auto a = random_vec(rng, m * k);   // [m x k]
    const auto bt = random_vec(rng, n * k);  // [n x k], used as B^T
    std::vector<double> c(m * n, 0.0), ref(m * n, 0.0);
    kernels::scalar_backend().matmul_nt(a.data(), bt.data(), c.data(), m, k, n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t l = 0; l < k; ++l) ref[i * n + j] += a[i * k + l] * bt[j * k + l];
    check_close(c, ref, 1e-14);

    const auto at = random_vec(rng, k * m);  // [k x m], used as A^T
    const auto b = random_vec(rng, k * n);
    std::vector<double> c2(m * n, 0.0), ref2(m * n, 0.0);
    kernels::scalar_backend().matmul_tn(at.data(), b.data(), c2.data(), m, k, n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t l = 0; l < k; ++l) ref2[i * n + j] += at[l * m + i] * b[l * n + j];
    check_close(c2, ref2, 1e-14);
}

TEST_CASE("every available backend matches the scalar reference") {
    const auto& backends = kernels::available_backends();
    REQUIRE(!backends.empty());
    CHECK(std::string(backends.front()->name) == "scalar");

    const auto& ref = kernels::scalar_backend();
    // Sizes straddle the 4-lane vector width to exercise the tails.
    const std::size_t sizes[] = {1, 2, 3, 4, 5, 7, 8, 15, 16, 33, 64, 67, 256, 1000};

    for (const kernels::Backend* b : backends) {
        INFO("backend: " << b->name);
        Rng rng(99);
        for (std::size_t n : sizes) {
            const auto x = random_vec(rng, n);
            const auto y = random_vec(rng, n);

            std::vector<double> got(n), want(n);
            b->add(x.data(), y.data(), got.data(), n);
            ref.add(x.data(), y.data(), want.data(), n);
            check_close(got, want, 1e-15);

            b->sub(x.data(), y.data(), got.data(), n);
            ref.sub(x.data(), y.data(), want.data(), n);
            check_close(got, want, 1e-15);

            b->mul(x.data(), y.data(), got.data(), n);
            ref.mul(x.data(), y.data(), want.data(), n);
            check_close(got, want, 1e-15);

            got = y;
            want = y;
            b->mul_add(x.data(), y.data(), got.data(), n);
            ref.mul_add(x.data(), y.data(), want.data(), n);
            check_close(got, want, 1e-13);

            got = y;
            want = y;
            b->axpy(0.37, x.data(), got.data(), n);
            ref.axpy(0.37, x.data(), want.data(), n);
            check_close(got, want, 1e-13);

            got = x;
            want = x;
            b->scale(-1.25, got.data(), n);
            ref.scale(-1.25, want.data(), n);
            check_close(got, want, 1e-15);

            CHECK(b->dot(x.data(), y.data(), n) ==
                  doctest::Approx(ref.dot(x.data(), y.data(), n)).epsilon(1e-12));
            CHECK(b->sum(x.data(), n) == doctest::Approx(ref.sum(x.data(), n)).epsilon(1e-12));
            CHECK(b->max(x.data(), n) == ref.max(x.data(), n));
        }

        // Matmuls on shapes that are not lane multiples.
        for (auto [m, k, n] : {std::tuple<std::size_t, std::size_t, std::size_t>{3, 5, 7},
                               {8, 8, 8},
                               {13, 17, 19},
                               {1, 64, 1},
                               {33, 2, 65}}) {
            const auto a = random_vec(rng, m * k);
            const auto bb = random_vec(rng, k * n);
            std::vector<double> got(m * n, 0.5), want(m * n, 0.5);
            b->matmul_nn(a.data(), bb.data(), got.data(), m, k, n);
            ref.matmul_nn(a.data(), bb.data(), want.data(), m, k, n);
            check_close(got, want, 1e-12);

            const auto bt = random_vec(rng, n * k);
            std::fill(got.begin(), got.end(), 0.0);
            std::fill(want.begin(), want.end(), 0.0);
            b->matmul_nt(a.data(), bt.data(), got.data(), m, k, n);
            ref.matmul_nt(a.data(), bt.data(), want.data(), m, k, n);
            check_close(got, want, 1e-12);

            const auto at = random_vec(rng, k * m);
            std::fill(got.begin(), got.end(), 0.0);
            std::fill(want.begin(), want.end(), 0.0);
            b->matmul_tn(at.data(), bb.data(), got.data(), m, k, n);
            ref.matmul_tn(at.data(), bb.data(), want.data(), m, k, n);
            check_close(got, want, 1e-12);
        }
    }
}

TEST_CASE("matmul kernels accumulate into the output") {
    const double a[4] = {1, 2, 3, 4};  // 2x2
    const double b[4] = {1, 0, 0, 1};
    std::vector<double> c = {10, 10, 10, 10};
    kernels::scalar_backend().matmul_nn(a, b, c.data(), 2, 2, 2);
    CHECK(c == std::vector<double>{11, 12, 13, 14});
}

TEST_CASE("backend selection") {
    const std::string original = kernels::active().name;
    kernels::select("scalar");
    CHECK(std::string(kernels::active().name) == "scalar");
    CHECK_THROWS_AS(kernels::select("no-such-backend"), ConfigError);
    kernels::select(original);
}
