#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "etma/nn.hpp"

using namespace etma;
using namespace etma::nn;

namespace {

void zero_param(Tensor t) {
    for (auto& v : t.data()) v = 0.0;
}

Tensor random_tokens(Rng& rng, std::size_t n, std::size_t d) {
    return Tensor::uniform({n, d}, rng, -1.5, 1.5);
}

}  // namespace

TEST_CASE("attention with zeroed query/key weights is a uniform average") {
    Rng rng(2);
    MultiHeadSelfAttention msa(8, 2, rng);
    zero_param(msa.wq.weight);
    zero_param(msa.wq.bias);
    zero_param(msa.wk.weight);
    zero_param(msa.wk.bias);

    Tensor x = random_tokens(rng, 5, 8);
    std::vector<Tensor> weights;
    Tensor out = msa.forward(x, nullptr, &weights);

    REQUIRE(weights.size() == 2);
    for (const Tensor& w : weights)
        for (double v : w.data()) CHECK(v == doctest::Approx(0.2).epsilon(1e-12));

    // Every output row equals wo applied to the mean value row.
    Tensor v = msa.wv.forward(x);
    Tensor mean_v = reshape(mean(v, 0), {1, 8});
    Tensor want = msa.wo.forward(mean_v);
    for (std::size_t r = 0; r < 5; ++r)
        for (std::size_t c = 0; c < 8; ++c)
            CHECK(out.data()[r * 8 + c] == doctest::Approx(want.data()[c]).epsilon(1e-9));
}

TEST_CASE("single-token attention puts weight exactly 1 on its only key") {
    Rng rng(3);
    MultiHeadSelfAttention msa(6, 3, rng);
    Tensor x = random_tokens(rng, 1, 6);
    std::vector<Tensor> weights;
    Tensor out = msa.forward(x, nullptr, &weights);
    for (const Tensor& w : weights) {
        REQUIRE(w.size() == 1);
        CHECK(w.data()[0] == 1.0);
    }
    Tensor want = msa.wo.forward(msa.wv.forward(x));
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out.data()[i] == want.data()[i]);
}

TEST_CASE("masked key positions receive exactly zero weight from every query") {
    Rng rng(4);
    MultiHeadSelfAttention msa(8, 2, rng);
    Tensor x = random_tokens(rng, 2, 8);
    Mask mask = {1, 0};
    std::vector<Tensor> weights;
    msa.forward(x, &mask, &weights);
    for (const Tensor& w : weights) {
        for (std::size_t q = 0; q < 2; ++q) {
            CHECK(w.data()[q * 2 + 1] == 0.0);
            CHECK(w.data()[q * 2 + 0] == 1.0);
        }
    }
}

TEST_CASE("attention rows sum to 1 over unmasked keys for every head and layer") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        EncoderBlock block(16, 4, 2, 0.0, rng);
        Tensor x = random_tokens(rng, 7, 16);
        Mask mask = {1, 1, 1, 1, 1, 0, 0};
        std::vector<Tensor> weights;
        block.forward(x, &mask, false, nullptr, &weights);
        REQUIRE(weights.size() == 4);
        for (const Tensor& w : weights) {
            for (std::size_t q = 0; q < 7; ++q) {
                double total = 0;
                for (std::size_t k = 0; k < 7; ++k) total += w.data()[q * 7 + k];
                CHECK(std::abs(total - 1.0) < 1e-9);
                CHECK(w.data()[q * 7 + 5] == 0.0);
                CHECK(w.data()[q * 7 + 6] == 0.0);
            }
        }
    }
}

TEST_CASE("attention rejects a head count that does not divide the dim") {
    Rng rng(6);
    CHECK_THROWS_AS(MultiHeadSelfAttention(10, 3, rng), ConfigError);
}

TEST_CASE("encoder block with zeroed output projections is the identity") {
    Rng rng(7);
    EncoderBlock block(12, 3, 4, 0.0, rng);
    zero_param(block.msa.wo.weight);
    zero_param(block.msa.wo.bias);
    zero_param(block.mlp.fc2.weight);
    zero_param(block.mlp.fc2.bias);

    Tensor x = random_tokens(rng, 6, 12);
    Tensor y = block.forward(x, nullptr, false, nullptr);
    REQUIRE(y.shape() == x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("encoder block preserves shape on a 17x64 sequence") {
    Rng rng(8);
    EncoderBlock block(64, 4, 4, 0.0, rng);
    Tensor x = random_tokens(rng, 17, 64);
    CHECK(block.forward(x, nullptr, false, nullptr).shape() == Shape{17, 64});
}

TEST_CASE("encoder block gradients pass finite differences") {
    Rng rng(9);
    EncoderBlock block(8, 2, 2, 0.0, rng);
    Tensor x = random_tokens(rng, 4, 8);
    x.set_requires_grad();

    auto loss = [&] { return sum(block.forward(x, nullptr, false, nullptr)); };
    CHECK(finite_difference_check(loss, x) < 1e-5);

    ParamList params;
    block.collect("block", params);
    for (const auto& p : params) {
        INFO("param: " << p.name);
        CHECK(finite_difference_check(loss, p.tensor) < 1e-5);
    }
}

TEST_CASE("layernorm: constant token, standardization, scale invariance") {
    LayerNorm ln(3);
    Tensor constant = Tensor::from({1, 3}, {5, 5, 5});
    Tensor out = ln.forward(constant);
    for (double v : out.data()) CHECK(v == 0.0);

    Tensor x = Tensor::from({1, 3}, {1, 2, 3});
    Tensor y = ln.forward(x);
    const double m = (y.data()[0] + y.data()[1] + y.data()[2]) / 3.0;
    double var = 0;
    for (double v : y.data()) var += (v - m) * (v - m);
    var /= 3.0;
    CHECK(std::abs(m) < 1e-9);
    CHECK(std::abs(var - 1.0) < 1e-4);  // eps shifts the variance slightly

    Tensor x10 = Tensor::from({1, 3}, {10, 20, 30});
    Tensor y10 = ln.forward(x10);
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(y10.data()[i] - y.data()[i]) < 1e-6);
}

TEST_CASE("layernorm pre-affine rows have tiny mean on random input") {
    Rng rng(10);
    for (int trial = 0; trial < 25; ++trial) {
        Tensor x = Tensor::uniform({5, 9}, rng, -4, 4);
        Tensor y = layernorm_rows(x, 1e-5);
        for (std::size_t r = 0; r < 5; ++r) {
            double mu = 0;
            for (std::size_t c = 0; c < 9; ++c) mu += y.data()[r * 9 + c];
            CHECK(std::abs(mu / 9.0) < 1e-9);
        }
    }
}

TEST_CASE("dropout: identity in eval, identity at p=0, unbiased at p=0.5") {
    Rng rng(11);
    Tensor x = Tensor::uniform({10}, rng, -1, 1);

    Dropout off(0.5);
    Tensor eval_out = off.apply(x, false, nullptr);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(eval_out.data()[i] == x.data()[i]);

    Dropout zero(0.0);
    Tensor zero_out = zero.apply(x, true, &rng);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(zero_out.data()[i] == x.data()[i]);

    // Inverted dropout keeps the expectation: mean over 1e5 draws within 2%.
    Dropout half(0.5);
    Tensor ones = Tensor::full({100}, 1.0);
    double total = 0;
    const int trials = 1000;
    for (int t = 0; t < trials; ++t) {
        Tensor out = half.apply(ones, true, &rng);
        for (double v : out.data()) total += v;
    }
    CHECK(std::abs(total / (100.0 * trials) - 1.0) < 0.02);

    CHECK_THROWS_AS(Dropout(1.0), ConfigError);
    CHECK_THROWS_AS(Dropout(-0.1), ConfigError);
}

TEST_CASE("linear rejects mismatched input dims") {
    Rng rng(12);
    Linear lin(4, 6, rng);
    CHECK_THROWS_AS(lin.forward(Tensor::zeros({2, 5})), ConfigError);
    CHECK(lin.forward(Tensor::zeros({2, 4})).shape() == Shape{2, 6});
}

TEST_CASE("mlp applies its nonlinearity between the two affine maps") {
    Rng rng(13);
    MlpBlock mlp(4, 8, rng);
    Tensor x = Tensor::uniform({3, 4}, rng, -1, 1);
    Tensor want = mlp.fc2.forward(gelu(mlp.fc1.forward(x)));
    Tensor got = mlp.forward(x);
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got.data()[i] == want.data()[i]);
}
