#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "etma/model.hpp"

using namespace etma;

namespace {

ModelConfig toy_config() {
    ModelConfig cfg;
    cfg.image_size = 8;
    cfg.patch = 4;
    cfg.dim = 8;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.joint_dim = 8;
    cfg.n_max = 6;
    cfg.mlp_ratio = 2;
    cfg.vocab_size = 12;
    cfg.dropout = 0.0;
    return cfg;
}

PreparedSample toy_sample(Rng& rng, const ModelConfig& cfg, int label = 0) {
    PreparedSample s;
    s.id = "toy";
    s.image = Tensor::uniform({cfg.image_size, cfg.image_size, cfg.channels}, rng, -1, 1);
    s.token_ids = {Vocabulary::kCls, 5, 7, 9, 0, 0};
    s.token_mask = {1, 1, 1, 1, 0, 0};
    s.label = label;
    return s;
}

void zero(Tensor t) {
    for (auto& v : t.data()) v = 0;
}

}  // namespace

TEST_CASE("variant labels round-trip") {
    for (Variant v : kAllVariants) CHECK(variant_from_label(variant_label(v)) == v);
    CHECK_THROWS_AS(variant_from_label("nope"), ConfigError);
}

TEST_CASE("cross-modal attention: single region gets weight exactly 1") {
    Rng rng(1);
    VisualSemanticAttention vs(6, 4, rng);
    Tensor region = Tensor::uniform({1, 6}, rng, -1, 1);
    Tensor text = Tensor::uniform({1, 6}, rng, -1, 1);
    auto out = vs.forward(region, text);
    REQUIRE(out.weights.size() == 1);
    CHECK(out.weights.data()[0] == 1.0);
    for (std::size_t i = 0; i < 6; ++i) CHECK(out.attended.data()[i] == region.data()[i]);
}

TEST_CASE("cross-modal attention: identical regions get uniform weights") {
    Rng rng(2);
    VisualSemanticAttention vs(5, 3, rng);
    Tensor one = Tensor::uniform({1, 5}, rng, -1, 1);
    std::vector<double> data;
    for (int r = 0; r < 4; ++r) data.insert(data.end(), one.data().begin(), one.data().end());
    Tensor regions = Tensor::from({4, 5}, std::move(data));
    Tensor text = Tensor::uniform({1, 5}, rng, -1, 1);
    auto out = vs.forward(regions, text);
    for (double w : out.weights.data()) CHECK(w == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("cross-modal attention: hand-evaluated two-region case") {
    Rng rng(3);
    VisualSemanticAttention vs(3, 1, rng);
    // Pick projections so the pre-softmax scores come out at +-0.5:
    // score_r = tanh(regions[r][0] * text[0]), and atanh(0.5) = 0.54930614.
    zero(vs.img_proj);
    zero(vs.txt_proj);
    vs.img_proj.data()[0] = 1.0;  // joint feature = first region coordinate
    vs.txt_proj.data()[0] = 1.0;  // times first text coordinate
    vs.score_w.data()[0] = 1.0;
    vs.score_b.data()[0] = 0.0;

    const double a = 0.5493061443340549;
    Tensor regions = Tensor::from({2, 3}, {a, 2, 3, -a, 4, 5});
    Tensor text = Tensor::from({1, 3}, {1.0, 9, 9});
    auto out = vs.forward(regions, text);

    CHECK(std::abs(out.weights.data()[0] - 0.7311) < 1e-4);
    CHECK(std::abs(out.weights.data()[1] - 0.2689) < 1e-4);
    CHECK(out.attended.data()[1] == doctest::Approx(0.7311 * 2).epsilon(1e-4));
    CHECK(out.attended.data()[4] == doctest::Approx(0.2689 * 4).epsilon(1e-4));
}

TEST_CASE("cross-modal attention is equivariant under region permutation") {
    Rng rng(4);
    VisualSemanticAttention vs(6, 6, rng);
    Tensor regions = Tensor::uniform({5, 6}, rng, -1, 1);
    Tensor text = Tensor::uniform({1, 6}, rng, -1, 1);
    auto base = vs.forward(regions, text);

    const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
    std::vector<double> permuted(5 * 6);
    for (std::size_t r = 0; r < 5; ++r)
        for (std::size_t c = 0; c < 6; ++c)
            permuted[r * 6 + c] = regions.data()[perm[r] * 6 + c];
    auto moved = vs.forward(Tensor::from({5, 6}, std::move(permuted)), text);

    for (std::size_t r = 0; r < 5; ++r) {
        CHECK(std::abs(moved.weights.data()[r] - base.weights.data()[perm[r]]) < 1e-12);
        for (std::size_t c = 0; c < 6; ++c)
            CHECK(std::abs(moved.attended.data()[r * 6 + c] -
                           base.attended.data()[perm[r] * 6 + c]) < 1e-12);
    }
}

TEST_CASE("fusion: singleton, identical pair, zeroed scoring") {
    Rng rng(5);
    SelfAttentionFusion fusion(4, 3, rng);

    Tensor single = Tensor::uniform({1, 4}, rng, -1, 1);
    auto s = fusion.forward(single);
    CHECK(s.weights.data()[0] == 1.0);
    for (std::size_t i = 0; i < 4; ++i) CHECK(s.fused.data()[i] == single.data()[i]);

    Tensor one = Tensor::uniform({1, 4}, rng, -1, 1);
    std::vector<double> two(one.data().begin(), one.data().end());
    two.insert(two.end(), one.data().begin(), one.data().end());
    auto pair = fusion.forward(Tensor::from({2, 4}, std::move(two)));
    CHECK(pair.weights.data()[0] == doctest::Approx(0.5).epsilon(1e-12));
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(pair.fused.data()[i] == doctest::Approx(one.data()[i]).epsilon(1e-12));

    zero(fusion.proj);
    Tensor feats = Tensor::uniform({3, 4}, rng, -2, 2);
    auto uniform = fusion.forward(feats);
    for (double w : uniform.weights.data())
        CHECK(w == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    Tensor want = mean(feats, 0);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(uniform.fused.data()[i] == doctest::Approx(want.data()[i]).epsilon(1e-12));

    CHECK_THROWS_AS(fusion.forward(Tensor::zeros({0, 4})), ContractError);
}

TEST_CASE("all seven variants emit valid probability pairs on a toy sample") {
    const ModelConfig cfg = toy_config();
    Rng data_rng(6);
    for (Variant v : kAllVariants) {
        Rng init(7);
        EtmaModel model(cfg, v, init);
        PreparedSample s = toy_sample(data_rng, cfg);
        ForwardTrace trace = model.forward(s);
        REQUIRE(trace.probs.size() == 2);
        const double p0 = trace.probs.data()[0], p1 = trace.probs.data()[1];
        CHECK(std::isfinite(p0));
        CHECK(std::isfinite(p1));
        CHECK(p0 > 0.0);
        CHECK(p0 < 1.0);
        CHECK(p1 > 0.0);
        CHECK(p1 < 1.0);
        CHECK(std::abs(p0 + p1 - 1.0) <= 1e-12);
    }
}

TEST_CASE("eval-mode forward is a pure function") {
    const ModelConfig cfg = toy_config();
    Rng init(8);
    EtmaModel model(cfg, Variant::Full, init);
    Rng data_rng(9);
    PreparedSample s = toy_sample(data_rng, cfg);
    ForwardTrace a = model.forward(s);
    ForwardTrace b = model.forward(s);
    for (std::size_t i = 0; i < 2; ++i) CHECK(a.probs.data()[i] == b.probs.data()[i]);
    for (std::size_t i = 0; i < a.region_weights.size(); ++i)
        CHECK(a.region_weights.data()[i] == b.region_weights.data()[i]);
}

TEST_CASE("the full variant strictly out-counts every ablated variant") {
    const ModelConfig cfg = toy_config();
    Rng init(10);
    EtmaModel full(cfg, Variant::Full, init);
    const std::size_t full_count = full.parameter_count();
    for (Variant v : kAllVariants) {
        if (v == Variant::Full) continue;
        Rng r(10);
        EtmaModel ablated(cfg, v, r);
        INFO("variant: " << variant_label(v));
        CHECK(ablated.parameter_count() < full_count);
    }
}

TEST_CASE("text-only forward ignores the image entirely") {
    const ModelConfig cfg = toy_config();
    Rng init(11);
    EtmaModel model(cfg, Variant::TextOnly, init);
    Rng data_rng(12);
    PreparedSample s = toy_sample(data_rng, cfg);
    ForwardTrace a = model.forward(s);
    for (auto& v : s.image.data()) v += 5.0;  // scribble over every pixel
    ForwardTrace b = model.forward(s);
    CHECK(a.probs.data()[0] == b.probs.data()[0]);
    CHECK(a.probs.data()[1] == b.probs.data()[1]);
}

TEST_CASE("image-only forward ignores the text") {
    const ModelConfig cfg = toy_config();
    Rng init(13);
    EtmaModel model(cfg, Variant::ImageOnly, init);
    Rng data_rng(14);
    PreparedSample s = toy_sample(data_rng, cfg);
    ForwardTrace a = model.forward(s);
    s.token_ids = {Vocabulary::kCls, 1, 2, 3, 4, 5};
    s.token_mask = {1, 1, 1, 1, 1, 1};
    ForwardTrace b = model.forward(s);
    CHECK(a.probs.data()[0] == b.probs.data()[0]);
}

TEST_CASE("no component is dead at initialization") {
    const ModelConfig cfg = toy_config();
    Rng init(15);
    EtmaModel model(cfg, Variant::Full, init);
    Rng data_rng(16);

    model.zero_grad();
    for (int i = 0; i < 4; ++i) {
        PreparedSample s = toy_sample(data_rng, cfg, i % 2);
        ForwardTrace trace = model.forward(s);
        std::vector<double> onehot = {s.label == 0 ? 1.0 : 0.0, s.label == 1 ? 1.0 : 0.0};
        Tensor loss = mul(sum(mul(log_clamped(trace.probs), Tensor::from({1, 2}, onehot))),
                          Tensor::scalar(-1.0));
        backward(loss);
    }

    const std::vector<std::string> components = {"visual.", "text.", "joint.vs.",
                                                 "joint.fusion.", "head."};
    for (const auto& comp : components) {
        bool alive = false;
        for (const auto& p : model.parameters()) {
            if (p.name.rfind(comp, 0) != 0) continue;
            for (double g : p.tensor.grad()) alive |= g != 0.0;
        }
        INFO("component: " << comp);
        CHECK(alive);
    }
}

TEST_CASE("full-model gradient passes finite differences on a toy sample") {
    const ModelConfig cfg = toy_config();
    Rng init(17);
    EtmaModel model(cfg, Variant::Full, init);
    Rng data_rng(18);
    PreparedSample s = toy_sample(data_rng, cfg, 1);

    auto loss = [&] {
        ForwardTrace t = model.forward(s);
        return mul(sum(mul(log_clamped(t.probs), Tensor::from({1, 2}, {0.0, 1.0}))),
                   Tensor::scalar(-1.0));
    };
    // Spot-check one parameter per component; the acceptance suite sweeps
    // all of them over many seeds.
    for (const auto& p : model.parameters()) {
        if (p.name == "visual.embed.cls" || p.name == "text.embed.seg" ||
            p.name == "joint.vs.img_proj" || p.name == "joint.fusion.w" ||
            p.name == "head.fc.b" || p.name == "visual.block0.msa.wq.w") {
            INFO("param: " << p.name);
            CHECK(finite_difference_check(loss, p.tensor) < 1e-5);
        }
    }
}

TEST_CASE("forward rejects images that do not match the configured size") {
    const ModelConfig cfg = toy_config();
    Rng init(19);
    EtmaModel model(cfg, Variant::Full, init);
    PreparedSample s;
    s.image = Tensor::zeros({16, 16, 3});
    s.token_ids = {2, 0, 0, 0, 0, 0};
    s.token_mask = {1, 0, 0, 0, 0, 0};
    CHECK_THROWS_AS(model.forward(s), ConfigError);
}

TEST_CASE("model config validation") {
    ModelConfig bad = toy_config();
    bad.patch = 3;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = toy_config();
    bad.heads = 3;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = toy_config();
    bad.vocab_size = 0;
    Rng r(1);
    CHECK_THROWS_AS(EtmaModel(bad, Variant::Full, r), ConfigError);
}
