#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "etma/metrics.hpp"
#include "etma/rng.hpp"

using namespace etma;

namespace {

// Independent oracle: AUC as the probability that a random positive
// outranks a random negative, ties counted half.
double pairwise_auc(const std::vector<BinaryScore>& scores) {
    double wins = 0, pairs = 0;
    for (const auto& p : scores) {
        if (p.label != 1) continue;
        for (const auto& n : scores) {
            if (n.label != 0) continue;
            pairs += 1;
            if (p.fake_prob > n.fake_prob) wins += 1;
            else if (p.fake_prob == n.fake_prob) wins += 0.5;
        }
    }
    return wins / pairs;
}

std::vector<BinaryScore> random_scores(Rng& rng, std::size_t n, bool with_ties) {
    std::vector<BinaryScore> scores;
    bool saw[2] = {false, false};
    for (std::size_t i = 0; i < n; ++i) {
        double s = rng.next_uniform();
        if (with_ties && rng.next_below(3) == 0) s = std::round(s * 8) / 8;  // force collisions
        const int label = static_cast<int>(rng.next_below(2));
        saw[label] = true;
        scores.push_back({s, label});
    }
    // Guarantee both classes.
    if (!saw[0]) scores[0].label = 0;
    if (!saw[1]) scores[scores.size() > 1 ? 1 : 0].label = 1;
    return scores;
}

}  // namespace

TEST_CASE("confusion-matrix arithmetic on a worked example") {
    // tp=2 fp=1 fn=1 tn=1.
    std::vector<BinaryScore> scores = {
        {0.9, 1}, {0.8, 1},  // true positives
        {0.7, 0},            // false positive
        {0.2, 1},            // false negative
        {0.1, 0},            // true negative
    };
    const ConfusionMatrix cm = ConfusionMatrix::from(scores);
    CHECK(cm.tp == 2);
    CHECK(cm.fp == 1);
    CHECK(cm.fn == 1);
    CHECK(cm.tn == 1);

    const MetricsReport r = evaluate(scores);
    CHECK(r.accuracy == doctest::Approx(3.0 / 5.0));
    CHECK(r.fake.precision == doctest::Approx(2.0 / 3.0));
    CHECK(r.fake.recall == doctest::Approx(2.0 / 3.0));
    CHECK(r.fake.f1 == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("perfect predictions score 1 everywhere") {
    std::vector<BinaryScore> scores = {{0.9, 1}, {0.95, 1}, {0.1, 0}, {0.2, 0}};
    const MetricsReport r = evaluate(scores);
    CHECK(r.accuracy == 1.0);
    CHECK(r.real.precision == 1.0);
    CHECK(r.real.recall == 1.0);
    CHECK(r.real.f1 == 1.0);
    CHECK(r.fake.precision == 1.0);
    CHECK(r.fake.recall == 1.0);
    CHECK(r.fake.f1 == 1.0);
    CHECK(r.roc_auc == 1.0);
    CHECK(r.pr_auc == 1.0);
}

TEST_CASE("a degenerate all-fake predictor has recall 1 on fake, 0 on real") {
    std::vector<BinaryScore> scores = {{0.9, 1}, {0.8, 0}, {0.7, 1}, {0.6, 0}};
    const MetricsReport r = evaluate(scores);
    CHECK(r.fake.recall == 1.0);
    CHECK(r.real.recall == 0.0);
    CHECK(r.real.precision == 0.0);  // zero-denominator convention
    CHECK(r.real.f1 == 0.0);
}

TEST_CASE("roc auc equals 0.75 on the four-point worked example") {
    std::vector<BinaryScore> scores = {{0.1, 0}, {0.4, 0}, {0.35, 1}, {0.8, 1}};
    CHECK(roc_curve(scores).auc == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(pairwise_auc(scores) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("a random ranker lands near auc 0.5") {
    Rng rng(31);
    std::vector<BinaryScore> scores;
    for (std::size_t i = 0; i < 1000; ++i)
        scores.push_back({rng.next_uniform(), static_cast<int>(rng.next_below(2))});
    const double auc = roc_curve(scores).auc;
    CHECK(std::abs(auc - 0.5) < 0.05);
}

TEST_CASE("trapezoidal auc equals the pairwise oracle, ties included") {
    Rng rng(32);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 2 + rng.next_below(31);
        const auto scores = random_scores(rng, n, trial % 2 == 0);
        const Curve c = roc_curve(scores);
        CHECK(std::abs(c.auc - pairwise_auc(scores)) < 1e-9);
        CHECK(c.auc >= 0.0);
        CHECK(c.auc <= 1.0);
        // ROC points climb monotonically in both coordinates.
        for (std::size_t i = 1; i < c.points.size(); ++i) {
            CHECK(c.points[i].x >= c.points[i - 1].x);
            CHECK(c.points[i].y >= c.points[i - 1].y);
        }
        CHECK(c.points.front().x == 0.0);
        CHECK(c.points.back().x == 1.0);
        CHECK(c.points.back().y == 1.0);
    }
}

TEST_CASE("auc is invariant under strictly increasing transforms") {
    Rng rng(33);
    for (int trial = 0; trial < 50; ++trial) {
        auto scores = random_scores(rng, 24, true);
        const double base = roc_curve(scores).auc;
        auto squashed = scores;
        for (auto& s : squashed) s.fake_prob = 1.0 / (1.0 + std::exp(-5.0 * s.fake_prob));
        CHECK(roc_curve(squashed).auc == doctest::Approx(base).epsilon(1e-12));
    }
}

TEST_CASE("reversing labels maps auc to its complement when scores are distinct") {
    Rng rng(34);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<BinaryScore> scores;
        for (std::size_t i = 0; i < 20; ++i)
            scores.push_back({(double(i) + rng.next_uniform() * 0.5) / 21.0,
                              static_cast<int>(rng.next_below(2))});
        scores[0].label = 0;
        scores[1].label = 1;
        auto flipped = scores;
        for (auto& s : flipped) s.label = 1 - s.label;
        CHECK(roc_curve(flipped).auc ==
              doctest::Approx(1.0 - roc_curve(scores).auc).epsilon(1e-9));
    }
}

TEST_CASE("evaluate is permutation invariant") {
    Rng rng(35);
    auto scores = random_scores(rng, 40, true);
    const MetricsReport a = evaluate(scores);
    rng.shuffle(scores);
    const MetricsReport b = evaluate(scores);
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.fake.f1 == b.fake.f1);
    CHECK(a.roc_auc == b.roc_auc);
    CHECK(a.pr_auc == b.pr_auc);
}

TEST_CASE("pr auc: separable scores reach 1; step rule on a worked example") {
    std::vector<BinaryScore> sep = {{0.9, 1}, {0.8, 1}, {0.2, 0}, {0.1, 0}};
    CHECK(pr_curve(sep).auc == doctest::Approx(1.0).epsilon(1e-12));

    // Descending sweep of {0.8:pos, 0.4:neg, 0.35:pos, 0.1:neg}:
    //   r=0.5 p=1.0; r=0.5 p=0.5; r=1.0 p=2/3; r=1.0 p=0.5
    // step auc = 0.5 * 1.0 + 0.5 * 2/3 = 5/6.
    std::vector<BinaryScore> mixed = {{0.1, 0}, {0.4, 0}, {0.35, 1}, {0.8, 1}};
    CHECK(pr_curve(mixed).auc == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("degenerate inputs raise contract errors") {
    CHECK_THROWS_AS(evaluate({}), ContractError);
    std::vector<BinaryScore> one_class = {{0.9, 1}, {0.8, 1}};
    CHECK_THROWS_AS(roc_curve(one_class), ContractError);
    CHECK_THROWS_AS(pr_curve(one_class), ContractError);
    const MetricsReport r = evaluate(one_class);
    CHECK(!r.auc_defined);
    CHECK(r.accuracy == 1.0);
}

TEST_CASE("csv and jsonl emission carry the right headers") {
    std::vector<BinaryScore> scores = {{0.9, 1}, {0.1, 0}};
    const MetricsReport r = evaluate(scores);
    const std::string csv = metrics_csv(r);
    CHECK(csv.find("accuracy,real_precision,real_recall,real_f1,fake_precision,fake_recall,"
                   "fake_f1") == 0);
    const std::string jsonl = metrics_jsonl(r);
    CHECK(jsonl.find("\"accuracy\"") != std::string::npos);
    const std::string roc = roc_csv(roc_curve(scores));
    CHECK(roc.find("threshold,fpr,tpr") == 0);
    const std::string pr = pr_csv(pr_curve(scores));
    CHECK(pr.find("threshold,recall,precision") == 0);
}
