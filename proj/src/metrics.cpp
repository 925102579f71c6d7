#include "etma/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <thread>

#include <json.hpp>

namespace etma {

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double safe_ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

void require_both_classes(const std::vector<BinaryScore>& scores, const char* what) {
    bool pos = false, neg = false;
    for (const auto& s : scores) (s.label == 1 ? pos : neg) = true;
    if (!pos || !neg)
        throw ContractError(std::string(what) + ": undefined when only one class is present");
}

}  // namespace

ConfusionMatrix ConfusionMatrix::from(const std::vector<BinaryScore>& scores) {
    ConfusionMatrix cm;
    for (const auto& s : scores) {
        const bool pred_fake = s.fake_prob >= 0.5;
        const bool is_fake = s.label == 1;
        if (pred_fake && is_fake) ++cm.tp;
        else if (pred_fake && !is_fake) ++cm.fp;
        else if (!pred_fake && is_fake) ++cm.fn;
        else ++cm.tn;
    }
    return cm;
}

Curve roc_curve(const std::vector<BinaryScore>& scores) {
    if (scores.empty()) throw ContractError("roc_curve: empty score list");
    require_both_classes(scores, "roc_curve");

    std::vector<BinaryScore> sorted = scores;
    std::sort(sorted.begin(), sorted.end(),
              [](const BinaryScore& a, const BinaryScore& b) { return a.fake_prob > b.fake_prob; });

    double total_pos = 0, total_neg = 0;
    for (const auto& s : sorted) (s.label == 1 ? total_pos : total_neg) += 1.0;

    Curve curve;
    curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    double tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < sorted.size()) {
        const double score = sorted[i].fake_prob;
        for (; i < sorted.size() && sorted[i].fake_prob == score; ++i)
            (sorted[i].label == 1 ? tp : fp) += 1.0;
        curve.points.push_back({score, fp / total_neg, tp / total_pos});
    }

    double auc = 0.0;
    for (std::size_t p = 1; p < curve.points.size(); ++p) {
        const auto& a = curve.points[p - 1];
        const auto& b = curve.points[p];
        auc += (b.x - a.x) * (a.y + b.y) * 0.5;
    }
    curve.auc = auc;
    return curve;
}

Curve pr_curve(const std::vector<BinaryScore>& scores) {
    if (scores.empty()) throw ContractError("pr_curve: empty score list");
    require_both_classes(scores, "pr_curve");

    std::vector<BinaryScore> sorted = scores;
    std::sort(sorted.begin(), sorted.end(),
              [](const BinaryScore& a, const BinaryScore& b) { return a.fake_prob > b.fake_prob; });

    double total_pos = 0;
    for (const auto& s : sorted)
        if (s.label == 1) total_pos += 1.0;

    Curve curve;
    curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 1.0});
    double tp = 0, fp = 0, prev_recall = 0.0, auc = 0.0;
    std::size_t i = 0;
    while (i < sorted.size()) {
        const double score = sorted[i].fake_prob;
        for (; i < sorted.size() && sorted[i].fake_prob == score; ++i)
            (sorted[i].label == 1 ? tp : fp) += 1.0;
        const double recall = tp / total_pos;
        const double precision = tp / (tp + fp);
        curve.points.push_back({score, recall, precision});
        auc += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    curve.auc = auc;
    return curve;
}

MetricsReport evaluate(const std::vector<BinaryScore>& scores) {
    if (scores.empty()) throw ContractError("evaluate: empty score list");
    const ConfusionMatrix cm = ConfusionMatrix::from(scores);

    MetricsReport report;
    report.accuracy = safe_ratio(double(cm.tp + cm.tn), double(cm.total()));

    report.fake.precision = safe_ratio(double(cm.tp), double(cm.tp + cm.fp));
    report.fake.recall = safe_ratio(double(cm.tp), double(cm.tp + cm.fn));
    report.fake.f1 = safe_ratio(2.0 * report.fake.precision * report.fake.recall,
                                report.fake.precision + report.fake.recall);

    // Real as the positive class: predictions and labels flip.
    report.real.precision = safe_ratio(double(cm.tn), double(cm.tn + cm.fn));
    report.real.recall = safe_ratio(double(cm.tn), double(cm.tn + cm.fp));
    report.real.f1 = safe_ratio(2.0 * report.real.precision * report.real.recall,
                                report.real.precision + report.real.recall);

    bool pos = false, neg = false;
    for (const auto& s : scores) (s.label == 1 ? pos : neg) = true;
    if (pos && neg) {
        report.roc_auc = roc_curve(scores).auc;
        report.pr_auc = pr_curve(scores).auc;
        report.auc_defined = true;
    }
    return report;
}

std::vector<BinaryScore> score_model(const EtmaModel& model,
                                     const std::vector<PreparedSample>& samples,
                                     const ChannelStats& norm, unsigned threads) {
    std::vector<BinaryScore> scores(samples.size());
    const auto worker = [&](unsigned w) {
        for (std::size_t i = w; i < samples.size(); i += threads) {
            PreparedSample view = samples[i];
            view.image = normalize_image(samples[i].image, norm);
            ForwardTrace trace = model.forward(view);
            scores[i] = {trace.probs.data()[1], samples[i].label};
        }
    };
    if (threads <= 1) {
        worker(0);
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < threads; ++w) pool.emplace_back(worker, w);
        for (auto& t : pool) t.join();
    }
    return scores;
}

unsigned configured_eval_threads() {
    if (const char* env = std::getenv("ETMA_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1 && v <= 64) return static_cast<unsigned>(v);
    }
    return 1;
}

std::string metrics_jsonl(const MetricsReport& r) {
    nlohmann::ordered_json j;
    j["accuracy"] = r.accuracy;
    j["real"] = {{"precision", r.real.precision}, {"recall", r.real.recall}, {"f1", r.real.f1}};
    j["fake"] = {{"precision", r.fake.precision}, {"recall", r.fake.recall}, {"f1", r.fake.f1}};
    if (r.auc_defined) {
        j["roc_auc"] = r.roc_auc;
        j["pr_auc"] = r.pr_auc;
    } else {
        j["roc_auc"] = nullptr;
        j["pr_auc"] = nullptr;
    }
    return j.dump() + "\n";
}

std::string metrics_csv(const MetricsReport& r) {
    std::string out = "accuracy,real_precision,real_recall,real_f1,fake_precision,fake_recall,fake_f1\n";
    out += fmt_double(r.accuracy) + "," + fmt_double(r.real.precision) + "," +
           fmt_double(r.real.recall) + "," + fmt_double(r.real.f1) + "," +
           fmt_double(r.fake.precision) + "," + fmt_double(r.fake.recall) + "," +
           fmt_double(r.fake.f1) + "\n";
    return out;
}

namespace {

std::string curve_csv(const Curve& curve, const char* header) {
    std::string out = header;
    out += "\n";
    for (const auto& p : curve.points) {
        const std::string thr = std::isinf(p.threshold) ? "inf" : fmt_double(p.threshold);
        out += thr + "," + fmt_double(p.x) + "," + fmt_double(p.y) + "\n";
    }
    return out;
}

}  // namespace

std::string roc_csv(const Curve& curve) { return curve_csv(curve, "threshold,fpr,tpr"); }
std::string pr_csv(const Curve& curve) { return curve_csv(curve, "threshold,recall,precision"); }

}  // namespace etma
