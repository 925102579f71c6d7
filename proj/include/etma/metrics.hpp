#pragma once

#include <string>
#include <vector>

#include "etma/data.hpp"
#include "etma/model.hpp"

namespace etma {

/// One scored sample: the model's fake probability and the true label
/// (fake = positive class).
struct BinaryScore {
    double fake_prob = 0.0;
    int label = 0;
};

struct ConfusionMatrix {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

    /// Hard predictions at threshold 0.5 (fake when fake_prob >= 0.5).
    static ConfusionMatrix from(const std::vector<BinaryScore>& scores);
    std::size_t total() const { return tp + fp + tn + fn; }
};

struct ClassMetrics {
    double precision = 0, recall = 0, f1 = 0;  // zero denominators yield 0
};

struct MetricsReport {
    double accuracy = 0;
    ClassMetrics real, fake;
    double roc_auc = 0, pr_auc = 0;
    bool auc_defined = false;  // false when only one class is present
};

struct CurvePoint {
    double threshold = 0;
    double x = 0;  // ROC: FPR; PR: recall
    double y = 0;  // ROC: TPR; PR: precision
};

struct Curve {
    std::vector<CurvePoint> points;
    double auc = 0;
};

/// Threshold sweep over distinct scores, descending; tied scores collapse
/// into one point. ROC AUC by the trapezoidal rule.
Curve roc_curve(const std::vector<BinaryScore>& scores);
/// Step-wise (right-continuous rectangle) PR AUC.
Curve pr_curve(const std::vector<BinaryScore>& scores);

MetricsReport evaluate(const std::vector<BinaryScore>& scores);

/// Eval-mode fake probabilities for every sample, in input order. Fans out
/// over `threads` workers against the frozen model; results are reduced in
/// index order, so the output is identical at any width.
std::vector<BinaryScore> score_model(const EtmaModel& model,
                                     const std::vector<PreparedSample>& samples,
                                     const ChannelStats& norm, unsigned threads = 1);

/// Honors ETMA_THREADS (minimum 1) as the evaluation fan-out cap.
unsigned configured_eval_threads();

std::string metrics_jsonl(const MetricsReport& report);
/// Header plus one row: accuracy, then P/R/F1 for real, then for fake.
std::string metrics_csv(const MetricsReport& report);
std::string roc_csv(const Curve& curve);  // threshold,fpr,tpr
std::string pr_csv(const Curve& curve);   // threshold,recall,precision

}  // namespace etma
