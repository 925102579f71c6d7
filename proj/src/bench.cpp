#include "etma/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "etma/kernels.hpp"

namespace etma {

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

TimingStats stats_from(std::vector<double> ms) {
    std::sort(ms.begin(), ms.end());
    TimingStats s;
    double sum = 0;
    for (double v : ms) sum += v;
    s.mean_ms = sum / double(ms.size());
    const auto rank = [&](double q) {
        const auto idx = static_cast<std::size_t>(std::ceil(q * double(ms.size())));
        return ms[std::min(ms.size() - 1, idx == 0 ? 0 : idx - 1)];
    };
    s.p50_ms = rank(0.50);
    s.p95_ms = rank(0.95);
    return s;
}

}  // namespace

TimingReport time_model(const EtmaModel& model, const std::vector<PreparedSample>& samples,
                        const ChannelStats& norm, std::size_t trials, std::size_t warmup) {
    if (samples.empty()) throw ContractError("time_model: need at least one sample");
    if (trials < 30) throw ConfigError("time_model: need at least 30 trials");

    // Preprocessing stays outside the clock.
    std::vector<PreparedSample> prepared = samples;
    for (auto& s : prepared) s.image = normalize_image(s.image, norm);

    using clock = std::chrono::steady_clock;
    std::vector<double> feature_ms, testing_ms;
    feature_ms.reserve(trials);
    testing_ms.reserve(trials);
    double sink = 0.0;

    for (std::size_t t = 0; t < warmup + trials; ++t) {
        const PreparedSample& s = prepared[t % prepared.size()];
        const auto t0 = clock::now();
        Tensor fused = model.features(s);
        const auto t1 = clock::now();
        Tensor probs = model.classify(fused);
        const auto t2 = clock::now();
        sink += probs.data()[0];
        if (t < warmup) continue;
        feature_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        testing_ms.push_back(std::chrono::duration<double, std::milli>(t2 - t0).count());
    }
    (void)sink;

    TimingReport report;
    report.feature = stats_from(std::move(feature_ms));
    report.testing = stats_from(std::move(testing_ms));
    report.trials = trials;
    report.warmup = warmup;
    report.machine_note = std::string("single-threaded, kernels=") + kernels::active().name +
                          "; preprocessing (tokenization, normalization) excluded";
    return report;
}

std::string timing_jsonl(const TimingReport& r) {
    nlohmann::ordered_json j;
    j["feature_ms_per_sample"] = {
        {"mean", r.feature.mean_ms}, {"p50", r.feature.p50_ms}, {"p95", r.feature.p95_ms}};
    j["testing_ms_per_sample"] = {
        {"mean", r.testing.mean_ms}, {"p50", r.testing.p50_ms}, {"p95", r.testing.p95_ms}};
    j["trials"] = r.trials;
    j["warmup"] = r.warmup;
    j["machine_note"] = r.machine_note;
    return j.dump() + "\n";
}

std::string timing_csv(const TimingReport& r) {
    std::string out = "stage,mean_ms,p50_ms,p95_ms\n";
    out += "feature_formulation," + fmt_double(r.feature.mean_ms) + "," +
           fmt_double(r.feature.p50_ms) + "," + fmt_double(r.feature.p95_ms) + "\n";
    out += "testing," + fmt_double(r.testing.mean_ms) + "," + fmt_double(r.testing.p50_ms) + "," +
           fmt_double(r.testing.p95_ms) + "\n";
    return out;
}

AblationTable run_ablation_suite(const TrainConfig& base_config,
                                 const std::vector<MultimodalSample>& samples,
                                 const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    const SplitIndices split = split_dataset(samples.size(), base_config.split_spec());
    if (split.train.empty() || split.test.empty())
        throw ContractError("ablation: splits leave no training or test data");

    const StopwordSet stopwords = resolve_stopwords(base_config, out_dir);
    const Vocabulary vocab =
        build_vocabulary(samples, split.train, stopwords, base_config.min_token_freq);

    TrainConfig shared = base_config;
    shared.model.vocab_size = vocab.size();
    shared.norm = compute_channel_stats(samples, split.train);
    shared.has_norm = true;

    const auto pick = [&](const std::vector<std::size_t>& idx) {
        std::vector<MultimodalSample> subset;
        subset.reserve(idx.size());
        for (std::size_t i : idx) subset.push_back(samples[i]);
        return subset;
    };
    const auto train_set =
        prepare_samples(pick(split.train), vocab, shared.model.n_max, stopwords);
    const auto val_set = prepare_samples(pick(split.val), vocab, shared.model.n_max, stopwords);
    const auto test_set = prepare_samples(pick(split.test), vocab, shared.model.n_max, stopwords);

    AblationTable table;
    for (Variant v : kAllVariants) {
        TrainConfig config = shared;
        config.variant = variant_label(v);
        auto model = build_model(config);
        const auto ckpt_path = out_dir / (config.variant + std::string(".etma"));
        FitResult result = fit(*model, train_set, val_set, config, ckpt_path);

        LoadedCheckpoint best = load_checkpoint(ckpt_path);
        const auto scores =
            score_model(*best.model, test_set, config.norm, configured_eval_threads());
        table.rows.push_back(
            {config.variant, evaluate(scores).accuracy, result.best.val_accuracy});
    }
    return table;
}

std::string ablation_jsonl(const AblationTable& table) {
    std::string out;
    for (const auto& row : table.rows) {
        nlohmann::ordered_json j;
        j["variant"] = row.variant;
        j["test_accuracy"] = row.accuracy;
        j["val_accuracy"] = row.val_accuracy;
        out += j.dump() + "\n";
    }
    return out;
}

std::string ablation_csv(const AblationTable& table) {
    std::string out = "variant,test_accuracy,val_accuracy\n";
    for (const auto& row : table.rows)
        out += row.variant + "," + fmt_double(row.accuracy) + "," + fmt_double(row.val_accuracy) +
               "\n";
    return out;
}

}  // namespace etma
