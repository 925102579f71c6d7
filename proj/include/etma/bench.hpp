#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "etma/metrics.hpp"
#include "etma/train.hpp"

namespace etma {

struct TimingStats {
    double mean_ms = 0, p50_ms = 0, p95_ms = 0;
};

struct TimingReport {
    TimingStats feature;  // embedders + encoders + joint attention
    TimingStats testing;  // the full forward pass
    std::size_t trials = 0;
    std::size_t warmup = 0;
    std::string machine_note;
};

/// Per-sample latency over `trials` single-threaded eval forwards on a
/// monotonic clock, cycling through the given samples; `warmup` iterations
/// are discarded. Both phases are clocked inside the same trial, so testing
/// time >= feature time holds per trial. Preprocessing (tokenization,
/// normalization) happens before the clock starts.
TimingReport time_model(const EtmaModel& model, const std::vector<PreparedSample>& samples,
                        const ChannelStats& norm, std::size_t trials, std::size_t warmup = 5);

std::string timing_jsonl(const TimingReport& report);
std::string timing_csv(const TimingReport& report);

struct AblationRow {
    std::string variant;
    double accuracy = 0;  // test-split accuracy
    double val_accuracy = 0;
};

struct AblationTable {
    std::vector<AblationRow> rows;  // one per variant, fixed order
};

/// Trains every variant with the same config, seed, and splits, then scores
/// each on the test split. Checkpoints land in out_dir as <variant>.etma.
AblationTable run_ablation_suite(const TrainConfig& base_config,
                                 const std::vector<MultimodalSample>& samples,
                                 const std::filesystem::path& out_dir);

std::string ablation_jsonl(const AblationTable& table);
std::string ablation_csv(const AblationTable& table);

}  // namespace etma
