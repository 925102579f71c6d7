#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "etma/data.hpp"
#include "etma/model.hpp"

namespace etma {

/// Non-finite loss or another numeric breakdown during optimization.
struct NumericError : Error {
    using Error::Error;
};
/// Checkpoint and inputs disagree (config hash, shapes, preprocessing).
struct CompatibilityError : Error {
    using Error::Error;
};

struct TrainConfig {
    ModelConfig model;
    double lr = 1e-3;
    std::size_t batch_size = 32;
    std::size_t epochs = 30;
    std::string optimizer = "adam";
    std::string loss = "cross_entropy";
    std::uint64_t seed = 7;
    double train_frac = 0.8, val_frac = 0.1, test_frac = 0.1;
    bool augment = false;
    std::size_t min_token_freq = 1;
    std::string variant = "full";
    std::string vocab_file;     // resolved relative to the config/checkpoint location
    std::string stopword_file;  // empty = built-in list
    ChannelStats norm;
    bool has_norm = false;  // stats resolved from the training split during fit

    /// Named presets: "desk" (the synthetic benchmark scale) and the four
    /// tuned 224x224 configurations "twitter", "jruvika", "pontes", "risdal".
    static TrainConfig preset(const std::string& name);

    /// `key = value` lines; a `preset` key (applied first) seeds defaults.
    /// Unknown keys are an error.
    static TrainConfig parse_file(const std::filesystem::path& path);
    static TrainConfig parse(const std::string& text, const std::string& origin = "config");

    /// Sorted `key = value` lines, doubles at full round-trip precision.
    std::string canonical_text() const;
    std::uint64_t hash() const;  // FNV-1a over canonical_text()

    SplitSpec split_spec() const { return {train_frac, val_frac, test_frac, seed}; }
};

/// Per-parameter moment estimates; beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
class Adam {
public:
    explicit Adam(double lr) : lr_(lr) {}

    void step(const nn::ParamList& params);

    double lr_ = 1e-3;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

/// -sum_j y_j log p_j with one-hot y; probs is the [1 x 2] classifier output.
Tensor cross_entropy(const Tensor& probs, int label);

struct EpochStats {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0, train_acc = 0, val_loss = 0, val_acc = 0;
    double ms = 0;  // wall clock, excluded from determinism comparisons
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    std::size_t selected_epoch = 0;  // argmax val accuracy, earliest on ties
};

/// JSON-lines, one record per epoch:
/// {"epoch":..,"train_loss":..,"train_acc":..,"val_loss":..,"val_acc":..,"ms":..}
std::string train_report_jsonl(const TrainReport& report);
/// CSV of the learning curves: epoch,train_loss,train_acc,val_loss,val_acc.
std::string train_report_curves_csv(const TrainReport& report);

// ---- checkpoints -----------------------------------------------------------
// One file: magic "ETMC", u16 version, variant label, config hash, epoch,
// val accuracy, the canonical config text, then named parameters in the
// tensor-core binary format.

inline constexpr std::uint16_t kCheckpointFormatVersion = 1;

struct CheckpointMeta {
    std::string variant;
    std::uint64_t config_hash = 0;
    std::uint32_t epoch = 0;
    double val_accuracy = 0.0;
};

void save_checkpoint(const std::filesystem::path& path, const EtmaModel& model,
                     const TrainConfig& config, const CheckpointMeta& meta);

struct LoadedCheckpoint {
    CheckpointMeta meta;
    TrainConfig config;
    std::shared_ptr<EtmaModel> model;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Fresh model with parameters drawn from the config's seed (stream 0; the
/// training loop consumes stream 1).
std::shared_ptr<EtmaModel> build_model(const TrainConfig& config);

// ---- fitting ------------------------------------------------------------------

PreparedSample prepare_sample(const MultimodalSample& sample, const Vocabulary& vocab,
                              std::size_t n_max, const StopwordSet& stopwords);
std::vector<PreparedSample> prepare_samples(const std::vector<MultimodalSample>& samples,
                                            const Vocabulary& vocab, std::size_t n_max,
                                            const StopwordSet& stopwords);

/// Vocabulary over the training-split texts only.
Vocabulary build_vocabulary(const std::vector<MultimodalSample>& samples,
                            const std::vector<std::size_t>& train_indices,
                            const StopwordSet& stopwords, std::size_t min_freq);

/// The configured stopword file (resolved against base_dir) or the built-in
/// list when none is named.
StopwordSet resolve_stopwords(const TrainConfig& config, const std::filesystem::path& base_dir);

struct FitResult {
    TrainReport report;
    CheckpointMeta best;
};

/// Epoch loop: seeded shuffle, minibatches (final partial batch kept),
/// batch-mean loss, Adam step; a validation pass per epoch; the checkpoint
/// at `checkpoint_path` is rewritten whenever validation accuracy improves.
/// Aborts with NumericError on a non-finite loss.
FitResult fit(EtmaModel& model, const std::vector<PreparedSample>& train_set,
              const std::vector<PreparedSample>& val_set, TrainConfig& config,
              const std::filesystem::path& checkpoint_path);

}  // namespace etma
