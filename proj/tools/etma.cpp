// Command-line front end: gen-data, train, eval, ablate, bench, viz-attn.
// Exit codes: 0 success, 2 usage or input error, 3 numeric failure,
// 4 checkpoint/data compatibility error.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "etma/bench.hpp"
#include "etma/data.hpp"
#include "etma/kernels.hpp"
#include "etma/metrics.hpp"
#include "etma/model.hpp"
#include "etma/train.hpp"

namespace fs = std::filesystem;
using namespace etma;

namespace {

struct CommonOpts {
    std::string config_path, data_dir, out_dir, checkpoint_path;
    std::string spec_path, split = "test", variant, sample_id;
    std::size_t trials = 100, warmup = 5;
    bool force = false;
    std::optional<std::uint64_t> seed;
};

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void echo_config(const TrainConfig& config) {
    std::cout << "resolved config:\n" << config.canonical_text();
    std::cout << "config_hash = " << config.hash() << "\n";
    std::cout << "kernels = " << kernels::active().name << "\n";
}

struct Pipeline {
    TrainConfig config;
    Vocabulary vocab;
    StopwordSet stopwords;
    SplitIndices split;
    std::vector<MultimodalSample> samples;
};

std::vector<MultimodalSample> subset(const std::vector<MultimodalSample>& samples,
                                     const std::vector<std::size_t>& idx) {
    std::vector<MultimodalSample> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(samples[i]);
    return out;
}

// Loads the dataset, builds (or loads) the vocabulary, resolves
// normalization stats - everything fit() and the sweeps need.
Pipeline open_pipeline(TrainConfig config, const fs::path& data_dir, const fs::path& base_dir) {
    Pipeline p;
    p.samples = load_dataset(data_dir);
    if (p.samples.empty()) throw IoError("dataset is empty: " + data_dir.string());
    p.split = split_dataset(p.samples.size(), config.split_spec());
    p.stopwords = resolve_stopwords(config, base_dir);
    if (!config.vocab_file.empty()) {
        fs::path vp(config.vocab_file);
        if (vp.is_relative()) vp = base_dir / vp;
        p.vocab = Vocabulary::load(vp);
    } else {
        p.vocab = build_vocabulary(p.samples, p.split.train, p.stopwords, config.min_token_freq);
    }
    config.model.vocab_size = p.vocab.size();
    if (!config.has_norm) {
        config.norm = compute_channel_stats(p.samples, p.split.train);
        config.has_norm = true;
    }
    p.config = std::move(config);
    return p;
}

void check_dataset_compat(const TrainConfig& config, const std::vector<MultimodalSample>& samples) {
    const Tensor& img = samples.front().image;
    if (img.rank() != 3 || img.dim(0) != config.model.image_size ||
        img.dim(1) != config.model.image_size || img.dim(2) != config.model.channels)
        throw CompatibilityError("dataset images are " + shape_str(img.shape()) +
                                 " but the checkpoint was trained for " +
                                 std::to_string(config.model.image_size) + "x" +
                                 std::to_string(config.model.image_size) + "x" +
                                 std::to_string(config.model.channels));
}

// ---- subcommands -----------------------------------------------------------

void run_gen_data(const CommonOpts& opts) {
    SyntheticSpec spec = synthetic_spec_from_json(read_file(opts.spec_path));
    if (opts.seed) spec.seed = *opts.seed;
    std::cout << "resolved spec: " << synthetic_spec_to_json(spec) << "\n";
    std::cout << "seed = " << spec.seed << "\n";

    const auto samples = generate_synthetic(spec);
    write_dataset(opts.out_dir, samples, &spec, opts.force);
    std::cout << "wrote " << samples.size() << " samples to " << opts.out_dir << "\n";
}

void run_train(const CommonOpts& opts) {
    TrainConfig base = TrainConfig::parse_file(opts.config_path);
    if (!opts.variant.empty()) base.variant = opts.variant;
    if (opts.seed) base.seed = *opts.seed;
    variant_from_label(base.variant);

    const fs::path out_dir(opts.out_dir);
    fs::create_directories(out_dir);
    Pipeline p = open_pipeline(std::move(base), opts.data_dir,
                               fs::path(opts.config_path).parent_path());

    // The checkpoint carries the vocabulary path relative to its own
    // directory, so eval can rebuild the exact preprocessing.
    p.vocab.save(out_dir / "vocab.txt");
    p.config.vocab_file = "vocab.txt";
    echo_config(p.config);

    const auto train_set =
        prepare_samples(subset(p.samples, p.split.train), p.vocab, p.config.model.n_max,
                        p.stopwords);
    const auto val_set = prepare_samples(subset(p.samples, p.split.val), p.vocab,
                                         p.config.model.n_max, p.stopwords);

    auto model = build_model(p.config);
    FitResult result = fit(*model, train_set, val_set, p.config, out_dir / "checkpoint.etma");

    atomic_write_file(out_dir / "report.jsonl", train_report_jsonl(result.report));
    atomic_write_file(out_dir / "curves.csv", train_report_curves_csv(result.report));
    std::cout << "selected epoch " << result.report.selected_epoch << ", val accuracy "
              << result.best.val_accuracy << "\n";
    std::cout << "checkpoint: " << (out_dir / "checkpoint.etma").string() << "\n";
}

void run_eval(const CommonOpts& opts) {
    LoadedCheckpoint ckpt = load_checkpoint(opts.checkpoint_path);
    echo_config(ckpt.config);

    const auto samples = load_dataset(opts.data_dir);
    if (samples.empty()) throw IoError("dataset is empty: " + opts.data_dir);
    check_dataset_compat(ckpt.config, samples);

    const SplitIndices split = split_dataset(samples.size(), ckpt.config.split_spec());
    const std::vector<std::size_t>* idx = nullptr;
    if (opts.split == "train") idx = &split.train;
    else if (opts.split == "val") idx = &split.val;
    else if (opts.split == "test") idx = &split.test;
    else throw ConfigError("unknown split '" + opts.split + "'");
    if (idx->empty()) throw ContractError("split '" + opts.split + "' is empty");

    const fs::path base_dir = fs::path(opts.checkpoint_path).parent_path();
    const StopwordSet stopwords = resolve_stopwords(ckpt.config, base_dir);
    fs::path vocab_path(ckpt.config.vocab_file.empty() ? "vocab.txt" : ckpt.config.vocab_file);
    if (vocab_path.is_relative()) vocab_path = base_dir / vocab_path;
    if (!fs::exists(vocab_path))
        throw CompatibilityError("vocabulary file missing next to checkpoint: " +
                                 vocab_path.string());
    const Vocabulary vocab = Vocabulary::load(vocab_path);
    if (vocab.size() != ckpt.config.model.vocab_size)
        throw CompatibilityError("vocabulary size " + std::to_string(vocab.size()) +
                                 " does not match checkpoint config " +
                                 std::to_string(ckpt.config.model.vocab_size));

    const auto set = prepare_samples(subset(samples, *idx), vocab, ckpt.config.model.n_max,
                                     stopwords);
    const auto scores =
        score_model(*ckpt.model, set, ckpt.config.norm, configured_eval_threads());
    const MetricsReport report = evaluate(scores);

    const fs::path out_dir(opts.out_dir);
    fs::create_directories(out_dir);
    atomic_write_file(out_dir / "metrics.jsonl", metrics_jsonl(report));
    atomic_write_file(out_dir / "metrics.csv", metrics_csv(report));
    if (report.auc_defined) {
        atomic_write_file(out_dir / "roc.csv", roc_csv(roc_curve(scores)));
        atomic_write_file(out_dir / "pr.csv", pr_csv(pr_curve(scores)));
    } else {
        std::cout << "warning: split has a single class; AUC and curves omitted\n";
    }
    std::cout << "split = " << opts.split << ", accuracy = " << report.accuracy << "\n";
}

void run_ablate(const CommonOpts& opts) {
    TrainConfig config = TrainConfig::parse_file(opts.config_path);
    if (opts.seed) config.seed = *opts.seed;
    echo_config(config);

    const auto samples = load_dataset(opts.data_dir);
    const fs::path out_dir(opts.out_dir);
    fs::create_directories(out_dir);

    AblationTable table = run_ablation_suite(config, samples, out_dir);
    atomic_write_file(out_dir / "ablation.csv", ablation_csv(table));
    atomic_write_file(out_dir / "ablation.jsonl", ablation_jsonl(table));
    std::cout << ablation_csv(table);
}

void run_bench(const CommonOpts& opts) {
    LoadedCheckpoint ckpt = load_checkpoint(opts.checkpoint_path);
    echo_config(ckpt.config);

    const auto samples = load_dataset(opts.data_dir);
    if (samples.empty()) throw IoError("dataset is empty: " + opts.data_dir);
    check_dataset_compat(ckpt.config, samples);

    const fs::path base_dir = fs::path(opts.checkpoint_path).parent_path();
    const StopwordSet stopwords = resolve_stopwords(ckpt.config, base_dir);
    fs::path vocab_path(ckpt.config.vocab_file.empty() ? "vocab.txt" : ckpt.config.vocab_file);
    if (vocab_path.is_relative()) vocab_path = base_dir / vocab_path;
    const Vocabulary vocab = Vocabulary::load(vocab_path);

    std::vector<MultimodalSample> pool(samples.begin(),
                                       samples.begin() + std::min<std::size_t>(samples.size(), 64));
    const auto prepared = prepare_samples(pool, vocab, ckpt.config.model.n_max, stopwords);
    const TimingReport report =
        time_model(*ckpt.model, prepared, ckpt.config.norm, opts.trials, opts.warmup);

    const fs::path out_dir(opts.out_dir);
    fs::create_directories(out_dir);
    atomic_write_file(out_dir / "bench.jsonl", timing_jsonl(report));
    atomic_write_file(out_dir / "bench.csv", timing_csv(report));
    std::cout << timing_csv(report);
    std::cout << "note: " << report.machine_note << "\n";
}

void run_viz_attn(const CommonOpts& opts) {
    LoadedCheckpoint ckpt = load_checkpoint(opts.checkpoint_path);
    echo_config(ckpt.config);

    const Variant variant = variant_from_label(ckpt.meta.variant);
    if (variant == Variant::TextOnly || variant == Variant::ImageOnly ||
        variant == Variant::NoVsAttn)
        throw ConfigError("variant '" + ckpt.meta.variant +
                          "' has no visual-semantic attention weights to visualize");

    const auto samples = load_dataset(opts.data_dir);
    check_dataset_compat(ckpt.config, samples);
    const MultimodalSample* sample = nullptr;
    for (const auto& s : samples)
        if (s.id == opts.sample_id) sample = &s;
    if (!sample) throw IoError("sample id '" + opts.sample_id + "' not found in " + opts.data_dir);

    const fs::path base_dir = fs::path(opts.checkpoint_path).parent_path();
    const StopwordSet stopwords = resolve_stopwords(ckpt.config, base_dir);
    fs::path vocab_path(ckpt.config.vocab_file.empty() ? "vocab.txt" : ckpt.config.vocab_file);
    if (vocab_path.is_relative()) vocab_path = base_dir / vocab_path;
    const Vocabulary vocab = Vocabulary::load(vocab_path);

    PreparedSample view = prepare_sample(*sample, vocab, ckpt.config.model.n_max, stopwords);
    view.image = normalize_image(view.image, ckpt.config.norm);
    ForwardTrace trace = ckpt.model->forward(view);

    const fs::path out_dir(opts.out_dir);
    fs::create_directories(out_dir);

    // (a) region weights as a grayscale heatmap, nearest-neighbor upsampled,
    // rescaled so the strongest region is 255.
    const auto alpha = trace.region_weights.data();
    const std::size_t grid =
        static_cast<std::size_t>(std::llround(std::sqrt(double(alpha.size()))));
    const std::size_t size = ckpt.config.model.image_size;
    double alpha_max = 0.0;
    for (double a : alpha) alpha_max = std::max(alpha_max, a);
    std::string pgm = "P5\n" + std::to_string(size) + " " + std::to_string(size) + "\n255\n";
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const std::size_t r = std::min(grid - 1, y * grid / size) * grid +
                                  std::min(grid - 1, x * grid / size);
            const long v = std::lround(alpha[r] / alpha_max * 255.0);
            pgm.push_back(static_cast<char>(static_cast<unsigned char>(v)));
        }
    }
    atomic_write_file(out_dir / "heatmap.pgm", pgm);

    std::string alpha_csv = "region,row,col,alpha\n";
    for (std::size_t r = 0; r < alpha.size(); ++r) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%zu,%zu,%zu,%.17g\n", r, r / grid, r % grid, alpha[r]);
        alpha_csv += buf;
    }
    atomic_write_file(out_dir / "alpha.csv", alpha_csv);

    // (b) per-token gradient saliency of the fake probability.
    ckpt.model->zero_grad();
    backward(slice(trace.probs, 1, 1, 2));
    std::string tok_csv = "position,token,saliency\n";
    if (trace.text_embedding.node() && !trace.text_embedding.grad().empty()) {
        const auto grad = trace.text_embedding.grad();
        const std::size_t dim = trace.text_embedding.dim(1);
        for (std::size_t i = 0; i < view.token_ids.size(); ++i) {
            if (!view.token_mask[i]) continue;
            double l2 = 0;
            for (std::size_t j = 0; j < dim; ++j) l2 += grad[i * dim + j] * grad[i * dim + j];
            char buf[64];
            std::snprintf(buf, sizeof(buf), ",%.17g\n", std::sqrt(l2));
            tok_csv += std::to_string(i) + "," + vocab.token(view.token_ids[i]) + buf;
        }
    }
    atomic_write_file(out_dir / "tokens.csv", tok_csv);

    const double fake_prob = trace.probs.data()[1];
    const std::string label = fake_prob >= 0.5 ? "fake" : "real";
    char pred[80];
    std::snprintf(pred, sizeof(pred), "predicted=%s fake_prob=%.17g\n", label.c_str(), fake_prob);
    atomic_write_file(out_dir / "prediction.txt", pred);
    std::cout << pred;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale multimodal attention classifier"};
    app.require_subcommand(1);
    CommonOpts opts;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic cross-modal dataset");
    gen->add_option("--spec", opts.spec_path, "SyntheticSpec JSON file")->required();
    gen->add_option("--out", opts.out_dir, "output dataset directory")->required();
    gen->add_flag("--force", opts.force, "overwrite a non-empty output directory");
    gen->add_option("--seed", [&opts](const std::vector<std::string>& v) {
        opts.seed = std::stoull(v[0]);
        return true;
    }, "override the spec seed");
    gen->callback([&] { run_gen_data(opts); });

    auto* train = app.add_subcommand("train", "fit a model and keep the best checkpoint");
    train->add_option("--config", opts.config_path, "run config file")->required();
    train->add_option("--data", opts.data_dir, "dataset directory")->required();
    train->add_option("--out", opts.out_dir, "output directory")->required();
    train->add_option("--variant", opts.variant, "model variant override");
    train->add_option("--seed", [&opts](const std::vector<std::string>& v) {
        opts.seed = std::stoull(v[0]);
        return true;
    }, "override the config seed");
    train->callback([&] { run_train(opts); });

    auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on a dataset split");
    eval_cmd->add_option("--checkpoint", opts.checkpoint_path, "checkpoint file")->required();
    eval_cmd->add_option("--data", opts.data_dir, "dataset directory")->required();
    eval_cmd->add_option("--split", opts.split, "train, val, or test (default test)");
    eval_cmd->add_option("--out", opts.out_dir, "output directory")->required();
    eval_cmd->callback([&] { run_eval(opts); });

    auto* ablate = app.add_subcommand("ablate", "train and score every model variant");
    ablate->add_option("--config", opts.config_path, "run config file")->required();
    ablate->add_option("--data", opts.data_dir, "dataset directory")->required();
    ablate->add_option("--out", opts.out_dir, "output directory")->required();
    ablate->add_option("--seed", [&opts](const std::vector<std::string>& v) {
        opts.seed = std::stoull(v[0]);
        return true;
    }, "override the config seed");
    ablate->callback([&] { run_ablate(opts); });

    auto* bench = app.add_subcommand("bench", "per-sample latency of a checkpoint");
    bench->add_option("--checkpoint", opts.checkpoint_path, "checkpoint file")->required();
    bench->add_option("--data", opts.data_dir, "dataset directory")->required();
    bench->add_option("--trials", opts.trials, "timed trials (minimum 30)");
    bench->add_option("--warmup", opts.warmup, "discarded warmup iterations");
    bench->add_option("--out", opts.out_dir, "output directory")->required();
    bench->callback([&] { run_bench(opts); });

    auto* viz = app.add_subcommand("viz-attn", "visualize cross-modal attention for one sample");
    viz->add_option("--checkpoint", opts.checkpoint_path, "checkpoint file")->required();
    viz->add_option("--data", opts.data_dir, "dataset directory")->required();
    viz->add_option("--sample-id", opts.sample_id, "sample id from the manifest")->required();
    viz->add_option("--out", opts.out_dir, "output directory")->required();
    viz->callback([&] { run_viz_attn(opts); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const CompatibilityError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
