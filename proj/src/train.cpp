#include "etma/train.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

namespace etma {

namespace fs = std::filesystem;

// ---- config ------------------------------------------------------------------

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ParseError("config: key '" + key + "' wants a boolean, got '" + v + "'");
}

}  // namespace

TrainConfig TrainConfig::preset(const std::string& name) {
    TrainConfig c;  // the defaults are the desk-scale synthetic benchmark
    if (name == "desk") return c;
    c.model.image_size = 224;
    c.model.patch = 16;
    c.model.n_max = 128;
    c.augment = true;
    if (name == "twitter") {
        c.lr = 0.001;
        c.batch_size = 128;
        c.epochs = 120;
        c.model.dropout = 0.5;
    } else if (name == "jruvika") {
        c.lr = 0.001;
        c.batch_size = 64;
        c.epochs = 80;
        c.model.dropout = 0.3;
    } else if (name == "pontes") {
        c.lr = 0.003;
        c.batch_size = 128;
        c.epochs = 100;
        c.model.dropout = 0.5;
    } else if (name == "risdal") {
        c.lr = 0.0005;
        c.batch_size = 128;
        c.epochs = 100;
        c.model.dropout = 0.4;
    } else {
        throw ConfigError("unknown preset '" + name + "'");
    }
    return c;
}

TrainConfig TrainConfig::parse(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;

    // The preset (when present) seeds the defaults, so it applies first.
    TrainConfig cfg;
    {
        std::istringstream scan(text);
        while (std::getline(scan, line)) {
            const std::string t = trim(line);
            if (t.rfind("preset", 0) == 0) {
                const std::size_t eq = t.find('=');
                if (eq != std::string::npos) cfg = preset(trim(t.substr(eq + 1)));
            }
        }
    }

    std::size_t line_no = 0;
    bool saw_mean[3] = {false, false, false};
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ParseError(origin + ":" + std::to_string(line_no) + ": expected key = value");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        try {
            if (key == "preset") continue;  // applied above
            else if (key == "image_size") cfg.model.image_size = std::stoull(value);
            else if (key == "patch") cfg.model.patch = std::stoull(value);
            else if (key == "channels") cfg.model.channels = std::stoull(value);
            else if (key == "dim") cfg.model.dim = std::stoull(value);
            else if (key == "layers") cfg.model.layers = std::stoull(value);
            else if (key == "heads") cfg.model.heads = std::stoull(value);
            else if (key == "joint_dim") cfg.model.joint_dim = std::stoull(value);
            else if (key == "n_max") cfg.model.n_max = std::stoull(value);
            else if (key == "mlp_ratio") cfg.model.mlp_ratio = std::stoull(value);
            else if (key == "vocab_size") cfg.model.vocab_size = std::stoull(value);
            else if (key == "dropout") cfg.model.dropout = std::stod(value);
            else if (key == "ln_eps") cfg.model.ln_eps = std::stod(value);
            else if (key == "qkv_bias") cfg.model.qkv_bias = parse_bool(value, key);
            else if (key == "lr") cfg.lr = std::stod(value);
            else if (key == "batch_size") cfg.batch_size = std::stoull(value);
            else if (key == "epochs") cfg.epochs = std::stoull(value);
            else if (key == "optimizer") cfg.optimizer = value;
            else if (key == "loss") cfg.loss = value;
            else if (key == "seed") cfg.seed = std::stoull(value);
            else if (key == "train_frac") cfg.train_frac = std::stod(value);
            else if (key == "val_frac") cfg.val_frac = std::stod(value);
            else if (key == "test_frac") cfg.test_frac = std::stod(value);
            else if (key == "augment") cfg.augment = parse_bool(value, key);
            else if (key == "min_token_freq") cfg.min_token_freq = std::stoull(value);
            else if (key == "variant") cfg.variant = value;
            else if (key == "vocab_file") cfg.vocab_file = value;
            else if (key == "stopword_file") cfg.stopword_file = value;
            else if (key == "norm_mean_r") { cfg.norm.mean[0] = std::stod(value); saw_mean[0] = true; }
            else if (key == "norm_mean_g") { cfg.norm.mean[1] = std::stod(value); saw_mean[1] = true; }
            else if (key == "norm_mean_b") { cfg.norm.mean[2] = std::stod(value); saw_mean[2] = true; }
            else if (key == "norm_std_r") cfg.norm.stddev[0] = std::stod(value);
            else if (key == "norm_std_g") cfg.norm.stddev[1] = std::stod(value);
            else if (key == "norm_std_b") cfg.norm.stddev[2] = std::stod(value);
            else
                throw ParseError(origin + ":" + std::to_string(line_no) + ": unknown key '" +
                                 key + "'");
        } catch (const std::invalid_argument&) {
            throw ParseError(origin + ":" + std::to_string(line_no) + ": bad value for '" + key +
                             "': '" + value + "'");
        } catch (const std::out_of_range&) {
            throw ParseError(origin + ":" + std::to_string(line_no) + ": value out of range for '" +
                             key + "'");
        }
    }
    cfg.has_norm = saw_mean[0] && saw_mean[1] && saw_mean[2];
    if (cfg.optimizer != "adam")
        throw ConfigError("config: unsupported optimizer '" + cfg.optimizer + "'");
    if (cfg.loss != "cross_entropy")
        throw ConfigError("config: unsupported loss '" + cfg.loss + "'");
    if (cfg.lr <= 0) throw ConfigError("config: learning rate must be positive");
    if (cfg.batch_size == 0) throw ConfigError("config: batch size must be at least 1");
    variant_from_label(cfg.variant);  // validates the name
    return cfg;
}

TrainConfig TrainConfig::parse_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("config: cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), path.string());
}

std::string TrainConfig::canonical_text() const {
    std::map<std::string, std::string> kv;
    kv["image_size"] = std::to_string(model.image_size);
    kv["patch"] = std::to_string(model.patch);
    kv["channels"] = std::to_string(model.channels);
    kv["dim"] = std::to_string(model.dim);
    kv["layers"] = std::to_string(model.layers);
    kv["heads"] = std::to_string(model.heads);
    kv["joint_dim"] = std::to_string(model.joint_dim);
    kv["n_max"] = std::to_string(model.n_max);
    kv["mlp_ratio"] = std::to_string(model.mlp_ratio);
    kv["vocab_size"] = std::to_string(model.vocab_size);
    kv["dropout"] = fmt_double(model.dropout);
    kv["ln_eps"] = fmt_double(model.ln_eps);
    kv["qkv_bias"] = model.qkv_bias ? "true" : "false";
    kv["lr"] = fmt_double(lr);
    kv["batch_size"] = std::to_string(batch_size);
    kv["epochs"] = std::to_string(epochs);
    kv["optimizer"] = optimizer;
    kv["loss"] = loss;
    kv["seed"] = std::to_string(seed);
    kv["train_frac"] = fmt_double(train_frac);
    kv["val_frac"] = fmt_double(val_frac);
    kv["test_frac"] = fmt_double(test_frac);
    kv["augment"] = augment ? "true" : "false";
    kv["min_token_freq"] = std::to_string(min_token_freq);
    kv["variant"] = variant;
    if (!vocab_file.empty()) kv["vocab_file"] = vocab_file;
    if (!stopword_file.empty()) kv["stopword_file"] = stopword_file;
    if (has_norm) {
        kv["norm_mean_r"] = fmt_double(norm.mean[0]);
        kv["norm_mean_g"] = fmt_double(norm.mean[1]);
        kv["norm_mean_b"] = fmt_double(norm.mean[2]);
        kv["norm_std_r"] = fmt_double(norm.stddev[0]);
        kv["norm_std_g"] = fmt_double(norm.stddev[1]);
        kv["norm_std_b"] = fmt_double(norm.stddev[2]);
    }
    std::string out;
    for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
    return out;
}

std::uint64_t TrainConfig::hash() const {
    const std::string text = canonical_text();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

// ---- Adam ---------------------------------------------------------------------

void Adam::step(const nn::ParamList& params) {
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params[i].tensor.size(), 0.0);
            v_[i].assign(params[i].tensor.size(), 0.0);
        }
    }
    if (m_.size() != params.size())
        throw ContractError("adam: parameter list changed between steps");

    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor param = params[i].tensor;  // shared handle; updates the model in place
        auto theta = param.data();
        auto grad = param.grad();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < theta.size(); ++j) {
            const double g = grad.empty() ? 0.0 : grad[j];
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * g;
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * g * g;
            const double m_hat = m[j] / bc1;
            const double v_hat = v[j] / bc2;
            theta[j] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
        }
    }
}

// ---- loss -----------------------------------------------------------------------

Tensor cross_entropy(const Tensor& probs, int label) {
    if (probs.size() != 2)
        throw ContractError("cross_entropy: expected two class probabilities, got " +
                            shape_str(probs.shape()));
    if (label != 0 && label != 1)
        throw ContractError("cross_entropy: label must be 0 or 1, got " + std::to_string(label));
    std::vector<double> onehot(2, 0.0);
    onehot[static_cast<std::size_t>(label)] = 1.0;
    Tensor picked = mul(log_clamped(probs), Tensor::from(probs.shape(), std::move(onehot)));
    return mul(sum(picked), Tensor::scalar(-1.0));
}

// ---- report emission ----------------------------------------------------------------

std::string train_report_jsonl(const TrainReport& report) {
    std::string out;
    for (const auto& e : report.epochs) {
        nlohmann::ordered_json j;
        j["epoch"] = e.epoch;
        j["train_loss"] = e.train_loss;
        j["train_acc"] = e.train_acc;
        j["val_loss"] = e.val_loss;
        j["val_acc"] = e.val_acc;
        j["ms"] = e.ms;
        out += j.dump() + "\n";
    }
    return out;
}

std::string train_report_curves_csv(const TrainReport& report) {
    std::string out = "epoch,train_loss,train_acc,val_loss,val_acc\n";
    for (const auto& e : report.epochs) {
        out += std::to_string(e.epoch) + "," + fmt_double(e.train_loss) + "," +
               fmt_double(e.train_acc) + "," + fmt_double(e.val_loss) + "," +
               fmt_double(e.val_acc) + "\n";
    }
    return out;
}

// ---- checkpoints -----------------------------------------------------------------------

namespace {

void store_u16(std::ostream& out, std::uint16_t v) {
    char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
    out.write(b, 2);
}

void store_u32(std::ostream& out, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 4);
}

void store_u64(std::ostream& out, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 8);
}

void store_string(std::ostream& out, const std::string& s) {
    store_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint64_t load_uint(std::istream& in, int count) {
    unsigned char b[8] = {0};
    in.read(reinterpret_cast<char*>(b), count);
    if (in.gcount() != count) throw IoError("checkpoint: truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < count; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

std::string load_string(std::istream& in) {
    const auto len = static_cast<std::uint32_t>(load_uint(in, 4));
    std::string s(len, '\0');
    in.read(s.data(), len);
    if (static_cast<std::uint32_t>(in.gcount()) != len) throw IoError("checkpoint: truncated");
    return s;
}

}  // namespace

void save_checkpoint(const fs::path& path, const EtmaModel& model, const TrainConfig& config,
                     const CheckpointMeta& meta) {
    std::ostringstream out(std::ios::binary);
    out.write("ETMC", 4);
    store_u16(out, kCheckpointFormatVersion);
    store_string(out, meta.variant);
    store_u64(out, meta.config_hash);
    store_u32(out, meta.epoch);
    store_u64(out, std::bit_cast<std::uint64_t>(meta.val_accuracy));
    store_string(out, config.canonical_text());

    const nn::ParamList params = model.parameters();
    store_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        store_string(out, p.name);
        write_tensor(out, p.tensor);
    }
    atomic_write_file(path, out.str());
}

std::shared_ptr<EtmaModel> build_model(const TrainConfig& config) {
    Rng init_rng = Rng(config.seed).split(0);
    return std::make_shared<EtmaModel>(config.model, variant_from_label(config.variant), init_rng);
}

LoadedCheckpoint load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot read " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, "ETMC", 4) != 0)
        throw IoError("checkpoint: bad magic bytes in " + path.string());
    const auto version = static_cast<std::uint16_t>(load_uint(in, 2));
    if (version != kCheckpointFormatVersion)
        throw IoError("checkpoint: format version mismatch: expected " +
                      std::to_string(kCheckpointFormatVersion) + ", found " +
                      std::to_string(version));

    LoadedCheckpoint ckpt;
    ckpt.meta.variant = load_string(in);
    ckpt.meta.config_hash = load_uint(in, 8);
    ckpt.meta.epoch = static_cast<std::uint32_t>(load_uint(in, 4));
    ckpt.meta.val_accuracy = std::bit_cast<double>(load_uint(in, 8));

    const std::string config_text = load_string(in);
    ckpt.config = TrainConfig::parse(config_text, path.string() + "(embedded config)");
    if (ckpt.config.hash() != ckpt.meta.config_hash)
        throw CompatibilityError("checkpoint: embedded config does not match its recorded hash");
    if (ckpt.config.variant != ckpt.meta.variant)
        throw CompatibilityError("checkpoint: variant label disagrees with config");

    ckpt.model = build_model(ckpt.config);
    std::unordered_map<std::string, Tensor> by_name;
    for (auto& p : ckpt.model->parameters()) by_name.emplace(p.name, p.tensor);

    const auto count = static_cast<std::uint32_t>(load_uint(in, 4));
    if (count != by_name.size())
        throw IoError("checkpoint: expected " + std::to_string(by_name.size()) +
                      " parameters, found " + std::to_string(count));
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = load_string(in);
        Tensor stored = read_tensor(in);
        auto it = by_name.find(name);
        if (it == by_name.end()) throw IoError("checkpoint: unknown parameter '" + name + "'");
        if (it->second.shape() != stored.shape())
            throw IoError("checkpoint: parameter '" + name + "' has shape " +
                          shape_str(stored.shape()) + ", model wants " +
                          shape_str(it->second.shape()));
        std::copy(stored.data().begin(), stored.data().end(), it->second.data().begin());
    }
    return ckpt;
}

// ---- preparation --------------------------------------------------------------------------

PreparedSample prepare_sample(const MultimodalSample& sample, const Vocabulary& vocab,
                              std::size_t n_max, const StopwordSet& stopwords) {
    TokenizedText tok = tokenize(sample.text, vocab, n_max, stopwords);
    return {sample.id, sample.image, std::move(tok.ids), std::move(tok.mask), sample.label};
}

std::vector<PreparedSample> prepare_samples(const std::vector<MultimodalSample>& samples,
                                            const Vocabulary& vocab, std::size_t n_max,
                                            const StopwordSet& stopwords) {
    std::vector<PreparedSample> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(prepare_sample(s, vocab, n_max, stopwords));
    return out;
}

Vocabulary build_vocabulary(const std::vector<MultimodalSample>& samples,
                            const std::vector<std::size_t>& train_indices,
                            const StopwordSet& stopwords, std::size_t min_freq) {
    std::vector<std::vector<std::string>> corpus;
    corpus.reserve(train_indices.size());
    for (std::size_t idx : train_indices)
        corpus.push_back(split_words(samples.at(idx).text, stopwords));
    return Vocabulary::build(corpus, min_freq);
}

StopwordSet resolve_stopwords(const TrainConfig& config, const fs::path& base_dir) {
    if (config.stopword_file.empty()) return default_stopwords();
    fs::path p(config.stopword_file);
    if (p.is_relative()) p = base_dir / p;
    return load_stopwords(p);
}

// ---- fit --------------------------------------------------------------------------------

namespace {

bool predicts_fake(const Tensor& probs) { return probs.data()[1] >= 0.5; }

struct EvalStats {
    double loss = 0, acc = 0;
};

EvalStats evaluate_split(const EtmaModel& model, const std::vector<PreparedSample>& set,
                         const ChannelStats& norm) {
    EvalStats stats;
    if (set.empty()) return stats;
    std::size_t correct = 0;
    for (const auto& s : set) {
        PreparedSample view = s;
        view.image = normalize_image(s.image, norm);
        ForwardTrace trace = model.forward(view);
        stats.loss += cross_entropy(trace.probs, s.label).value();
        correct += (predicts_fake(trace.probs) == (s.label == 1)) ? 1 : 0;
    }
    stats.loss /= static_cast<double>(set.size());
    stats.acc = static_cast<double>(correct) / static_cast<double>(set.size());
    return stats;
}

}  // namespace

FitResult fit(EtmaModel& model, const std::vector<PreparedSample>& train_set,
              const std::vector<PreparedSample>& val_set, TrainConfig& config,
              const fs::path& checkpoint_path) {
    if (train_set.empty()) throw ContractError("fit: empty training set");
    if (!config.has_norm)
        throw ContractError("fit: normalization stats unresolved; compute them from the training "
                            "split first");

    Adam adam(config.lr);
    const nn::ParamList params = model.parameters();
    Rng rng = Rng(config.seed).split(1);

    FitResult result;
    double best_acc = -1.0;

    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        rng.shuffle(order);

        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t stop = std::min(start + config.batch_size, order.size());
            const double inv_batch = 1.0 / static_cast<double>(stop - start);
            model.zero_grad();
            for (std::size_t i = start; i < stop; ++i) {
                const PreparedSample& s = train_set[order[i]];
                PreparedSample view = s;
                view.image = normalize_image(config.augment ? augment(s.image, rng) : s.image,
                                             config.norm);
                ForwardTrace trace = model.forward(view, true, &rng);
                Tensor sample_loss = cross_entropy(trace.probs, s.label);
                const double loss_value = sample_loss.value();
                if (!std::isfinite(loss_value))
                    throw NumericError("fit: non-finite loss at epoch " + std::to_string(epoch) +
                                       ", batch " + std::to_string(start / config.batch_size + 1));
                loss_sum += loss_value;
                correct += (predicts_fake(trace.probs) == (s.label == 1)) ? 1 : 0;
                backward(mul(sample_loss, Tensor::scalar(inv_batch)));
            }
            adam.step(params);
        }

        EvalStats val = evaluate_split(model, val_set, config.norm);
        const auto t1 = std::chrono::steady_clock::now();

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = loss_sum / static_cast<double>(train_set.size());
        stats.train_acc = static_cast<double>(correct) / static_cast<double>(train_set.size());
        stats.val_loss = val.loss;
        stats.val_acc = val.acc;
        stats.ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        result.report.epochs.push_back(stats);

        if (val.acc > best_acc) {
            best_acc = val.acc;
            result.report.selected_epoch = epoch;
            result.best = {config.variant, config.hash(), static_cast<std::uint32_t>(epoch),
                           val.acc};
            save_checkpoint(checkpoint_path, model, config, result.best);
        }
    }

    if (config.epochs == 0) {
        result.best = {config.variant, config.hash(), 0, 0.0};
        save_checkpoint(checkpoint_path, model, config, result.best);
    }
    return result;
}

}  // namespace etma
