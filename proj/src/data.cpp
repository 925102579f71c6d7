#include "etma/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

namespace etma {

namespace fs = std::filesystem;

// ---- synthetic benchmark ----------------------------------------------------

namespace {

const std::vector<std::string>& default_quadrant_names() {
    static const std::vector<std::string> names = {"topleft", "topright", "bottomleft",
                                                   "bottomright"};
    return names;
}

const std::vector<std::string>& default_distractor_vocab() {
    static const std::vector<std::string> words = {
        "amber",  "birch",  "canyon", "dune",   "ember", "fjord",   "glade", "harbor",
        "inlet",  "juniper", "kelp",  "lagoon", "mesa",  "nectar",  "opal",  "prairie",
    };
    return words;
}

double quantize_u8(double v) {
    v = std::clamp(v, 0.0, 1.0);
    return std::round(v * 255.0) / 255.0;
}

}  // namespace

void SyntheticSpec::resolve_defaults() {
    if (quadrant_names.empty()) {
        if (quadrants == 4) {
            quadrant_names = default_quadrant_names();
        } else {
            for (std::size_t q = 0; q < quadrants; ++q)
                quadrant_names.push_back("region" + std::to_string(q));
        }
    }
    if (distractor_vocab.empty()) distractor_vocab = default_distractor_vocab();
}

void SyntheticSpec::validate() const {
    if (n_samples == 0) throw ConfigError("synthetic spec: n_samples must be positive");
    if (quadrants < 2) throw ConfigError("synthetic spec: need at least 2 quadrants");
    const auto grid = static_cast<std::size_t>(std::llround(std::sqrt(double(quadrants))));
    if (grid * grid != quadrants)
        throw ConfigError("synthetic spec: quadrant count " + std::to_string(quadrants) +
                          " is not a perfect square");
    if (image_size == 0 || image_size % grid != 0)
        throw ConfigError("synthetic spec: image size " + std::to_string(image_size) +
                          " not divisible by quadrant grid " + std::to_string(grid));
    if (quadrant_names.size() != quadrants)
        throw ConfigError("synthetic spec: expected " + std::to_string(quadrants) +
                          " quadrant names, got " + std::to_string(quadrant_names.size()));
    if (distractor_vocab.size() < distractors)
        throw ConfigError("synthetic spec: distractor vocabulary smaller than distractor count");
}

std::vector<MultimodalSample> generate_synthetic(const SyntheticSpec& spec_in) {
    SyntheticSpec spec = spec_in;
    spec.resolve_defaults();
    spec.validate();

    const std::size_t k = spec.quadrants;
    const auto grid = static_cast<std::size_t>(std::llround(std::sqrt(double(k))));
    const std::size_t quad = spec.image_size / grid;

    // Exact quotas. Real samples pair each quadrant name with its own
    // quadrant, round-robin. Fake samples cycle the bright quadrant and the
    // name offset so both marginals stay flat: every (bright, shift) cell
    // gets the same count per full cycle, hence each name sees the same
    // number of fakes whenever k divides the class count.
    struct Assignment {
        std::size_t bright, name;
        int label;
    };
    const std::size_t n_fake = spec.n_samples / 2;
    const std::size_t n_real = spec.n_samples - n_fake;
    std::vector<Assignment> plan;
    plan.reserve(spec.n_samples);
    for (std::size_t t = 0; t < n_real; ++t) plan.push_back({t % k, t % k, 0});
    for (std::size_t t = 0; t < n_fake; ++t) {
        const std::size_t bright = t % k;
        const std::size_t shift = 1 + (t / k) % (k - 1);
        plan.push_back({bright, (bright + shift) % k, 1});
    }

    Rng master(spec.seed);
    master.shuffle(plan);

    std::vector<MultimodalSample> samples;
    samples.reserve(spec.n_samples);
    for (std::size_t i = 0; i < spec.n_samples; ++i) {
        Rng rng = master.split(i);
        const Assignment& a = plan[i];

        Tensor image = Tensor::zeros({spec.image_size, spec.image_size, 3});
        auto img = image.data();
        const std::size_t qr = a.bright / grid, qc = a.bright % grid;
        const double cy = (double(qr) + 0.5) * double(quad) - 0.5;
        const double cx = (double(qc) + 0.5) * double(quad) - 0.5;
        const double radius = double(quad) / 2.0;
        for (std::size_t y = 0; y < spec.image_size; ++y) {
            for (std::size_t x = 0; x < spec.image_size; ++x) {
                const bool in_bright = (y / quad == qr) && (x / quad == qc);
                double base = 0.0;
                if (in_bright) {
                    const double dy = (double(y) - cy) / radius;
                    const double dx = (double(x) - cx) / radius;
                    base = 0.55 + 0.45 * std::exp(-2.0 * (dy * dy + dx * dx));
                }
                for (std::size_t c = 0; c < 3; ++c) {
                    const double noise =
                        in_bright ? rng.next_uniform(-0.05, 0.05) : rng.next_uniform(0.0, 0.35);
                    img[(y * spec.image_size + x) * 3 + c] = quantize_u8(base + noise);
                }
            }
        }

        // Name plus distractors drawn without replacement, order shuffled so
        // token position carries nothing.
        std::vector<std::string> pool = spec.distractor_vocab;
        rng.shuffle(pool);
        std::vector<std::string> words(pool.begin(),
                                       pool.begin() + static_cast<long>(spec.distractors));
        words.push_back(spec.quadrant_names[a.name]);
        rng.shuffle(words);
        std::string text;
        for (std::size_t w = 0; w < words.size(); ++w) {
            if (w) text += " ";
            text += words[w];
        }

        char id[16];
        std::snprintf(id, sizeof(id), "s%05zu", i);
        samples.push_back({id, std::move(text), std::move(image), a.label});
    }
    return samples;
}

SyntheticSpec synthetic_spec_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("synthetic spec: ") + e.what());
    }
    SyntheticSpec spec;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& key = it.key();
        if (key == "n_samples")
            spec.n_samples = it.value().get<std::size_t>();
        else if (key == "image_size")
            spec.image_size = it.value().get<std::size_t>();
        else if (key == "quadrants")
            spec.quadrants = it.value().get<std::size_t>();
        else if (key == "distractors")
            spec.distractors = it.value().get<std::size_t>();
        else if (key == "seed")
            spec.seed = it.value().get<std::uint64_t>();
        else if (key == "quadrant_names")
            spec.quadrant_names = it.value().get<std::vector<std::string>>();
        else if (key == "distractor_vocab")
            spec.distractor_vocab = it.value().get<std::vector<std::string>>();
        else
            throw ParseError("synthetic spec: unknown key '" + key + "'");
    }
    spec.resolve_defaults();
    spec.validate();
    return spec;
}

std::string synthetic_spec_to_json(const SyntheticSpec& spec) {
    nlohmann::ordered_json j;
    j["n_samples"] = spec.n_samples;
    j["image_size"] = spec.image_size;
    j["quadrants"] = spec.quadrants;
    j["distractors"] = spec.distractors;
    j["seed"] = spec.seed;
    j["quadrant_names"] = spec.quadrant_names;
    j["distractor_vocab"] = spec.distractor_vocab;
    return j.dump();
}

// ---- PPM ---------------------------------------------------------------------

namespace {

// Reads the next header token, skipping whitespace and '#' comments.
std::string ppm_token(std::istream& in, const fs::path& path) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {
            }
        } else if (!std::isspace(c)) {
            tok.push_back(static_cast<char>(c));
            while ((c = in.peek()) != EOF && !std::isspace(c)) tok.push_back(static_cast<char>(in.get()));
            return tok;
        }
    }
    throw IoError("ppm: truncated header in " + path.string());
}

}  // namespace

Tensor load_ppm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("ppm: cannot read " + path.string());
    if (ppm_token(in, path) != "P6") throw IoError("ppm: not a binary P6 file: " + path.string());
    const std::size_t w = std::stoull(ppm_token(in, path));
    const std::size_t h = std::stoull(ppm_token(in, path));
    const std::size_t maxval = std::stoull(ppm_token(in, path));
    if (maxval != 255) throw IoError("ppm: expected maxval 255 in " + path.string());
    in.get();  // single whitespace after maxval

    std::vector<unsigned char> bytes(w * h * 3);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (static_cast<std::size_t>(in.gcount()) != bytes.size())
        throw IoError("ppm: truncated pixel data in " + path.string());

    Tensor image = Tensor::zeros({h, w, 3});
    auto data = image.data();
    for (std::size_t i = 0; i < bytes.size(); ++i) data[i] = bytes[i] / 255.0;
    return image;
}

void save_ppm(const fs::path& path, const Tensor& image) {
    if (image.rank() != 3 || image.dim(2) != 3)
        throw ConfigError("ppm: expected an [h x w x 3] image, got " + shape_str(image.shape()));
    const std::size_t h = image.dim(0), w = image.dim(1);
    std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    out.reserve(out.size() + h * w * 3);
    for (double v : image.data()) {
        const long byte = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
        out.push_back(static_cast<char>(static_cast<unsigned char>(byte)));
    }
    atomic_write_file(path, out);
}

// ---- manifest CSV ---------------------------------------------------------------

namespace {

std::string csv_quote(const std::string& text) {
    std::string out = "\"";
    for (char c : text) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += "\"";
    return out;
}

ParseError manifest_error(const fs::path& path, std::size_t line, const std::string& what) {
    return ParseError(path.string() + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

DatasetManifest load_manifest(const fs::path& csv_path) {
    std::ifstream in(csv_path);
    if (!in) throw IoError("manifest: cannot read " + csv_path.string());

    DatasetManifest manifest;
    manifest.dir = csv_path.parent_path();

    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw manifest_error(csv_path, 1, "empty file");
    ++line_no;
    if (line == "id,text,image_path,label\r") line.pop_back();
    if (line != "id,text,image_path,label")
        throw manifest_error(csv_path, line_no, "bad header, expected id,text,image_path,label");

    std::unordered_map<std::string, std::size_t> seen;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;

        ManifestRecord rec;
        std::size_t pos = line.find(',');
        if (pos == std::string::npos) throw manifest_error(csv_path, line_no, "expected 4 fields");
        rec.id = line.substr(0, pos);
        ++pos;

        if (pos >= line.size() || line[pos] != '"')
            throw manifest_error(csv_path, line_no, "text field must be double-quoted");
        ++pos;
        std::string text;
        bool closed = false;
        while (pos < line.size()) {
            if (line[pos] == '"') {
                if (pos + 1 < line.size() && line[pos + 1] == '"') {
                    text.push_back('"');
                    pos += 2;
                } else {
                    closed = true;
                    ++pos;
                    break;
                }
            } else {
                text.push_back(line[pos++]);
            }
        }
        if (!closed) throw manifest_error(csv_path, line_no, "unterminated quoted text field");
        rec.text = std::move(text);
        if (pos >= line.size() || line[pos] != ',')
            throw manifest_error(csv_path, line_no, "expected 4 fields");
        ++pos;

        const std::size_t comma = line.find(',', pos);
        if (comma == std::string::npos) throw manifest_error(csv_path, line_no, "expected 4 fields");
        rec.image_path = line.substr(pos, comma - pos);
        const std::string label = line.substr(comma + 1);
        if (label == "real")
            rec.label = 0;
        else if (label == "fake")
            rec.label = 1;
        else
            throw manifest_error(csv_path, line_no, "label must be real or fake, got '" + label + "'");

        if (!seen.emplace(rec.id, line_no).second)
            throw manifest_error(csv_path, line_no, "duplicate id '" + rec.id + "'");
        manifest.records.push_back(std::move(rec));
    }
    return manifest;
}

void write_dataset(const fs::path& dir, const std::vector<MultimodalSample>& samples,
                   const SyntheticSpec* spec_echo, bool force) {
    if (fs::exists(dir) && !fs::is_empty(dir) && !force)
        throw IoError("refusing to write into non-empty directory " + dir.string() +
                      " (use force)");
    fs::create_directories(dir / "images");

    std::string manifest = "id,text,image_path,label\n";
    for (const auto& s : samples) {
        const std::string rel = "images/" + s.id + ".ppm";
        save_ppm(dir / rel, s.image);
        manifest += s.id + "," + csv_quote(s.text) + "," + rel + "," +
                    (s.label == 0 ? "real" : "fake") + "\n";
    }
    atomic_write_file(dir / "manifest.csv", manifest);
    if (spec_echo) atomic_write_file(dir / "spec.json-lines", synthetic_spec_to_json(*spec_echo) + "\n");
}

std::vector<MultimodalSample> load_dataset(const fs::path& dir) {
    DatasetManifest manifest = load_manifest(dir / "manifest.csv");
    std::vector<MultimodalSample> samples;
    samples.reserve(manifest.records.size());
    for (const auto& rec : manifest.records) {
        MultimodalSample s;
        s.id = rec.id;
        s.text = rec.text;
        s.label = rec.label;
        s.image = load_ppm(manifest.dir / rec.image_path);
        samples.push_back(std::move(s));
    }
    return samples;
}

// ---- split -------------------------------------------------------------------------

SplitIndices split_dataset(std::size_t count, const SplitSpec& spec) {
    const double total = spec.train + spec.val + spec.test;
    if (std::abs(total - 1.0) > 1e-9)
        throw ConfigError("split fractions sum to " + std::to_string(total) + ", expected 1");
    if (spec.train < 0 || spec.val < 0 || spec.test < 0)
        throw ConfigError("split fractions must be non-negative");

    std::vector<std::size_t> order(count);
    for (std::size_t i = 0; i < count; ++i) order[i] = i;
    Rng rng(spec.seed);
    rng.shuffle(order);

    const auto n_train = static_cast<std::size_t>(std::llround(double(count) * spec.train));
    const auto n_val = static_cast<std::size_t>(std::llround(double(count) * spec.val));
    SplitIndices out;
    out.train.assign(order.begin(), order.begin() + static_cast<long>(std::min(n_train, count)));
    const std::size_t val_end = std::min(n_train + n_val, count);
    out.val.assign(order.begin() + static_cast<long>(out.train.size()),
                   order.begin() + static_cast<long>(val_end));
    out.test.assign(order.begin() + static_cast<long>(val_end), order.end());
    return out;
}

// ---- preprocessing --------------------------------------------------------------------

ChannelStats compute_channel_stats(const std::vector<MultimodalSample>& samples,
                                   const std::vector<std::size_t>& indices) {
    ChannelStats stats;
    std::array<double, 3> sum{0, 0, 0}, sq{0, 0, 0};
    std::size_t count = 0;
    for (std::size_t idx : indices) {
        const auto data = samples.at(idx).image.data();
        for (std::size_t i = 0; i < data.size(); i += 3) {
            for (std::size_t c = 0; c < 3; ++c) {
                sum[c] += data[i + c];
                sq[c] += data[i + c] * data[i + c];
            }
        }
        count += data.size() / 3;
    }
    if (count == 0) throw ContractError("channel stats: no pixels");
    for (std::size_t c = 0; c < 3; ++c) {
        stats.mean[c] = sum[c] / double(count);
        const double var = std::max(0.0, sq[c] / double(count) - stats.mean[c] * stats.mean[c]);
        stats.stddev[c] = std::max(std::sqrt(var), 1e-6);
    }
    return stats;
}

Tensor normalize_image(const Tensor& image, const ChannelStats& stats) {
    if (image.rank() != 3 || image.dim(2) != 3)
        throw ConfigError("normalize: expected [h x w x 3], got " + shape_str(image.shape()));
    Tensor out = Tensor::zeros(image.shape());
    auto dst = out.data();
    const auto src = image.data();
    for (std::size_t i = 0; i < src.size(); i += 3)
        for (std::size_t c = 0; c < 3; ++c)
            dst[i + c] = (src[i + c] - stats.mean[c]) / stats.stddev[c];
    return out;
}

Tensor denormalize_image(const Tensor& image, const ChannelStats& stats) {
    Tensor out = Tensor::zeros(image.shape());
    auto dst = out.data();
    const auto src = image.data();
    for (std::size_t i = 0; i < src.size(); i += 3)
        for (std::size_t c = 0; c < 3; ++c) dst[i + c] = src[i + c] * stats.stddev[c] + stats.mean[c];
    return out;
}

// ---- augmentation --------------------------------------------------------------------

namespace {

Tensor rotate90(const Tensor& img) {
    const std::size_t s = img.dim(0), c = img.dim(2);
    Tensor out = Tensor::zeros(img.shape());
    auto dst = out.data();
    const auto src = img.data();
    // 90 degrees clockwise: (y, x) <- (s-1-x, y)
    for (std::size_t y = 0; y < s; ++y)
        for (std::size_t x = 0; x < s; ++x)
            for (std::size_t ch = 0; ch < c; ++ch)
                dst[(y * s + x) * c + ch] = src[((s - 1 - x) * s + y) * c + ch];
    return out;
}

Tensor hflip(const Tensor& img) {
    const std::size_t s = img.dim(0), c = img.dim(2);
    Tensor out = Tensor::zeros(img.shape());
    auto dst = out.data();
    const auto src = img.data();
    for (std::size_t y = 0; y < s; ++y)
        for (std::size_t x = 0; x < s; ++x)
            for (std::size_t ch = 0; ch < c; ++ch)
                dst[(y * s + x) * c + ch] = src[(y * s + (s - 1 - x)) * c + ch];
    return out;
}

Tensor zoom_crop(const Tensor& img, double factor) {
    const std::size_t s = img.dim(0), c = img.dim(2);
    const auto crop = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(double(s) * factor)));
    const std::size_t off = (s - std::min(crop, s)) / 2;
    Tensor out = Tensor::zeros(img.shape());
    auto dst = out.data();
    const auto src = img.data();
    for (std::size_t y = 0; y < s; ++y) {
        const std::size_t sy = off + (y * crop) / s;
        for (std::size_t x = 0; x < s; ++x) {
            const std::size_t sx = off + (x * crop) / s;
            for (std::size_t ch = 0; ch < c; ++ch)
                dst[(y * s + x) * c + ch] = src[(sy * s + sx) * c + ch];
        }
    }
    return out;
}

}  // namespace

Tensor augment(const Tensor& image, Rng& rng) {
    if (image.rank() != 3 || image.dim(0) != image.dim(1))
        throw ConfigError("augment: expected a square [s x s x c] image, got " +
                          shape_str(image.shape()));
    switch (rng.next_below(6)) {
        case 0: return Tensor::from(image.shape(), {image.data().begin(), image.data().end()});
        case 1: return rotate90(image);
        case 2: return rotate90(rotate90(image));
        case 3: return rotate90(rotate90(rotate90(image)));
        case 4: return hflip(image);
        default: return zoom_crop(image, rng.next_uniform(0.8, 1.0));
    }
}

// ---- atomic writes ---------------------------------------------------------------------

void atomic_write_file(const fs::path& path, const std::string& contents) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        out.flush();
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
}

}  // namespace etma
