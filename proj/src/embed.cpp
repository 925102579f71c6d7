#include "etma/embed.hpp"

#include <cctype>
#include <fstream>
#include <map>

namespace etma {

// ---- Vocabulary -----------------------------------------------------------

int Vocabulary::add(const std::string& token) {
    auto it = ids_.find(token);
    if (it != ids_.end()) return it->second;
    const int id = kReserved + static_cast<int>(tokens_.size());
    tokens_.push_back(token);
    ids_.emplace(token, id);
    return id;
}

int Vocabulary::id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
    static const std::string reserved[kReserved] = {"<pad>", "<unk>", "<cls>", "<sep>"};
    if (id < 0 || static_cast<std::size_t>(id) >= size())
        throw IndexError("vocabulary: id " + std::to_string(id) + " out of range");
    if (id < kReserved) return reserved[id];
    return tokens_[static_cast<std::size_t>(id - kReserved)];
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& corpus,
                             std::size_t min_freq) {
    // First-appearance order; counted in a stable pass so the id assignment
    // does not depend on hash iteration.
    std::unordered_map<std::string, std::size_t> counts;
    std::vector<std::string> order;
    for (const auto& doc : corpus) {
        for (const auto& tok : doc) {
            if (counts[tok]++ == 0) order.push_back(tok);
        }
    }
    Vocabulary vocab;
    for (const auto& tok : order) {
        if (counts[tok] >= min_freq) vocab.add(tok);
    }
    return vocab;
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("vocabulary: cannot write " + path.string());
    for (const auto& tok : tokens_) out << tok << "\n";
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("vocabulary: cannot read " + path.string());
    Vocabulary vocab;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) vocab.add(line);
    }
    return vocab;
}

// ---- tokenization ------------------------------------------------------------

const StopwordSet& default_stopwords() {
    static const StopwordSet words = {
        "a",    "an",  "and",  "are", "as",   "at",   "be",   "but", "by",   "for",
        "from", "has", "have", "he",  "her",  "his",  "i",    "in",  "is",   "it",
        "its",  "of",  "on",   "or",  "she",  "that", "the",  "to",  "was",  "were",
        "will", "with", "you", "this", "they", "we",   "not",  "had", "been", "their",
    };
    return words;
}

StopwordSet load_stopwords(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("stopwords: cannot read " + path.string());
    StopwordSet words;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) words.insert(line);
    }
    return words;
}

std::vector<std::string> split_words(const std::string& text, const StopwordSet& stopwords) {
    std::string cleaned;
    cleaned.reserve(text.size());
    for (unsigned char c : text) {
        if (std::isalnum(c))
            cleaned.push_back(static_cast<char>(std::tolower(c)));
        else
            cleaned.push_back(' ');
    }
    std::vector<std::string> words;
    std::size_t i = 0;
    while (i < cleaned.size()) {
        while (i < cleaned.size() && cleaned[i] == ' ') ++i;
        std::size_t j = i;
        while (j < cleaned.size() && cleaned[j] != ' ') ++j;
        if (j > i) {
            std::string word = cleaned.substr(i, j - i);
            if (!stopwords.count(word)) words.push_back(std::move(word));
        }
        i = j;
    }
    return words;
}

TokenizedText tokenize(const std::string& text, const Vocabulary& vocab, std::size_t n_max,
                       const StopwordSet& stopwords) {
    if (n_max == 0) throw ConfigError("tokenize: n_max must be positive");
    const std::vector<std::string> words = split_words(text, stopwords);

    TokenizedText out;
    out.ids.reserve(n_max);
    out.ids.push_back(Vocabulary::kCls);
    for (const auto& w : words) {
        if (out.ids.size() == n_max) break;
        out.ids.push_back(vocab.id(w));
    }
    out.mask.assign(out.ids.size(), 1);
    while (out.ids.size() < n_max) {
        out.ids.push_back(Vocabulary::kPad);
        out.mask.push_back(0);
    }
    return out;
}

// ---- patch embedding -----------------------------------------------------------

Tensor patchify(const Tensor& image, std::size_t patch) {
    if (image.rank() != 3)
        throw ConfigError("patchify: expected an [h x w x c] image, got " +
                          shape_str(image.shape()));
    const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
    if (patch == 0 || h % patch != 0 || w % patch != 0)
        throw ConfigError("patchify: image " + std::to_string(h) + "x" + std::to_string(w) +
                          " not divisible by patch size " + std::to_string(patch));
    const std::size_t rows = h / patch, cols = w / patch;
    const std::size_t patch_len = patch * patch * c;

    Tensor out = Tensor::zeros({rows * cols, patch_len});
    auto od = out.data();
    const auto id = image.data();
    for (std::size_t pr = 0; pr < rows; ++pr) {
        for (std::size_t pc = 0; pc < cols; ++pc) {
            double* dst = od.data() + (pr * cols + pc) * patch_len;
            for (std::size_t y = 0; y < patch; ++y) {
                const double* src = id.data() + ((pr * patch + y) * w + pc * patch) * c;
                for (std::size_t i = 0; i < patch * c; ++i) dst[y * patch * c + i] = src[i];
            }
        }
    }
    return out;
}

PatchEmbedder::PatchEmbedder(std::size_t image_size, std::size_t patch_in, std::size_t channels_in,
                             std::size_t dim_in, double dropout, Rng& rng)
    : patch(patch_in), channels(channels_in), dim(dim_in), drop(dropout) {
    if (patch == 0 || image_size % patch != 0)
        throw ConfigError("patch embedder: image size " + std::to_string(image_size) +
                          " not divisible by patch " + std::to_string(patch));
    const std::size_t grid = image_size / patch;
    tokens = grid * grid + 1;
    proj = nn::Linear(patch * patch * channels, dim, rng);
    class_token = Tensor::trunc_normal({1, dim}, rng, 0.02);
    class_token.set_requires_grad();
    pos_embed = Tensor::trunc_normal({tokens, dim}, rng, 0.02);
    pos_embed.set_requires_grad();
}

Tensor PatchEmbedder::forward(const Tensor& image, bool train, Rng* rng) const {
    Tensor patches = patchify(image, patch);
    if (patches.dim(0) + 1 != tokens)
        throw ConfigError("patch embedder: image yields " + std::to_string(patches.dim(0)) +
                          " patches, expected " + std::to_string(tokens - 1));
    Tensor sequence = concat({class_token, proj.forward(patches)}, 0);
    return drop.apply(add(sequence, pos_embed), train, rng);
}

void PatchEmbedder::collect(const std::string& prefix, nn::ParamList& out) const {
    proj.collect(prefix + ".proj", out);
    out.push_back({prefix + ".cls", class_token});
    out.push_back({prefix + ".pos", pos_embed});
}

// ---- text embedding --------------------------------------------------------------

TextEmbedder::TextEmbedder(std::size_t vocab_size, std::size_t dim_in, std::size_t n_max_in,
                           double dropout, Rng& rng)
    : dim(dim_in), n_max(n_max_in), drop(dropout) {
    token_table = Tensor::trunc_normal({vocab_size, dim}, rng, 0.02);
    token_table.set_requires_grad();
    segment_table = Tensor::trunc_normal({2, dim}, rng, 0.02);
    segment_table.set_requires_grad();
    pos_table = Tensor::trunc_normal({n_max, dim}, rng, 0.02);
    pos_table.set_requires_grad();
}

Tensor TextEmbedder::forward(const std::vector<int>& ids, bool train, Rng* rng) const {
    if (ids.size() > n_max)
        throw ConfigError("text embedder: sequence length " + std::to_string(ids.size()) +
                          " exceeds position table with " + std::to_string(n_max) + " rows");
    Tensor tok = gather(token_table, ids);
    Tensor seg = reshape(slice(segment_table, 0, 0, 1), {dim});  // all positions: segment 0
    Tensor pos = slice(pos_table, 0, 0, ids.size());
    return drop.apply(add(add(tok, seg), pos), train, rng);
}

void TextEmbedder::collect(const std::string& prefix, nn::ParamList& out) const {
    out.push_back({prefix + ".tok", token_table});
    out.push_back({prefix + ".seg", segment_table});
    out.push_back({prefix + ".pos", pos_table});
}

}  // namespace etma
