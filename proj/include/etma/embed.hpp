#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "etma/nn.hpp"
#include "etma/tensor.hpp"

namespace etma {

/// Token ids with reserved slots PAD=0, UNK=1, CLS=2, SEP=3; regular tokens
/// follow in insertion order.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kCls = 2;
    static constexpr int kSep = 3;
    static constexpr int kReserved = 4;

    int add(const std::string& token);        // returns existing id if known
    int id(const std::string& token) const;   // UNK fallback
    const std::string& token(int id) const;   // reserved ids included
    std::size_t size() const { return kReserved + tokens_.size(); }

    /// Insertion-ordered tokens from a corpus, keeping those with at least
    /// `min_freq` occurrences.
    static Vocabulary build(const std::vector<std::vector<std::string>>& corpus,
                            std::size_t min_freq = 1);

    /// One non-reserved token per line; line number = id - 4.
    void save(const std::filesystem::path& path) const;
    static Vocabulary load(const std::filesystem::path& path);

private:
    std::unordered_map<std::string, int> ids_;
    std::vector<std::string> tokens_;
};

using StopwordSet = std::unordered_set<std::string>;

/// Small built-in English function-word list.
const StopwordSet& default_stopwords();
StopwordSet load_stopwords(const std::filesystem::path& path);

/// Lowercase, strip punctuation to spaces, split on whitespace, drop
/// stopwords.
std::vector<std::string> split_words(const std::string& text, const StopwordSet& stopwords);

struct TokenizedText {
    std::vector<int> ids;            // length n_max: [CLS, tokens..., PAD...]
    std::vector<std::uint8_t> mask;  // 1 on CLS and real tokens
};

TokenizedText tokenize(const std::string& text, const Vocabulary& vocab, std::size_t n_max,
                       const StopwordSet& stopwords);

/// Rows are the row-major flattening of each P x P x c tile, tiles
/// enumerated row-major over the grid. No gradient path: images are inputs.
Tensor patchify(const Tensor& image, std::size_t patch);

/// Patch projection with a prepended class token and learned positions.
class PatchEmbedder {
public:
    PatchEmbedder() = default;
    PatchEmbedder(std::size_t image_size, std::size_t patch, std::size_t channels, std::size_t dim,
                  double dropout, Rng& rng);

    /// [h x w x c] image -> [(N_p + 1) x dim]; position 0 is the class token.
    Tensor forward(const Tensor& image, bool train, Rng* rng) const;
    void collect(const std::string& prefix, nn::ParamList& out) const;

    std::size_t patch = 0, channels = 0, dim = 0, tokens = 0;  // tokens = N_p + 1
    nn::Linear proj;
    Tensor class_token;  // [1 x dim]
    Tensor pos_embed;    // [(N_p + 1) x dim]
    nn::Dropout drop;
};

/// Token + segment + position tables, summed per position. Inputs are
/// single passages, so every position uses segment 0; the second segment
/// row exists for two-sentence inputs.
class TextEmbedder {
public:
    TextEmbedder() = default;
    TextEmbedder(std::size_t vocab_size, std::size_t dim, std::size_t n_max, double dropout,
                 Rng& rng);

    Tensor forward(const std::vector<int>& ids, bool train, Rng* rng) const;
    void collect(const std::string& prefix, nn::ParamList& out) const;

    std::size_t dim = 0, n_max = 0;
    Tensor token_table;    // [V x dim]
    Tensor segment_table;  // [2 x dim]
    Tensor pos_table;      // [n_max x dim]
    nn::Dropout drop;
};

}  // namespace etma
