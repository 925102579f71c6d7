#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "etma/embed.hpp"
#include "etma/nn.hpp"
#include "etma/tensor.hpp"

namespace etma {

enum class Variant {
    Full,
    NoSelfAttn,
    NoVsAttn,
    NoVisualEncoder,
    NoTextEncoder,
    TextOnly,
    ImageOnly,
};

inline constexpr Variant kAllVariants[] = {
    Variant::Full,          Variant::NoSelfAttn,    Variant::NoVsAttn, Variant::NoVisualEncoder,
    Variant::NoTextEncoder, Variant::TextOnly,      Variant::ImageOnly,
};

const char* variant_label(Variant v);
Variant variant_from_label(const std::string& label);

struct ModelConfig {
    std::size_t image_size = 32;
    std::size_t patch = 8;
    std::size_t channels = 3;
    std::size_t dim = 64;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t joint_dim = 64;
    std::size_t n_max = 32;
    std::size_t mlp_ratio = 4;
    std::size_t vocab_size = 0;  // resolved once the vocabulary is built
    double dropout = 0.3;
    double ln_eps = 1e-5;
    bool qkv_bias = true;

    std::size_t grid() const { return image_size / patch; }
    std::size_t patch_count() const { return grid() * grid(); }
    void validate() const;
};

/// One preprocessed input: raw [h x w x c] image in [0,1] plus tokenized
/// text. Normalization happens at the point of use so augmentation can run
/// on raw pixels.
struct PreparedSample {
    std::string id;
    Tensor image;
    std::vector<int> token_ids;
    nn::Mask token_mask;
    int label = 0;  // 0 = real, 1 = fake
};

/// Patch embedding, a stack of encoder blocks, and a closing norm; token 0
/// is the class token, tokens 1.. are region features.
class VisualEncoder {
public:
    VisualEncoder() = default;
    VisualEncoder(const ModelConfig& cfg, Rng& rng);

    Tensor forward(const Tensor& image, bool train, Rng* rng) const;
    void collect(const std::string& prefix, nn::ParamList& out) const;

    PatchEmbedder embed;
    std::vector<nn::EncoderBlock> blocks;
    nn::LayerNorm norm;
};

/// Token/segment/position embedding and encoder blocks over text; the
/// pooled representation is the CLS position of the final sequence.
class TextEncoder {
public:
    TextEncoder() = default;
    TextEncoder(const ModelConfig& cfg, Rng& rng);

    /// `embedding_out`, when given, receives the embedder output (the
    /// pre-encoder token vectors).
    Tensor forward(const std::vector<int>& ids, const nn::Mask& mask, bool train, Rng* rng,
                   Tensor* embedding_out = nullptr) const;
    void collect(const std::string& prefix, nn::ParamList& out) const;

    TextEmbedder embed;
    std::vector<nn::EncoderBlock> blocks;
    nn::LayerNorm norm;
};

/// Cross-modal scoring: each region and the pooled text are projected into
/// a joint space and combined elementwise; a bounded score per region turns
/// into a softmax weight, and regions are rescaled by their weights.
class VisualSemanticAttention {
public:
    VisualSemanticAttention() = default;
    VisualSemanticAttention(std::size_t dim, std::size_t joint_dim, Rng& rng);

    struct Result {
        Tensor attended;  // [N_p x dim], row r = weight_r * region_r
        Tensor weights;   // [N_p], sums to 1
    };
    Result forward(const Tensor& regions, const Tensor& text_pooled) const;
    void collect(const std::string& prefix, nn::ParamList& out) const;

    Tensor img_proj;  // [joint x dim]
    Tensor txt_proj;  // [joint x dim]
    Tensor score_w;   // [joint]
    Tensor score_b;   // scalar
};

/// Softmax-weighted average over a sequence of feature vectors, scored by a
/// bounded per-position projection.
class SelfAttentionFusion {
public:
    SelfAttentionFusion() = default;
    SelfAttentionFusion(std::size_t dim, std::size_t joint_dim, Rng& rng);

    struct Result {
        Tensor fused;    // [1 x dim]
        Tensor weights;  // [K], sums to 1
    };
    Result forward(const Tensor& features) const;
    void collect(const std::string& prefix, nn::ParamList& out) const;

    Tensor proj;     // [joint x dim]
    Tensor score_w;  // [joint]
    Tensor score_b;  // scalar
};

class ClassifierHead {
public:
    ClassifierHead() = default;
    ClassifierHead(std::size_t dim, Rng& rng);

    Tensor forward(const Tensor& fused) const;  // [1 x 2] probabilities
    void collect(const std::string& prefix, nn::ParamList& out) const;

    nn::Linear fc;
};

struct ForwardTrace {
    Tensor probs;           // [1 x 2]
    Tensor fused;           // [1 x dim]
    Tensor region_weights;  // empty unless the variant runs cross-modal attention
    Tensor fusion_weights;  // empty unless the variant runs fusion
    Tensor text_embedding;  // embedder output, for gradient saliency readouts
};

class EtmaModel {
public:
    EtmaModel(const ModelConfig& cfg, Variant variant, Rng& rng);

    ForwardTrace forward(const PreparedSample& sample, bool train = false,
                         Rng* rng = nullptr) const;
    /// Everything before the classifier head; what the latency harness
    /// clocks as feature formulation.
    Tensor features(const PreparedSample& sample, ForwardTrace* trace = nullptr) const;
    Tensor classify(const Tensor& fused) const;

    nn::ParamList parameters() const;
    std::size_t parameter_count() const;
    void zero_grad() const;

    const ModelConfig& config() const { return config_; }
    Variant variant() const { return variant_; }

private:
    Tensor features_impl(const PreparedSample& sample, bool train, Rng* rng,
                         ForwardTrace* trace) const;
    Tensor run_fusion(const Tensor& features, ForwardTrace* trace) const;

    ModelConfig config_;
    Variant variant_;
    std::optional<VisualEncoder> visual_;
    std::optional<PatchEmbedder> patch_embed_;  // NoVisualEncoder keeps only the embedder
    std::optional<TextEncoder> text_;
    std::optional<TextEmbedder> text_embed_;  // NoTextEncoder keeps only the embedder
    std::optional<VisualSemanticAttention> vs_attn_;
    std::optional<SelfAttentionFusion> fusion_;
    ClassifierHead head_;
};

}  // namespace etma
