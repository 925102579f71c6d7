#include "etma/model.hpp"

#include <cmath>

namespace etma {

const char* variant_label(Variant v) {
    switch (v) {
        case Variant::Full: return "full";
        case Variant::NoSelfAttn: return "no_self_attn";
        case Variant::NoVsAttn: return "no_vs_attn";
        case Variant::NoVisualEncoder: return "no_visual_encoder";
        case Variant::NoTextEncoder: return "no_text_encoder";
        case Variant::TextOnly: return "text_only";
        case Variant::ImageOnly: return "image_only";
    }
    throw ContractError("variant_label: unknown variant");
}

Variant variant_from_label(const std::string& label) {
    for (Variant v : kAllVariants) {
        if (label == variant_label(v)) return v;
    }
    throw ConfigError("unknown model variant: " + label);
}

void ModelConfig::validate() const {
    if (patch == 0 || image_size % patch != 0)
        throw ConfigError("model config: image size " + std::to_string(image_size) +
                          " not divisible by patch " + std::to_string(patch));
    if (heads == 0 || dim % heads != 0)
        throw ConfigError("model config: dim " + std::to_string(dim) + " not divisible by " +
                          std::to_string(heads) + " heads");
    if (dim == 0 || joint_dim == 0 || layers == 0 || n_max == 0 || channels == 0)
        throw ConfigError("model config: dims must be positive");
    if (dropout < 0.0 || dropout >= 1.0)
        throw ConfigError("model config: dropout must lie in [0,1)");
}

// ---- encoders ---------------------------------------------------------------

VisualEncoder::VisualEncoder(const ModelConfig& cfg, Rng& rng)
    : embed(cfg.image_size, cfg.patch, cfg.channels, cfg.dim, cfg.dropout, rng),
      norm(cfg.dim, cfg.ln_eps) {
    for (std::size_t l = 0; l < cfg.layers; ++l)
        blocks.emplace_back(cfg.dim, cfg.heads, cfg.mlp_ratio, cfg.dropout, rng, cfg.qkv_bias,
                            cfg.ln_eps);
}

Tensor VisualEncoder::forward(const Tensor& image, bool train, Rng* rng) const {
    Tensor tokens = embed.forward(image, train, rng);
    for (const auto& block : blocks) tokens = block.forward(tokens, nullptr, train, rng);
    return norm.forward(tokens);
}

void VisualEncoder::collect(const std::string& prefix, nn::ParamList& out) const {
    embed.collect(prefix + ".embed", out);
    for (std::size_t l = 0; l < blocks.size(); ++l)
        blocks[l].collect(prefix + ".block" + std::to_string(l), out);
    norm.collect(prefix + ".norm", out);
}

TextEncoder::TextEncoder(const ModelConfig& cfg, Rng& rng)
    : embed(cfg.vocab_size, cfg.dim, cfg.n_max, cfg.dropout, rng), norm(cfg.dim, cfg.ln_eps) {
    for (std::size_t l = 0; l < cfg.layers; ++l)
        blocks.emplace_back(cfg.dim, cfg.heads, cfg.mlp_ratio, cfg.dropout, rng, cfg.qkv_bias,
                            cfg.ln_eps);
}

Tensor TextEncoder::forward(const std::vector<int>& ids, const nn::Mask& mask, bool train,
                            Rng* rng, Tensor* embedding_out) const {
    Tensor tokens = embed.forward(ids, train, rng);
    if (embedding_out) *embedding_out = tokens;
    for (const auto& block : blocks) tokens = block.forward(tokens, &mask, train, rng);
    return norm.forward(tokens);
}

void TextEncoder::collect(const std::string& prefix, nn::ParamList& out) const {
    embed.collect(prefix + ".embed", out);
    for (std::size_t l = 0; l < blocks.size(); ++l)
        blocks[l].collect(prefix + ".block" + std::to_string(l), out);
    norm.collect(prefix + ".norm", out);
}

// ---- joint attention ----------------------------------------------------------

VisualSemanticAttention::VisualSemanticAttention(std::size_t dim, std::size_t joint_dim, Rng& rng) {
    img_proj = Tensor::trunc_normal({joint_dim, dim}, rng, 0.02);
    img_proj.set_requires_grad();
    txt_proj = Tensor::trunc_normal({joint_dim, dim}, rng, 0.02);
    txt_proj.set_requires_grad();
    score_w = Tensor::trunc_normal({joint_dim}, rng, 0.02);
    score_w.set_requires_grad();
    score_b = Tensor::zeros({});
    score_b.set_requires_grad();
}

VisualSemanticAttention::Result VisualSemanticAttention::forward(const Tensor& regions,
                                                                 const Tensor& text_pooled) const {
    if (regions.rank() != 2 || regions.dim(1) != img_proj.dim(1))
        throw ConfigError("visual-semantic attention: regions " + shape_str(regions.shape()) +
                          " do not match projection " + shape_str(img_proj.shape()));
    if (text_pooled.rank() != 2 || text_pooled.dim(0) != 1 ||
        text_pooled.dim(1) != txt_proj.dim(1))
        throw ConfigError("visual-semantic attention: text feature " +
                          shape_str(text_pooled.shape()) + " does not match projection " +
                          shape_str(txt_proj.shape()));
    const std::size_t joint = img_proj.dim(0);

    // joint_r = (A I_r) o (B t), one row per region
    Tensor proj_regions = matmul_nt(regions, img_proj);
    Tensor proj_text = reshape(matmul_nt(text_pooled, txt_proj), {joint});
    Tensor joint_feats = mul(proj_regions, proj_text);

    Tensor scores = tanh(add(matmul(joint_feats, reshape(score_w, {joint, 1})), score_b));
    Tensor weights = softmax(reshape(scores, {regions.dim(0)}), 0);
    return {scale_rows(regions, weights), weights};
}

void VisualSemanticAttention::collect(const std::string& prefix, nn::ParamList& out) const {
    out.push_back({prefix + ".img_proj", img_proj});
    out.push_back({prefix + ".txt_proj", txt_proj});
    out.push_back({prefix + ".w", score_w});
    out.push_back({prefix + ".b", score_b});
}

SelfAttentionFusion::SelfAttentionFusion(std::size_t dim, std::size_t joint_dim, Rng& rng) {
    proj = Tensor::trunc_normal({joint_dim, dim}, rng, 0.02);
    proj.set_requires_grad();
    score_w = Tensor::trunc_normal({joint_dim}, rng, 0.02);
    score_w.set_requires_grad();
    score_b = Tensor::zeros({});
    score_b.set_requires_grad();
}

SelfAttentionFusion::Result SelfAttentionFusion::forward(const Tensor& features) const {
    if (features.rank() != 2 || features.dim(0) == 0)
        throw ContractError("fusion: expected a nonempty [K x dim] feature sequence, got " +
                            shape_str(features.shape()));
    if (features.dim(1) != proj.dim(1))
        throw ConfigError("fusion: features " + shape_str(features.shape()) +
                          " do not match projection " + shape_str(proj.shape()));
    const std::size_t joint = proj.dim(0);
    const std::size_t count = features.dim(0);

    Tensor scores = tanh(add(matmul(matmul_nt(features, proj), reshape(score_w, {joint, 1})),
                             score_b));
    Tensor weights = softmax(reshape(scores, {count}), 0);
    Tensor fused = matmul(reshape(weights, {1, count}), features);
    return {fused, weights};
}

void SelfAttentionFusion::collect(const std::string& prefix, nn::ParamList& out) const {
    out.push_back({prefix + ".proj", proj});
    out.push_back({prefix + ".w", score_w});
    out.push_back({prefix + ".b", score_b});
}

ClassifierHead::ClassifierHead(std::size_t dim, Rng& rng) : fc(dim, 2, rng) {}

Tensor ClassifierHead::forward(const Tensor& fused) const {
    return softmax(fc.forward(fused), 1);
}

void ClassifierHead::collect(const std::string& prefix, nn::ParamList& out) const {
    fc.collect(prefix + ".fc", out);
}

// ---- assembled model -------------------------------------------------------------

namespace {

bool uses_visual_encoder(Variant v) {
    return v == Variant::Full || v == Variant::NoSelfAttn || v == Variant::NoVsAttn ||
           v == Variant::NoTextEncoder || v == Variant::ImageOnly;
}

bool uses_text_encoder(Variant v) {
    return v == Variant::Full || v == Variant::NoSelfAttn || v == Variant::NoVsAttn ||
           v == Variant::NoVisualEncoder || v == Variant::TextOnly;
}

bool uses_vs_attn(Variant v) {
    return v == Variant::Full || v == Variant::NoSelfAttn || v == Variant::NoVisualEncoder ||
           v == Variant::NoTextEncoder;
}

bool uses_fusion(Variant v) { return v != Variant::NoSelfAttn; }

}  // namespace

EtmaModel::EtmaModel(const ModelConfig& cfg, Variant variant, Rng& rng)
    : config_(cfg), variant_(variant) {
    config_.validate();
    const bool needs_text = uses_text_encoder(variant) || variant == Variant::NoTextEncoder;
    if (needs_text && config_.vocab_size == 0)
        throw ConfigError("model config: vocab_size is unset");

    if (uses_visual_encoder(variant)) visual_.emplace(config_, rng);
    if (variant == Variant::NoVisualEncoder)
        patch_embed_.emplace(config_.image_size, config_.patch, config_.channels, config_.dim,
                             config_.dropout, rng);
    if (uses_text_encoder(variant)) text_.emplace(config_, rng);
    if (variant == Variant::NoTextEncoder)
        text_embed_.emplace(config_.vocab_size, config_.dim, config_.n_max, config_.dropout, rng);
    if (uses_vs_attn(variant)) vs_attn_.emplace(config_.dim, config_.joint_dim, rng);
    if (uses_fusion(variant)) fusion_.emplace(config_.dim, config_.joint_dim, rng);
    head_ = ClassifierHead(config_.dim, rng);
}

namespace {

std::vector<int> unmasked_positions(const nn::Mask& mask) {
    std::vector<int> idx;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) idx.push_back(static_cast<int>(i));
    return idx;
}

}  // namespace

Tensor EtmaModel::run_fusion(const Tensor& features, ForwardTrace* trace) const {
    auto fused = fusion_->forward(features);
    if (trace) trace->fusion_weights = fused.weights;
    return fused.fused;
}

Tensor EtmaModel::features_impl(const PreparedSample& sample, bool train, Rng* rng,
                                ForwardTrace* trace) const {
    const bool wants_image = visual_.has_value() || patch_embed_.has_value();
    if (wants_image) {
        if (sample.image.rank() != 3 || sample.image.dim(0) != config_.image_size ||
            sample.image.dim(1) != config_.image_size || sample.image.dim(2) != config_.channels)
            throw ConfigError("forward: image " + shape_str(sample.image.shape()) +
                              " does not match the configured " +
                              std::to_string(config_.image_size) + "x" +
                              std::to_string(config_.image_size) + "x" +
                              std::to_string(config_.channels));
    }
    const bool wants_text = text_.has_value() || text_embed_.has_value();
    if (wants_text && sample.token_ids.size() != sample.token_mask.size())
        throw ConfigError("forward: token mask length does not match ids");

    // Visual side: region features plus an optional pooled (class token) row.
    Tensor regions, visual_pooled;
    if (visual_) {
        Tensor tokens = visual_->forward(sample.image, train, rng);
        if (variant_ == Variant::ImageOnly) return run_fusion(tokens, trace);
        regions = slice(tokens, 0, 1, tokens.dim(0));
        visual_pooled = slice(tokens, 0, 0, 1);
    } else if (patch_embed_) {
        Tensor emb = patch_embed_->forward(sample.image, train, rng);
        Tensor patch_rows = slice(emb, 0, 1, emb.dim(0));
        regions = reshape(mean(patch_rows, 0), {1, config_.dim});
    }

    // Text side: pooled CLS feature (or a bag-of-embeddings mean).
    Tensor text_pooled;
    if (text_) {
        Tensor embedding;
        Tensor tokens =
            text_->forward(sample.token_ids, sample.token_mask, train, rng, &embedding);
        if (trace) trace->text_embedding = embedding;
        if (variant_ == Variant::TextOnly) {
            Tensor real_rows = gather(tokens, unmasked_positions(sample.token_mask));
            return run_fusion(real_rows, trace);
        }
        text_pooled = slice(tokens, 0, 0, 1);
    } else if (text_embed_) {
        Tensor emb = text_embed_->forward(sample.token_ids, train, rng);
        if (trace) trace->text_embedding = emb;
        Tensor real_rows = gather(emb, unmasked_positions(sample.token_mask));
        text_pooled = reshape(mean(real_rows, 0), {1, config_.dim});
    }

    switch (variant_) {
        case Variant::Full:
        case Variant::NoVisualEncoder:
        case Variant::NoTextEncoder: {
            auto vs = vs_attn_->forward(regions, text_pooled);
            if (trace) trace->region_weights = vs.weights;
            return run_fusion(vs.attended, trace);
        }
        case Variant::NoSelfAttn: {
            auto vs = vs_attn_->forward(regions, text_pooled);
            if (trace) trace->region_weights = vs.weights;
            return reshape(mean(vs.attended, 0), {1, config_.dim});
        }
        case Variant::NoVsAttn: {
            Tensor pair = concat({visual_pooled, text_pooled}, 0);
            return run_fusion(pair, trace);
        }
        default:
            throw ContractError("forward: unreachable variant wiring");
    }
}

Tensor EtmaModel::features(const PreparedSample& sample, ForwardTrace* trace) const {
    return features_impl(sample, false, nullptr, trace);
}

Tensor EtmaModel::classify(const Tensor& fused) const { return head_.forward(fused); }

ForwardTrace EtmaModel::forward(const PreparedSample& sample, bool train, Rng* rng) const {
    if (train && !rng) throw ContractError("forward: train mode needs a generator");
    ForwardTrace trace;
    trace.fused = features_impl(sample, train, rng, &trace);
    trace.probs = head_.forward(trace.fused);
    return trace;
}

nn::ParamList EtmaModel::parameters() const {
    nn::ParamList out;
    if (visual_) visual_->collect("visual", out);
    if (patch_embed_) patch_embed_->collect("visual.embed", out);
    if (text_) text_->collect("text", out);
    if (text_embed_) text_embed_->collect("text.embed", out);
    if (vs_attn_) vs_attn_->collect("joint.vs", out);
    if (fusion_) fusion_->collect("joint.fusion", out);
    head_.collect("head", out);
    return out;
}

std::size_t EtmaModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.size();
    return n;
}

void EtmaModel::zero_grad() const {
    for (auto& p : parameters()) p.tensor.zero_grad();
}

}  // namespace etma
