#include "etma/nn.hpp"

#include <cmath>

namespace etma::nn {

namespace {
constexpr double kInitStddev = 0.02;
constexpr double kMaskedLogit = -1e30;
}  // namespace

// ---- Linear ---------------------------------------------------------------

Linear::Linear(std::size_t in_dim, std::size_t out_dim, Rng& rng, bool with_bias)
    : has_bias(with_bias) {
    weight = Tensor::trunc_normal({out_dim, in_dim}, rng, kInitStddev);
    weight.set_requires_grad();
    if (has_bias) {
        bias = Tensor::zeros({out_dim});
        bias.set_requires_grad();
    }
}

Tensor Linear::forward(const Tensor& x) const {
    if (x.rank() != 2 || x.dim(1) != weight.dim(1))
        throw ConfigError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                          shape_str(weight.shape()));
    Tensor y = matmul_nt(x, weight);
    return has_bias ? add(y, bias) : y;
}

void Linear::collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".w", weight});
    if (has_bias) out.push_back({prefix + ".b", bias});
}

// ---- LayerNorm --------------------------------------------------------------

LayerNorm::LayerNorm(std::size_t dim, double eps_in) : eps(eps_in) {
    gamma = Tensor::full({dim}, 1.0);
    gamma.set_requires_grad();
    beta = Tensor::zeros({dim});
    beta.set_requires_grad();
}

Tensor LayerNorm::forward(const Tensor& x) const {
    if (x.dim(x.rank() - 1) != gamma.dim(0))
        throw ConfigError("layernorm: token dim " + shape_str(x.shape()) +
                          " does not match scale " + shape_str(gamma.shape()));
    return add(mul(layernorm_rows(x, eps), gamma), beta);
}

void LayerNorm::collect(const std::string& prefix, ParamList& out) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
}

// ---- Dropout ------------------------------------------------------------------

Dropout::Dropout(double rate_in) : rate(rate_in) {
    if (rate < 0.0 || rate >= 1.0)
        throw ConfigError("dropout rate must lie in [0,1), got " + std::to_string(rate));
}

Tensor Dropout::apply(const Tensor& x, bool train, Rng* rng) const {
    if (!train || rate == 0.0) return x;
    if (!rng) throw ContractError("dropout: train mode needs a generator");
    const double keep_scale = 1.0 / (1.0 - rate);
    std::vector<double> mask(x.size());
    for (double& v : mask) v = rng->next_uniform() < rate ? 0.0 : keep_scale;
    return mul(x, Tensor::from(x.shape(), std::move(mask)));
}

// ---- MultiHeadSelfAttention ------------------------------------------------------

MultiHeadSelfAttention::MultiHeadSelfAttention(std::size_t dim_in, std::size_t heads_in, Rng& rng,
                                               bool qkv_bias)
    : dim(dim_in), heads(heads_in) {
    if (heads == 0 || dim % heads != 0)
        throw ConfigError("attention: dim " + std::to_string(dim) + " not divisible by " +
                          std::to_string(heads) + " heads");
    head_dim = dim / heads;
    wq = Linear(dim, dim, rng, qkv_bias);
    wk = Linear(dim, dim, rng, qkv_bias);
    wv = Linear(dim, dim, rng, qkv_bias);
    wo = Linear(dim, dim, rng, true);
}

Tensor MultiHeadSelfAttention::forward(const Tensor& tokens, const Mask* mask,
                                       std::vector<Tensor>* weights_out) const {
    const std::size_t n = tokens.dim(0);
    if (mask && mask->size() != n)
        throw ConfigError("attention: mask length " + std::to_string(mask->size()) +
                          " does not match " + std::to_string(n) + " tokens");

    Tensor q = wq.forward(tokens);
    Tensor k = wk.forward(tokens);
    Tensor v = wv.forward(tokens);

    Tensor key_bias;  // additive large-negative bias for padded keys
    if (mask) {
        std::vector<double> bias(n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            if (!(*mask)[i]) bias[i] = kMaskedLogit;
        key_bias = Tensor::from({n}, std::move(bias));
    }

    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
    std::vector<Tensor> head_outputs;
    head_outputs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        Tensor qh = slice(q, 1, h * head_dim, (h + 1) * head_dim);
        Tensor kh = slice(k, 1, h * head_dim, (h + 1) * head_dim);
        Tensor vh = slice(v, 1, h * head_dim, (h + 1) * head_dim);
        Tensor logits = mul(matmul_nt(qh, kh), Tensor::scalar(inv_sqrt));
        if (mask) logits = add(logits, key_bias);
        Tensor attn = softmax(logits, 1);
        if (weights_out) weights_out->push_back(attn);
        head_outputs.push_back(matmul(attn, vh));
    }
    return wo.forward(concat(head_outputs, 1));
}

void MultiHeadSelfAttention::collect(const std::string& prefix, ParamList& out) const {
    wq.collect(prefix + ".wq", out);
    wk.collect(prefix + ".wk", out);
    wv.collect(prefix + ".wv", out);
    wo.collect(prefix + ".wo", out);
}

// ---- MlpBlock --------------------------------------------------------------------

MlpBlock::MlpBlock(std::size_t dim, std::size_t hidden, Rng& rng)
    : fc1(dim, hidden, rng), fc2(hidden, dim, rng) {}

Tensor MlpBlock::forward(const Tensor& x) const { return fc2.forward(gelu(fc1.forward(x))); }

void MlpBlock::collect(const std::string& prefix, ParamList& out) const {
    fc1.collect(prefix + ".fc1", out);
    fc2.collect(prefix + ".fc2", out);
}

// ---- EncoderBlock -------------------------------------------------------------------

EncoderBlock::EncoderBlock(std::size_t dim, std::size_t heads, std::size_t mlp_ratio,
                           double dropout, Rng& rng, bool qkv_bias, double ln_eps)
    : norm1(dim, ln_eps),
      norm2(dim, ln_eps),
      msa(dim, heads, rng, qkv_bias),
      mlp(dim, dim * mlp_ratio, rng),
      drop(dropout) {}

Tensor EncoderBlock::forward(const Tensor& tokens, const Mask* mask, bool train, Rng* rng,
                             std::vector<Tensor>* attn_weights) const {
    Tensor attended = add(tokens, drop.apply(msa.forward(norm1.forward(tokens), mask, attn_weights),
                                             train, rng));
    return add(attended, drop.apply(mlp.forward(norm2.forward(attended)), train, rng));
}

void EncoderBlock::collect(const std::string& prefix, ParamList& out) const {
    norm1.collect(prefix + ".norm1", out);
    msa.collect(prefix + ".msa", out);
    norm2.collect(prefix + ".norm2", out);
    mlp.collect(prefix + ".mlp", out);
}

}  // namespace etma::nn
