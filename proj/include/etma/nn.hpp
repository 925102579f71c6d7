#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "etma/rng.hpp"
#include "etma/tensor.hpp"

namespace etma::nn {

struct NamedParam {
    std::string name;
    Tensor tensor;
};
using ParamList = std::vector<NamedParam>;

/// Key-padding mask; 1 marks a real position, 0 a padded one.
using Mask = std::vector<std::uint8_t>;

/// Affine map x[n x in] -> x W^T + b. Weights init Normal(0, 0.02)
/// truncated at 2 sigma, biases zero.
class Linear {
public:
    Linear() = default;
    Linear(std::size_t in_dim, std::size_t out_dim, Rng& rng, bool with_bias = true);

    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamList& out) const;

    Tensor weight;  // [out x in]
    Tensor bias;    // [out]; unused when with_bias = false
    bool has_bias = true;
};

class LayerNorm {
public:
    LayerNorm() = default;
    LayerNorm(std::size_t dim, double eps = 1e-5);

    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamList& out) const;

    Tensor gamma;  // [dim]
    Tensor beta;   // [dim]
    double eps = 1e-5;
};

/// Inverted dropout: identity in eval mode, survivors scaled by 1/(1-p)
/// in train mode.
class Dropout {
public:
    Dropout() = default;
    explicit Dropout(double rate);

    Tensor apply(const Tensor& x, bool train, Rng* rng) const;

    double rate = 0.0;
};

class MultiHeadSelfAttention {
public:
    MultiHeadSelfAttention() = default;
    MultiHeadSelfAttention(std::size_t dim, std::size_t heads, Rng& rng, bool qkv_bias = true);

    /// Scaled dot-product attention per head over tokens [n x dim]; masked
    /// key positions receive exactly zero weight. `weights_out`, when given,
    /// collects one [n x n] attention matrix per head.
    Tensor forward(const Tensor& tokens, const Mask* mask = nullptr,
                   std::vector<Tensor>* weights_out = nullptr) const;
    void collect(const std::string& prefix, ParamList& out) const;

    std::size_t dim = 0;
    std::size_t heads = 0;
    std::size_t head_dim = 0;
    Linear wq, wk, wv, wo;
};

/// Two affine layers with GeLU between; hidden = mlp_ratio * dim.
class MlpBlock {
public:
    MlpBlock() = default;
    MlpBlock(std::size_t dim, std::size_t hidden, Rng& rng);

    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamList& out) const;

    Linear fc1, fc2;
};

/// Pre-norm residual encoder block:
///   y = x + drop(MSA(Norm(x)))
///   z = y + drop(MLP(Norm(y)))
class EncoderBlock {
public:
    EncoderBlock() = default;
    EncoderBlock(std::size_t dim, std::size_t heads, std::size_t mlp_ratio, double dropout,
                 Rng& rng, bool qkv_bias = true, double ln_eps = 1e-5);

    Tensor forward(const Tensor& tokens, const Mask* mask, bool train, Rng* rng,
                   std::vector<Tensor>* attn_weights = nullptr) const;
    void collect(const std::string& prefix, ParamList& out) const;

    LayerNorm norm1, norm2;
    MultiHeadSelfAttention msa;
    MlpBlock mlp;
    Dropout drop;
};

}  // namespace etma::nn
