#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mtlk/tensor.hpp"

namespace mtlk::nn {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

struct LinearLayer {
    Tensor weight;  // out x in
    Tensor bias;    // out
    bool trainable = true;

    static LinearLayer init(std::size_t in, std::size_t out, Rng& rng);

    Tensor forward(const Tensor& x) const { return linear(x, weight, bias); }
    std::size_t in_features() const { return weight.cols(); }
    std::size_t out_features() const { return weight.rows(); }

    void set_trainable(bool on);
    void collect(const std::string& prefix, NamedParams& out) const;
};

// Frozen base layer plus trainable low-rank delta. With down all-zero at
// init the forward equals the base forward exactly; training never touches
// the base weights.
struct LoraAdapter {
    LinearLayer base;
    Tensor down;  // rank x in, gaussian init
    Tensor up;    // out x rank, zero init
    std::size_t rank = 0;
    double alpha = 0.0;

    static LoraAdapter inject(const LinearLayer& base, std::size_t rank, double alpha, Rng& rng);

    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, NamedParams& out) const;
};

// Dense layer with weight W + (alpha/rank) * up . down; forward-equivalent to
// the adapter.
LinearLayer merge_lora(const LoraAdapter& adapter);

// Sinusoidal embedding of a flow time in [0,1]; first half sine, second half
// cosine, frequencies geometric from 1 to 1000 rad. Distinct on a 1e-3 grid.
Tensor time_embed(double t, std::size_t dim);

enum class NormKind { LayerNorm };

struct TransformerConfig {
    std::size_t hidden = 64;
    std::size_t layers = 4;
    std::size_t heads = 4;
    std::size_t head_dim = 16;
    std::size_t mlp_layers = 2;
    NormKind norm = NormKind::LayerNorm;

    void validate() const;
};

// One pre-norm block: bidirectional self-attention plus an MLP, both with
// residual connections.
class TransformerBlock {
public:
    TransformerBlock(const TransformerConfig& cfg, Rng& rng);

    Tensor forward(const Tensor& x) const;  // frames x hidden
    void collect(const std::string& prefix, NamedParams& out) const;

private:
    TransformerConfig cfg_;
    Tensor ln1_gain_, ln1_bias_, ln2_gain_, ln2_bias_;
    LinearLayer qkv_;
    LinearLayer attn_out_;
    std::vector<LinearLayer> mlp_;
};

class TransformerStack {
public:
    TransformerStack() = default;
    TransformerStack(const TransformerConfig& cfg, Rng& rng);

    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, NamedParams& out) const;
    const TransformerConfig& config() const { return cfg_; }

private:
    TransformerConfig cfg_;
    std::vector<TransformerBlock> blocks_;
    Tensor final_gain_, final_bias_;
};

struct VelocityModelConfig {
    std::size_t in_channels = 42;
    std::size_t motion_dim = 16;
    std::size_t max_frames = 352;
    TransformerConfig transformer;
};

// Sequence-to-sequence velocity regressor: input projection, additive
// sinusoidal time embedding, learned per-frame positions, transformer stack,
// and a projection down to the motion dimension.
class VelocityModel {
public:
    VelocityModel() = default;
    VelocityModel(const VelocityModelConfig& cfg, Rng& rng);

    // frames x in_channels -> frames x motion_dim
    Tensor forward(const Tensor& input, double t, bool positional = true) const;

    NamedParams named_params() const;
    std::vector<Tensor> params() const;
    const VelocityModelConfig& config() const { return cfg_; }

private:
    VelocityModelConfig cfg_;
    LinearLayer in_proj_;
    Tensor positions_;  // max_frames x hidden
    TransformerStack stack_;
    LinearLayer out_proj_;
};

std::vector<Tensor> values_of(const NamedParams& params);

}  // namespace mtlk::nn
