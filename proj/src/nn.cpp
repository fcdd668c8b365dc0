#include "mtlk/nn.hpp"

#include <cmath>

namespace mtlk::nn {

namespace {

Tensor gaussian(Shape shape, double std_dev, Rng& rng) {
    std::vector<double> v(std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                                          std::multiplies<>()));
    for (double& x : v) x = std_dev * rng.normal();
    return Tensor::from_data(std::move(shape), std::move(v)).set_requires_grad(true);
}

}  // namespace

LinearLayer LinearLayer::init(std::size_t in, std::size_t out, Rng& rng) {
    LinearLayer layer;
    layer.weight = gaussian({out, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    layer.bias = Tensor::zeros({out}).set_requires_grad(true);
    return layer;
}

void LinearLayer::set_trainable(bool on) {
    trainable = on;
    weight.set_requires_grad(on);
    bias.set_requires_grad(on);
}

void LinearLayer::collect(const std::string& prefix, NamedParams& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
}

LoraAdapter LoraAdapter::inject(const LinearLayer& base, std::size_t rank, double alpha,
                                Rng& rng) {
    const std::size_t in = base.in_features(), out = base.out_features();
    if (rank == 0 || rank > std::min(in, out)) {
        throw ValueError("lora: rank " + std::to_string(rank) + " invalid for " +
                         std::to_string(out) + "x" + std::to_string(in) + " layer");
    }
    LoraAdapter adapter;
    adapter.base = base;
    adapter.base.set_trainable(false);
    adapter.down = gaussian({rank, in}, 0.02, rng);
    adapter.up = Tensor::zeros({out, rank}).set_requires_grad(true);
    adapter.rank = rank;
    adapter.alpha = alpha;
    return adapter;
}

Tensor LoraAdapter::forward(const Tensor& x) const {
    Tensor y = base.forward(x);
    Tensor h = matmul_nt(x, down);        // T x rank
    Tensor delta = matmul_nt(h, up);      // T x out
    return add(y, scale(delta, alpha / static_cast<double>(rank)));
}

void LoraAdapter::collect(const std::string& prefix, NamedParams& out) const {
    out.emplace_back(prefix + ".down", down);
    out.emplace_back(prefix + ".up", up);
}

LinearLayer merge_lora(const LoraAdapter& adapter) {
    NoGradGuard guard;
    Tensor delta = matmul(adapter.up, adapter.down);  // out x in
    LinearLayer merged;
    merged.weight =
        add(adapter.base.weight, scale(delta, adapter.alpha / static_cast<double>(adapter.rank)))
            .detach();
    merged.bias = adapter.base.bias.detach();
    merged.trainable = false;
    return merged;
}

Tensor time_embed(double t, std::size_t dim) {
    if (t < 0.0 || t > 1.0) throw ValueError("time_embed: t out of [0,1]");
    if (dim < 2 || dim % 2 != 0) throw ValueError("time_embed: dim must be even and >= 2");
    const std::size_t half = dim / 2;
    std::vector<double> v(dim);
    for (std::size_t i = 0; i < half; ++i) {
        const double expo = half > 1 ? static_cast<double>(i) / static_cast<double>(half - 1) : 0.0;
        const double freq = std::pow(1000.0, expo);
        v[i] = std::sin(freq * t);
        v[half + i] = std::cos(freq * t);
    }
    return Tensor::from_data({dim}, std::move(v));
}

void TransformerConfig::validate() const {
    if (hidden != heads * head_dim) {
        throw ValueError("transformer: hidden (" + std::to_string(hidden) +
                         ") != heads*head_dim (" + std::to_string(heads * head_dim) + ")");
    }
    if (layers == 0 || mlp_layers == 0) throw ValueError("transformer: empty stack");
}

TransformerBlock::TransformerBlock(const TransformerConfig& cfg, Rng& rng) : cfg_(cfg) {
    const std::size_t h = cfg.hidden;
    ln1_gain_ = Tensor::ones({h}).set_requires_grad(true);
    ln1_bias_ = Tensor::zeros({h}).set_requires_grad(true);
    ln2_gain_ = Tensor::ones({h}).set_requires_grad(true);
    ln2_bias_ = Tensor::zeros({h}).set_requires_grad(true);
    qkv_ = LinearLayer::init(h, 3 * h, rng);
    attn_out_ = LinearLayer::init(h, h, rng);
    const std::size_t ff = 4 * h;
    for (std::size_t i = 0; i < cfg.mlp_layers; ++i) {
        const std::size_t in = i == 0 ? h : ff;
        const std::size_t out = i + 1 == cfg.mlp_layers ? h : ff;
        mlp_.push_back(LinearLayer::init(in, out, rng));
    }
}

Tensor TransformerBlock::forward(const Tensor& x) const {
    const std::size_t h = cfg_.hidden, heads = cfg_.heads, d = cfg_.head_dim;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    Tensor normed = layer_norm(x, ln1_gain_, ln1_bias_);
    Tensor qkv = qkv_.forward(normed);  // T x 3h
    std::vector<Tensor> ctx;
    ctx.reserve(heads);
    for (std::size_t i = 0; i < heads; ++i) {
        Tensor q = slice_cols(qkv, i * d, d);
        Tensor k = slice_cols(qkv, h + i * d, d);
        Tensor v = slice_cols(qkv, 2 * h + i * d, d);
        Tensor scores = scale(matmul_nt(q, k), inv_sqrt_d);  // T x T
        Tensor weights = softmax(scores, 1);
        ctx.push_back(matmul(weights, v));
    }
    Tensor attended = attn_out_.forward(concat_cols(ctx));
    Tensor after_attn = add(x, attended);

    Tensor m = layer_norm(after_attn, ln2_gain_, ln2_bias_);
    for (std::size_t i = 0; i < mlp_.size(); ++i) {
        m = mlp_[i].forward(m);
        if (i + 1 < mlp_.size()) m = gelu(m);
    }
    return add(after_attn, m);
}

void TransformerBlock::collect(const std::string& prefix, NamedParams& out) const {
    out.emplace_back(prefix + ".ln1.gain", ln1_gain_);
    out.emplace_back(prefix + ".ln1.bias", ln1_bias_);
    qkv_.collect(prefix + ".qkv", out);
    attn_out_.collect(prefix + ".attn_out", out);
    out.emplace_back(prefix + ".ln2.gain", ln2_gain_);
    out.emplace_back(prefix + ".ln2.bias", ln2_bias_);
    for (std::size_t i = 0; i < mlp_.size(); ++i) {
        mlp_[i].collect(prefix + ".mlp." + std::to_string(i), out);
    }
}

TransformerStack::TransformerStack(const TransformerConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    for (std::size_t i = 0; i < cfg.layers; ++i) blocks_.emplace_back(cfg, rng);
    final_gain_ = Tensor::ones({cfg.hidden}).set_requires_grad(true);
    final_bias_ = Tensor::zeros({cfg.hidden}).set_requires_grad(true);
}

Tensor TransformerStack::forward(const Tensor& x) const {
    Tensor h = x;
    for (const TransformerBlock& block : blocks_) h = block.forward(h);
    return layer_norm(h, final_gain_, final_bias_);
}

void TransformerStack::collect(const std::string& prefix, NamedParams& out) const {
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        blocks_[i].collect(prefix + ".blocks." + std::to_string(i), out);
    }
    out.emplace_back(prefix + ".final.gain", final_gain_);
    out.emplace_back(prefix + ".final.bias", final_bias_);
}

VelocityModel::VelocityModel(const VelocityModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.transformer.validate();
    in_proj_ = LinearLayer::init(cfg.in_channels, cfg.transformer.hidden, rng);
    positions_ = gaussian({cfg.max_frames, cfg.transformer.hidden}, 0.02, rng);
    stack_ = TransformerStack(cfg.transformer, rng);
    out_proj_ = LinearLayer::init(cfg.transformer.hidden, cfg.motion_dim, rng);
}

Tensor VelocityModel::forward(const Tensor& input, double t, bool positional) const {
    if (input.cols() != cfg_.in_channels) {
        throw ShapeError("velocity model: input width " + std::to_string(input.cols()) +
                         " != " + std::to_string(cfg_.in_channels));
    }
    const std::size_t frames = input.rows();
    if (frames > cfg_.max_frames) {
        throw ShapeError("velocity model: " + std::to_string(frames) + " frames exceeds max " +
                         std::to_string(cfg_.max_frames));
    }
    Tensor h = in_proj_.forward(input);
    h = add_rowvec(h, time_embed(t, cfg_.transformer.hidden));
    if (positional) h = add(h, slice_rows(positions_, 0, frames));
    h = stack_.forward(h);
    return out_proj_.forward(h);
}

NamedParams VelocityModel::named_params() const {
    NamedParams out;
    in_proj_.collect("in_proj", out);
    out.emplace_back("positions", positions_);
    stack_.collect("stack", out);
    out_proj_.collect("out_proj", out);
    return out;
}

std::vector<Tensor> VelocityModel::params() const { return values_of(named_params()); }

std::vector<Tensor> values_of(const NamedParams& params) {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const auto& [name, tensor] : params) out.push_back(tensor);
    return out;
}

}  // namespace mtlk::nn
