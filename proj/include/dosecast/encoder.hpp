#pragma once

// Volumetric transformer encoder. A (C,D,H,W) volume is cut into cubic
// patches, linearly projected and summed with a learned positional table,
// then run through pre-norm attention/MLP layers. Outputs of the layers at
// L/4, L/2, 3L/4 and L are exposed as taps for the conv decoders.

#include <map>
#include <utility>

#include "ops.hpp"

namespace dosecast {

struct EncoderConfig {
    std::int64_t res_d = 0, res_h = 0, res_w = 0;  // voxels per axis
    std::int64_t patch = 0;
    std::int64_t in_channels = 1;
    std::int64_t embed_dim = 0;
    std::int64_t num_layers = 0;
    std::int64_t num_heads = 0;
    double mlp_ratio = 4.0;

    static EncoderConfig cubic(std::int64_t res, std::int64_t patch, std::int64_t in_channels,
                               std::int64_t embed_dim, std::int64_t num_layers,
                               std::int64_t num_heads, double mlp_ratio = 4.0) {
        EncoderConfig c;
        c.res_d = c.res_h = c.res_w = res;
        c.patch = patch;
        c.in_channels = in_channels;
        c.embed_dim = embed_dim;
        c.num_layers = num_layers;
        c.num_heads = num_heads;
        c.mlp_ratio = mlp_ratio;
        return c;
    }

    void validate() const {
        if (res_d < 1 || res_h < 1 || res_w < 1 || patch < 1 || in_channels < 1 ||
            embed_dim < 1 || num_layers < 1 || num_heads < 1 || mlp_ratio <= 0.0)
            throw ConfigError("encoder: all sizes must be positive");
        if (res_d % patch || res_h % patch || res_w % patch)
            throw ConfigError("encoder: resolution (" + std::to_string(res_d) + "," +
                              std::to_string(res_h) + "," + std::to_string(res_w) +
                              ") not divisible by patch " + std::to_string(patch));
        if (embed_dim % num_heads)
            throw ConfigError("encoder: embed_dim " + std::to_string(embed_dim) +
                              " not divisible by " + std::to_string(num_heads) + " heads");
        if (num_layers % 4)
            throw ConfigError("encoder: num_layers " + std::to_string(num_layers) +
                              " must be a multiple of 4 to place the taps");
    }

    std::int64_t grid_d() const { return res_d / patch; }
    std::int64_t grid_h() const { return res_h / patch; }
    std::int64_t grid_w() const { return res_w / patch; }
    std::int64_t num_tokens() const { return grid_d() * grid_h() * grid_w(); }
    std::int64_t token_dim() const { return in_channels * patch * patch * patch; }
    std::int64_t head_dim() const { return embed_dim / num_heads; }
    std::int64_t mlp_dim() const {
        return static_cast<std::int64_t>(mlp_ratio * static_cast<double>(embed_dim) + 0.5);
    }

    // Tap layer indices, shallowest first: {L/4, L/2, 3L/4, L}.
    std::vector<int> tap_layers() const {
        const int q = static_cast<int>(num_layers / 4);
        return {q, 2 * q, 3 * q, 4 * q};
    }
};

// The key projection carries no bias: a shared key offset shifts every
// attention row by a per-query constant, which softmax cancels, so the
// parameter would be unidentifiable (zero gradient) while changing
// nothing the layer can express.
template <typename T>
struct TransformerLayerParams {
    Tensor<T> ln1_gain, ln1_shift;
    Tensor<T> wq, bq, wk, wv, bv, wo, bo;
    Tensor<T> ln2_gain, ln2_shift;
    Tensor<T> w1, b1, w2, b2;
};

template <typename T>
struct EncoderParams {
    Tensor<T> patch_proj;                           // (token_dim, embed_dim)
    Tensor<T> pos_embed;                            // (num_tokens, embed_dim)
    std::vector<TransformerLayerParams<T>> layers;  // num_layers entries
};

template <typename T>
EncoderParams<T> init_encoder(const EncoderConfig& cfg, Rng& rng, double sigma = 0.02) {
    cfg.validate();
    EncoderParams<T> p;
    const auto K = cfg.embed_dim;
    p.patch_proj = Tensor<T>::randn({cfg.token_dim(), K}, rng, sigma).set_requires_grad(true);
    p.pos_embed = Tensor<T>::randn({cfg.num_tokens(), K}, rng, sigma).set_requires_grad(true);
    p.layers.resize(static_cast<std::size_t>(cfg.num_layers));
    for (auto& l : p.layers) {
        l.ln1_gain = Tensor<T>::full({K}, T(1)).set_requires_grad(true);
        l.ln1_shift = Tensor<T>::zeros({K}).set_requires_grad(true);
        l.wq = Tensor<T>::randn({K, K}, rng, sigma).set_requires_grad(true);
        l.bq = Tensor<T>::zeros({K}).set_requires_grad(true);
        l.wk = Tensor<T>::randn({K, K}, rng, sigma).set_requires_grad(true);
        l.wv = Tensor<T>::randn({K, K}, rng, sigma).set_requires_grad(true);
        l.bv = Tensor<T>::zeros({K}).set_requires_grad(true);
        l.wo = Tensor<T>::randn({K, K}, rng, sigma).set_requires_grad(true);
        l.bo = Tensor<T>::zeros({K}).set_requires_grad(true);
        l.ln2_gain = Tensor<T>::full({K}, T(1)).set_requires_grad(true);
        l.ln2_shift = Tensor<T>::zeros({K}).set_requires_grad(true);
        l.w1 = Tensor<T>::randn({K, cfg.mlp_dim()}, rng, sigma).set_requires_grad(true);
        l.b1 = Tensor<T>::zeros({cfg.mlp_dim()}).set_requires_grad(true);
        l.w2 = Tensor<T>::randn({cfg.mlp_dim(), K}, rng, sigma).set_requires_grad(true);
        l.b2 = Tensor<T>::zeros({K}).set_requires_grad(true);
    }
    return p;
}

template <typename T>
void collect_params(EncoderParams<T>& p, const std::string& prefix,
                    std::vector<std::pair<std::string, Tensor<T>>>& out) {
    out.emplace_back(prefix + "patch_proj", p.patch_proj);
    out.emplace_back(prefix + "pos_embed", p.pos_embed);
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        auto& l = p.layers[i];
        const std::string lp = prefix + "layers." + std::to_string(i) + ".";
        out.emplace_back(lp + "ln1.gain", l.ln1_gain);
        out.emplace_back(lp + "ln1.shift", l.ln1_shift);
        out.emplace_back(lp + "attn.wq", l.wq);
        out.emplace_back(lp + "attn.bq", l.bq);
        out.emplace_back(lp + "attn.wk", l.wk);
        out.emplace_back(lp + "attn.wv", l.wv);
        out.emplace_back(lp + "attn.bv", l.bv);
        out.emplace_back(lp + "attn.wo", l.wo);
        out.emplace_back(lp + "attn.bo", l.bo);
        out.emplace_back(lp + "ln2.gain", l.ln2_gain);
        out.emplace_back(lp + "ln2.shift", l.ln2_shift);
        out.emplace_back(lp + "mlp.w1", l.w1);
        out.emplace_back(lp + "mlp.b1", l.b1);
        out.emplace_back(lp + "mlp.w2", l.w2);
        out.emplace_back(lp + "mlp.b2", l.b2);
    }
}

// (C,D,H,W) -> (N, C*P^3) with tokens in z-major grid order. Within a
// token, values are laid out channel then local z,y,x.
template <typename T>
Tensor<T> patchify(const Tensor<T>& x, const EncoderConfig& cfg) {
    detail::check_vol4("patchify", x.shape());
    if (x.shape()[0] != cfg.in_channels || x.shape()[1] != cfg.res_d ||
        x.shape()[2] != cfg.res_h || x.shape()[3] != cfg.res_w)
        throw ShapeError("patchify: volume " + shape_str(x.shape()) + " does not match config");
    const auto P = cfg.patch;
    auto t = reshape(x, {cfg.in_channels, cfg.grid_d(), P, cfg.grid_h(), P, cfg.grid_w(), P});
    t = permute(t, {1, 3, 5, 0, 2, 4, 6});  // (Gz,Gy,Gx,C,P,P,P)
    return reshape(t, {cfg.num_tokens(), cfg.token_dim()});
}

// Token projection plus learned positional table. The positional table
// doubles as the projection bias, so there is no separate bias term.
template <typename T>
Tensor<T> embed(const Tensor<T>& tokens, const EncoderParams<T>& p) {
    return add(matmul(tokens, p.patch_proj), p.pos_embed);
}

// Pre-norm block: x + MSA(LN(x)), then h + MLP(LN(h)).
template <typename T>
Tensor<T> transformer_layer(const Tensor<T>& x, const TransformerLayerParams<T>& l,
                            std::int64_t num_heads) {
    const std::int64_t K = x.shape()[1];
    if (K % num_heads) throw ConfigError("transformer_layer: heads do not divide embed dim");
    const std::int64_t dh = K / num_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    auto xin = layer_norm(x, l.ln1_gain, l.ln1_shift, -1);
    auto q = add_bias(matmul(xin, l.wq), l.bq);
    auto k = matmul(xin, l.wk);
    auto v = add_bias(matmul(xin, l.wv), l.bv);
    std::vector<Tensor<T>> heads;
    heads.reserve(static_cast<std::size_t>(num_heads));
    for (std::int64_t h = 0; h < num_heads; ++h) {
        auto qh = slice(q, 1, h * dh, dh);
        auto kh = slice(k, 1, h * dh, dh);
        auto vh = slice(v, 1, h * dh, dh);
        auto scores = mul_scalar(matmul(qh, permute(kh, {1, 0})), scale);
        heads.push_back(matmul(softmax(scores, -1), vh));
    }
    auto ctx = num_heads == 1 ? heads[0] : concat(heads, 1);
    auto attn_out = add_bias(matmul(ctx, l.wo), l.bo);
    auto h1 = add(x, attn_out);

    auto hin = layer_norm(h1, l.ln2_gain, l.ln2_shift, -1);
    auto mlp = add_bias(matmul(gelu(add_bias(matmul(hin, l.w1), l.b1)), l.w2), l.b2);
    return add(h1, mlp);
}

// Full pass; returns layer index -> token matrix for the tap layers.
template <typename T>
std::map<int, Tensor<T>> encode(const Tensor<T>& x, const EncoderParams<T>& p,
                                const EncoderConfig& cfg) {
    cfg.validate();
    if (static_cast<std::int64_t>(p.layers.size()) != cfg.num_layers)
        throw ConfigError("encode: params hold " + std::to_string(p.layers.size()) +
                          " layers, config wants " + std::to_string(cfg.num_layers));
    const auto taps = cfg.tap_layers();
    auto h = embed(patchify(x, cfg), p);
    std::map<int, Tensor<T>> out;
    for (std::int64_t i = 0; i < cfg.num_layers; ++i) {
        h = transformer_layer(h, p.layers[static_cast<std::size_t>(i)], cfg.num_heads);
        const int layer = static_cast<int>(i) + 1;
        for (int t : taps)
            if (t == layer) out.emplace(layer, h);
    }
    return out;
}

// (N, K) token matrix back to a (K, Gz, Gy, Gx) feature volume.
template <typename T>
Tensor<T> reshape_tap(const Tensor<T>& tap, const EncoderConfig& cfg) {
    if (tap.shape().size() != 2 || tap.shape()[0] != cfg.num_tokens() ||
        tap.shape()[1] != cfg.embed_dim)
        throw ShapeError("reshape_tap: " + shape_str(tap.shape()) + " is not (tokens, embed)");
    auto t = reshape(tap, {cfg.grid_d(), cfg.grid_h(), cfg.grid_w(), cfg.embed_dim});
    return permute(t, {3, 0, 1, 2});
}

}  // namespace dosecast
