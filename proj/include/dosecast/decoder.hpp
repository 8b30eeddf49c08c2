#pragma once

// Multiscale conv decoder shared by both subnets. The deepest encoder tap
// seeds a feature ladder that doubles resolution per stage with stride-2
// transpose convs; the three shallower taps enter the first three stages
// through their own deconv chains. Each stage fuses upsampled and skip
// features with a parallel 3^3 / 7^3 multiscale block.

#include "encoder.hpp"

namespace dosecast {

template <typename T>
struct ConvP {
    Tensor<T> w, b;
};

template <typename T>
struct DecoderStageParams {
    ConvP<T> up;            // stride-2 deconv from the stage below
    ConvP<T> proj;          // 3^3 conv on the skip chain output; unused when skip-free
    ConvP<T> ms3, ms7;      // parallel multiscale convs
    bool has_skip = false;
};

template <typename T>
struct DecoderParams {
    ConvP<T> seed;                            // 3^3 conv on the reshaped deepest tap
    std::vector<std::vector<ConvP<T>>> chains;  // per skip stage: deconv links, deep to fine
    std::vector<DecoderStageParams<T>> stages;
};

struct DecoderConfig {
    std::vector<std::int64_t> channels;  // [c0, c1, c2, c3]; stages past 3 reuse c3

    void validate(const EncoderConfig& enc) const {
        if (channels.size() != 4)
            throw ConfigError("decoder: need 4 channel widths, got " +
                              std::to_string(channels.size()));
        for (auto c : channels) {
            if (c < 2) throw ConfigError("decoder: channel width " + std::to_string(c) + " < 2");
            if (c % 2)
                throw ConfigError("decoder: channel width " + std::to_string(c) +
                                  " must be even for the split multiscale branches");
        }
        std::int64_t p = enc.patch;
        if (p < 8 || (p & (p - 1)))
            throw ConfigError("decoder: patch " + std::to_string(p) +
                              " must be a power of two >= 8 so the ladder reaches full "
                              "resolution with three skip stages");
    }

    std::int64_t num_stages(const EncoderConfig& enc) const {
        std::int64_t n = 0, p = enc.patch;
        while (p > 1) {
            p >>= 1;
            ++n;
        }
        return n;
    }

    std::int64_t stage_width(std::int64_t stage) const {  // stage in [1, num_stages]
        return stage <= 3 ? channels[static_cast<std::size_t>(stage)] : channels[3];
    }
};

namespace detail {

template <typename T>
ConvP<T> init_conv(std::int64_t co, std::int64_t ci, std::int64_t k, Rng& rng) {
    ConvP<T> p;
    const double sigma = std::sqrt(2.0 / static_cast<double>(ci * k * k * k));
    p.w = Tensor<T>::randn({co, ci, k, k, k}, rng, sigma).set_requires_grad(true);
    p.b = Tensor<T>::zeros({co}).set_requires_grad(true);
    return p;
}

template <typename T>
ConvP<T> init_deconv(std::int64_t ci, std::int64_t co, std::int64_t k, Rng& rng) {
    ConvP<T> p;
    const double sigma = std::sqrt(2.0 / static_cast<double>(ci * k * k * k));
    p.w = Tensor<T>::randn({ci, co, k, k, k}, rng, sigma).set_requires_grad(true);
    p.b = Tensor<T>::zeros({co}).set_requires_grad(true);
    return p;
}

}  // namespace detail

template <typename T>
DecoderParams<T> init_decoder(const EncoderConfig& enc, const DecoderConfig& dec, Rng& rng) {
    dec.validate(enc);
    DecoderParams<T> p;
    const auto K = enc.embed_dim;
    p.seed = detail::init_conv<T>(dec.channels[0], K, 3, rng);
    p.chains.resize(3);
    for (std::int64_t s = 1; s <= 3; ++s) {
        std::int64_t in = K;
        auto& chain = p.chains[static_cast<std::size_t>(s - 1)];
        for (std::int64_t m = 1; m <= s; ++m) {
            const auto out = dec.channels[static_cast<std::size_t>(m)];
            chain.push_back(detail::init_deconv<T>(in, out, 2, rng));
            in = out;
        }
    }
    const auto n = dec.num_stages(enc);
    std::int64_t below = dec.channels[0];
    for (std::int64_t s = 1; s <= n; ++s) {
        DecoderStageParams<T> st;
        const auto c = dec.stage_width(s);
        st.has_skip = s <= 3;
        st.up = detail::init_deconv<T>(below, c, 2, rng);
        const std::int64_t fused = st.has_skip ? 2 * c : c;
        if (st.has_skip) st.proj = detail::init_conv<T>(c, c, 3, rng);
        st.ms3 = detail::init_conv<T>(c / 2, fused, 3, rng);
        st.ms7 = detail::init_conv<T>(c / 2, fused, 7, rng);
        p.stages.push_back(std::move(st));
        below = c;
    }
    return p;
}

template <typename T>
void collect_params(DecoderParams<T>& p, const std::string& prefix,
                    std::vector<std::pair<std::string, Tensor<T>>>& out) {
    out.emplace_back(prefix + "seed.w", p.seed.w);
    out.emplace_back(prefix + "seed.b", p.seed.b);
    for (std::size_t c = 0; c < p.chains.size(); ++c)
        for (std::size_t m = 0; m < p.chains[c].size(); ++m) {
            const std::string cp =
                prefix + "chains." + std::to_string(c) + "." + std::to_string(m) + ".";
            out.emplace_back(cp + "w", p.chains[c][m].w);
            out.emplace_back(cp + "b", p.chains[c][m].b);
        }
    for (std::size_t s = 0; s < p.stages.size(); ++s) {
        auto& st = p.stages[s];
        const std::string sp = prefix + "stages." + std::to_string(s) + ".";
        out.emplace_back(sp + "up.w", st.up.w);
        out.emplace_back(sp + "up.b", st.up.b);
        if (st.has_skip) {
            out.emplace_back(sp + "proj.w", st.proj.w);
            out.emplace_back(sp + "proj.b", st.proj.b);
        }
        out.emplace_back(sp + "ms3.w", st.ms3.w);
        out.emplace_back(sp + "ms3.b", st.ms3.b);
        out.emplace_back(sp + "ms7.w", st.ms7.w);
        out.emplace_back(sp + "ms7.b", st.ms7.b);
    }
}

// Parallel 3^3 and 7^3 convs (same output resolution), channel concat,
// Mish.
template <typename T>
Tensor<T> multiscale_block(const Tensor<T>& x, const ConvP<T>& ms3, const ConvP<T>& ms7) {
    auto a = conv3d(x, ms3.w, ms3.b, 1, 1);
    auto b = conv3d(x, ms7.w, ms7.b, 1, 3);
    return mish(concat<T>({a, b}, 0));
}

// One ladder step: upsample the running features, project the skip chain
// output, fuse. `skip` must arrive at exactly the upsampled resolution.
template <typename T>
Tensor<T> decoder_stage(const Tensor<T>& skip, const Tensor<T>& below,
                        const DecoderStageParams<T>& st) {
    auto up = conv_transpose3d(below, st.up.w, st.up.b, 2);
    if (!st.has_skip) return multiscale_block(up, st.ms3, st.ms7);
    if (skip.shape()[1] != up.shape()[1] || skip.shape()[2] != up.shape()[2] ||
        skip.shape()[3] != up.shape()[3])
        throw ShapeError("decoder_stage: skip " + shape_str(skip.shape()) +
                         " vs upsampled " + shape_str(up.shape()));
    auto proj = conv3d(skip, st.proj.w, st.proj.b, 1, 1);
    return multiscale_block(concat<T>({up, proj}, 0), st.ms3, st.ms7);
}

// Runs the full ladder. Returns every rung, coarse to fine: element 0 is
// the seed feature at grid resolution, element s the output of stage s.
template <typename T>
std::vector<Tensor<T>> decoder_ladder(const std::map<int, Tensor<T>>& taps,
                                      const DecoderParams<T>& p, const EncoderConfig& enc,
                                      const DecoderConfig& dec) {
    const auto tap_ids = enc.tap_layers();
    std::vector<Tensor<T>> rungs;
    auto deepest = reshape_tap(taps.at(tap_ids[3]), enc);
    rungs.push_back(mish(conv3d(deepest, p.seed.w, p.seed.b, 1, 1)));
    const auto n = dec.num_stages(enc);
    for (std::int64_t s = 1; s <= n; ++s) {
        const auto& st = p.stages[static_cast<std::size_t>(s - 1)];
        Tensor<T> skip;
        if (st.has_skip) {
            // Stage s takes the tap s levels above the deepest one.
            skip = reshape_tap(taps.at(tap_ids[static_cast<std::size_t>(3 - s)]), enc);
            for (const auto& link : p.chains[static_cast<std::size_t>(s - 1)])
                skip = mish(conv_transpose3d(skip, link.w, link.b, 2));
        }
        rungs.push_back(decoder_stage(skip, rungs.back(), st));
    }
    return rungs;
}

}  // namespace dosecast
