#pragma once

// Dose prediction cascade. Stage 1 is a compact three-level conv U-Net
// mapping the 9-channel composite input (CT, 7 organ channels, PTV) to a
// coarse dose. Stage 2 concatenates that estimate onto the composite
// input and runs the transformer encoder / multiscale decoder with a dose
// head at each of the four finest ladder rungs, coarse to fine.

#include "seg_net.hpp"

namespace dosecast {

inline constexpr int kCompositeChannels = 9;   // CT + 7 organs + PTV
inline constexpr int kPyramidLevels = 4;

struct DoseNetConfig {
    EncoderConfig encoder;  // in_channels must be 10 (composite + stage-1 dose)
    DecoderConfig decoder{{48, 32, 24, 16}};
    std::int64_t stage1_width = 8;

    void validate() const {
        encoder.validate();
        decoder.validate(encoder);
        if (encoder.in_channels != kCompositeChannels + 1)
            throw ConfigError("dose_net: encoder expects " +
                              std::to_string(kCompositeChannels + 1) +
                              " channels (composite input plus stage-1 dose), got " +
                              std::to_string(encoder.in_channels));
        if (stage1_width < 1) throw ConfigError("dose_net: stage1_width must be positive");
        if (encoder.res_d % 4 || encoder.res_h % 4 || encoder.res_w % 4)
            throw ConfigError("dose_net: resolution must be divisible by 4 for stage 1");
    }
};

template <typename T>
struct Stage1Params {
    ConvP<T> enc1, down1, enc2, down2, mid, dec2, dec1, head;
    ConvP<T> up1, up2;  // deconvs
};

template <typename T>
struct DosePyramid {
    std::vector<Tensor<T>> levels;  // kPyramidLevels entries, coarse to fine
};

template <typename T>
struct DoseNet {
    DoseNetConfig cfg;
    Stage1Params<T> stage1;
    EncoderParams<T> enc;
    DecoderParams<T> dec;
    std::vector<ConvP<T>> heads;  // one per pyramid level

    static DoseNet init(const DoseNetConfig& cfg, Rng& rng) {
        cfg.validate();
        DoseNet net;
        net.cfg = cfg;
        const auto a = cfg.stage1_width;
        net.stage1.enc1 = detail::init_conv<T>(a, kCompositeChannels, 3, rng);
        net.stage1.down1 = detail::init_conv<T>(2 * a, a, 3, rng);
        net.stage1.enc2 = detail::init_conv<T>(2 * a, 2 * a, 3, rng);
        net.stage1.down2 = detail::init_conv<T>(4 * a, 2 * a, 3, rng);
        net.stage1.mid = detail::init_conv<T>(4 * a, 4 * a, 3, rng);
        net.stage1.up1 = detail::init_deconv<T>(4 * a, 2 * a, 2, rng);
        net.stage1.dec2 = detail::init_conv<T>(2 * a, 4 * a, 3, rng);
        net.stage1.up2 = detail::init_deconv<T>(2 * a, a, 2, rng);
        net.stage1.dec1 = detail::init_conv<T>(a, 2 * a, 3, rng);
        net.stage1.head = detail::init_conv<T>(1, a, 1, rng);
        net.enc = init_encoder<T>(cfg.encoder, rng);
        net.dec = init_decoder<T>(cfg.encoder, cfg.decoder, rng);
        const auto n = net.cfg.decoder.num_stages(cfg.encoder);
        for (int lvl = 0; lvl < kPyramidLevels; ++lvl) {
            // Heads sit on the last four rungs; rung index n - 3 + lvl.
            const std::int64_t rung = n - 3 + lvl;
            const std::int64_t width = rung == 0 ? net.cfg.decoder.channels[0]
                                                 : net.cfg.decoder.stage_width(rung);
            net.heads.push_back(detail::init_conv<T>(1, width, 1, rng));
        }
        return net;
    }

    void collect_stage1(const std::string& prefix,
                        std::vector<std::pair<std::string, Tensor<T>>>& out) {
        auto put = [&](const char* name, ConvP<T>& p) {
            out.emplace_back(prefix + name + ".w", p.w);
            out.emplace_back(prefix + name + ".b", p.b);
        };
        put("enc1", stage1.enc1);
        put("down1", stage1.down1);
        put("enc2", stage1.enc2);
        put("down2", stage1.down2);
        put("mid", stage1.mid);
        put("up1", stage1.up1);
        put("dec2", stage1.dec2);
        put("up2", stage1.up2);
        put("dec1", stage1.dec1);
        put("head", stage1.head);
    }

    void collect_stage2(const std::string& prefix,
                        std::vector<std::pair<std::string, Tensor<T>>>& out) {
        collect_params(enc, prefix + "encoder.", out);
        collect_params(dec, prefix + "decoder.", out);
        for (std::size_t i = 0; i < heads.size(); ++i) {
            out.emplace_back(prefix + "heads." + std::to_string(i) + ".w", heads[i].w);
            out.emplace_back(prefix + "heads." + std::to_string(i) + ".b", heads[i].b);
        }
    }

    void set_stage1_trainable(bool trainable) {
        std::vector<std::pair<std::string, Tensor<T>>> ps;
        collect_stage1("", ps);
        for (auto& [k, t] : ps) t.set_requires_grad(trainable);
    }

    // Stage 1 alone: (9,D,H,W) composite input to a single dose channel.
    Tensor<T> stage1_forward(const Tensor<T>& x_cop) const {
        validate_composite(x_cop);
        auto e1 = mish(conv3d(x_cop, stage1.enc1.w, stage1.enc1.b, 1, 1));
        auto d1 = mish(conv3d(e1, stage1.down1.w, stage1.down1.b, 2, 1));
        auto e2 = mish(conv3d(d1, stage1.enc2.w, stage1.enc2.b, 1, 1));
        auto d2 = mish(conv3d(e2, stage1.down2.w, stage1.down2.b, 2, 1));
        auto m = mish(conv3d(d2, stage1.mid.w, stage1.mid.b, 1, 1));
        auto u1 = conv_transpose3d(m, stage1.up1.w, stage1.up1.b, 2);
        auto f2 = mish(conv3d(concat<T>({u1, e2}, 0), stage1.dec2.w, stage1.dec2.b, 1, 1));
        auto u2 = conv_transpose3d(f2, stage1.up2.w, stage1.up2.b, 2);
        auto f1 = mish(conv3d(concat<T>({u2, e1}, 0), stage1.dec1.w, stage1.dec1.b, 1, 1));
        return conv3d(f1, stage1.head.w, stage1.head.b, 1, 0);
    }

    // Stage 2: composite input with the stage-1 dose appended (10 ch) to
    // the four-level dose pyramid, finest level last at full resolution.
    DosePyramid<T> forward(const Tensor<T>& x_cop, const Tensor<T>& stage1_dose) const {
        validate_composite(x_cop);
        auto x10 = concat<T>({x_cop, stage1_dose}, 0);
        auto taps = encode(x10, enc, cfg.encoder);
        auto rungs = decoder_ladder(taps, dec, cfg.encoder, cfg.decoder);
        const auto n = static_cast<std::int64_t>(rungs.size()) - 1;
        DosePyramid<T> pyr;
        for (int lvl = 0; lvl < kPyramidLevels; ++lvl) {
            const auto& rung = rungs[static_cast<std::size_t>(n - 3 + lvl)];
            const auto& h = heads[static_cast<std::size_t>(lvl)];
            pyr.levels.push_back(conv3d(rung, h.w, h.b, 1, 0));
        }
        return pyr;
    }

    DosePyramid<T> cascade(const Tensor<T>& x_cop) const {
        return forward(x_cop, stage1_forward(x_cop));
    }

    static void validate_composite(const Tensor<T>& x_cop) {
        if (x_cop.shape().size() != 4 || x_cop.shape()[0] != kCompositeChannels)
            throw ShapeError("dose_net: composite input " + shape_str(x_cop.shape()) +
                             " is not (9,D,H,W)");
    }
};

// Composite input from CT, per-organ channels (soft probabilities or hard
// masks) and the PTV mask.
template <typename T>
Tensor<T> make_composite(const Tensor<T>& ct, const Tensor<T>& organs, const Tensor<T>& ptv) {
    if (ct.shape().size() != 4 || ct.shape()[0] != 1)
        throw ShapeError("make_composite: ct " + shape_str(ct.shape()));
    if (organs.shape().size() != 4 || organs.shape()[0] != kNumOars)
        throw ShapeError("make_composite: organs " + shape_str(organs.shape()) +
                         " is not (7,D,H,W)");
    if (ptv.shape().size() != 4 || ptv.shape()[0] != 1)
        throw ShapeError("make_composite: ptv " + shape_str(ptv.shape()));
    return concat<T>({ct, organs, ptv}, 0);
}

// Full cascade from CT: segmentation probabilities feed the composite
// input (background channel dropped), then both dose stages run.
template <typename T>
struct CascadeOutput {
    SegOutput<T> seg;
    Tensor<T> stage1_dose;
    DosePyramid<T> pyramid;
};

template <typename T>
CascadeOutput<T> cascade_forward(const SegNet<T>& seg, const DoseNet<T>& dose,
                                 const Tensor<T>& ct, const Tensor<T>& ptv) {
    CascadeOutput<T> out;
    out.seg = seg.forward(ct);
    auto organs = slice(out.seg.probs, 0, 1, kNumOars);
    auto x_cop = make_composite(ct, organs, ptv);
    out.stage1_dose = dose.stage1_forward(x_cop);
    out.pyramid = dose.forward(x_cop, out.stage1_dose);
    return out;
}

// Final dose map: finest pyramid level, negative values clamped away,
// detached from the graph.
template <typename T>
Tensor<T> predict_dose(const DosePyramid<T>& pyr) {
    if (pyr.levels.size() != kPyramidLevels)
        throw ShapeError("predict_dose: pyramid has " + std::to_string(pyr.levels.size()) +
                         " levels");
    return clamp_min(pyr.levels.back().detach(), T(0));
}

}  // namespace dosecast
