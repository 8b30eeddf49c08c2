#pragma once

// Organ-at-risk segmentation subnet: transformer encoder plus multiscale
// decoder, ending in an 8-class head (background + 7 organs in the fixed
// kClassNames order).

#include <cmath>

#include "decoder.hpp"
#include "volume.hpp"

namespace dosecast {

struct SegNetConfig {
    EncoderConfig encoder;
    DecoderConfig decoder{{64, 48, 32, 16}};
    std::int64_t num_classes = kNumClasses;
    // Expected background fraction of the volume. The head bias starts at
    // the matching log-odds so initial predictions follow the class prior
    // instead of a uniform split; without this, early cross-entropy updates
    // on heavily imbalanced volumes can saturate the softmax toward
    // background before the rare classes are learned. Set 0 to disable.
    double background_prior = 0.93;

    void validate() const {
        encoder.validate();
        decoder.validate(encoder);
        if (num_classes != kNumClasses)
            throw ConfigError("seg_net: class count is fixed at " + std::to_string(kNumClasses));
        if (encoder.in_channels != 1)
            throw ConfigError("seg_net: expects a single CT channel");
        if (background_prior < 0 || background_prior >= 1)
            throw ConfigError("seg_net: background_prior must lie in [0,1)");
    }
};

template <typename T>
struct SegOutput {
    Tensor<T> logits;  // (8, D, H, W)
    Tensor<T> probs;   // softmax over the class axis
};

template <typename T>
struct SegNet {
    SegNetConfig cfg;
    EncoderParams<T> enc;
    DecoderParams<T> dec;
    ConvP<T> head;

    static SegNet init(const SegNetConfig& cfg, Rng& rng) {
        cfg.validate();
        SegNet net;
        net.cfg = cfg;
        net.enc = init_encoder<T>(cfg.encoder, rng);
        net.dec = init_decoder<T>(cfg.encoder, cfg.decoder, rng);
        net.head = detail::init_conv<T>(cfg.num_classes, cfg.decoder.channels[3], 1, rng);
        if (cfg.background_prior > 0) {
            const double pi = cfg.background_prior;
            net.head.b.data()[0] = static_cast<T>(
                std::log(pi / (1.0 - pi) * static_cast<double>(cfg.num_classes - 1)));
        }
        return net;
    }

    void collect(const std::string& prefix, std::vector<std::pair<std::string, Tensor<T>>>& out) {
        collect_params(enc, prefix + "encoder.", out);
        collect_params(dec, prefix + "decoder.", out);
        out.emplace_back(prefix + "head.w", head.w);
        out.emplace_back(prefix + "head.b", head.b);
    }

    SegOutput<T> forward(const Tensor<T>& ct) const {
        auto taps = encode(ct, enc, cfg.encoder);
        auto rungs = decoder_ladder(taps, dec, cfg.encoder, cfg.decoder);
        SegOutput<T> out;
        out.logits = conv3d(rungs.back(), head.w, head.b, 1, 0);
        out.probs = softmax(out.logits, 0);
        return out;
    }
};

// Argmax over the class axis, then one binary mask per class in the fixed
// channel order.
template <typename T>
std::vector<Mask3> predict_masks(const Tensor<T>& probs) {
    if (probs.shape().size() != 4 || probs.shape()[0] != kNumClasses)
        throw ShapeError("predict_masks: " + shape_str(probs.shape()) + " is not (8,D,H,W)");
    const auto D = probs.shape()[1], H = probs.shape()[2], W = probs.shape()[3];
    const auto vox = D * H * W;
    std::vector<Mask3> masks(kNumClasses, Mask3(D, H, W));
    const T* p = probs.data().data();
    for (std::int64_t i = 0; i < vox; ++i) {
        int best = 0;
        T bv = p[i];
        for (int c = 1; c < kNumClasses; ++c) {
            const T v = p[c * vox + i];
            if (v > bv) {
                bv = v;
                best = c;
            }
        }
        masks[static_cast<std::size_t>(best)].v[static_cast<std::size_t>(i)] = 1;
    }
    return masks;
}

}  // namespace dosecast
