#pragma once

// Joint data augmentation for subjects: CT-only intensity shifts plus
// spatial flips, in-plane quarter turns and optional crops applied
// identically to CT, masks, target and dose.
//
// Each call consumes a fixed, documented number of rng draws so batch
// streams stay aligned: shift coin + amount, one coin per enabled flip
// axis (z, y, x), rotation coin + quarter count, then (when cropping is
// configured) crop coin + three corner offsets.

#include <cstdint>

#include "phantom.hpp"

namespace dosecast {

struct AugmentationConfig {
    double intensity_shift_range = 0.1;  // CT shift drawn from [-r, r]
    double p_intensity = 0.5;
    bool flip_z = true, flip_y = true, flip_x = true;
    double p_flip = 0.5;  // per enabled axis
    bool rot90_yx = true;  // quarter turns in the y-x plane
    double p_rot90 = 0.5;
    std::int64_t crop = 0;  // cubic crop extent, 0 disables
    double p_crop = 1.0;

    void validate() const {
        auto prob = [](double p, const char* what) {
            if (p < 0 || p > 1) throw ConfigError(std::string("augment: ") + what + " not in [0,1]");
        };
        prob(p_intensity, "p_intensity");
        prob(p_flip, "p_flip");
        prob(p_rot90, "p_rot90");
        prob(p_crop, "p_crop");
        if (intensity_shift_range < 0)
            throw ConfigError("augment: intensity_shift_range must be >= 0");
        if (crop < 0) throw ConfigError("augment: crop must be >= 0");
    }
};

namespace detail {

enum class Axis { Z, Y, X };

template <typename Vol>
Vol flip_axis(const Vol& in, Axis ax) {
    Vol out(in.d, in.h, in.w);
    for (std::int64_t z = 0; z < in.d; ++z)
        for (std::int64_t y = 0; y < in.h; ++y)
            for (std::int64_t x = 0; x < in.w; ++x) {
                const std::int64_t sz = ax == Axis::Z ? in.d - 1 - z : z;
                const std::int64_t sy = ax == Axis::Y ? in.h - 1 - y : y;
                const std::int64_t sx = ax == Axis::X ? in.w - 1 - x : x;
                out.at(z, y, x) = in.at(sz, sy, sx);
            }
    return out;
}

// One quarter turn in the y-x plane: (y, x) <- (x, H-1-y) on a square
// slice.
template <typename Vol>
Vol rot90_once(const Vol& in) {
    if (in.h != in.w) throw ConfigError("augment: quarter turns need square y-x slices");
    Vol out(in.d, in.h, in.w);
    for (std::int64_t z = 0; z < in.d; ++z)
        for (std::int64_t y = 0; y < in.h; ++y)
            for (std::int64_t x = 0; x < in.w; ++x)
                out.at(z, y, x) = in.at(z, x, in.h - 1 - y);
    return out;
}

template <typename Vol>
Vol crop_at(const Vol& in, std::int64_t oz, std::int64_t oy, std::int64_t ox, std::int64_t e) {
    Vol out(e, e, e);
    for (std::int64_t z = 0; z < e; ++z)
        for (std::int64_t y = 0; y < e; ++y)
            for (std::int64_t x = 0; x < e; ++x) out.at(z, y, x) = in.at(oz + z, oy + y, ox + x);
    return out;
}

}  // namespace detail

inline Subject augment(const Subject& s, const AugmentationConfig& cfg, Rng& rng) {
    cfg.validate();
    Subject out = s;

    const bool do_shift = rng.uniform() < cfg.p_intensity;
    const double shift = rng.uniform(-cfg.intensity_shift_range, cfg.intensity_shift_range);
    if (do_shift)
        for (auto& v : out.ct.v) v = std::min(std::max(v + shift, 0.0), 1.0);

    auto apply_spatial = [&](auto&& fn) {
        out.ct = fn(out.ct);
        out.dose = fn(out.dose);
        for (auto& m : out.oars) m = fn(m);
        out.ptv = fn(out.ptv);
        out.body = fn(out.body);
    };

    for (auto [enabled, ax] : {std::pair{cfg.flip_z, detail::Axis::Z},
                               std::pair{cfg.flip_y, detail::Axis::Y},
                               std::pair{cfg.flip_x, detail::Axis::X}}) {
        if (!enabled) continue;
        if (rng.uniform() < cfg.p_flip)
            apply_spatial([&](const auto& v) { return detail::flip_axis(v, ax); });
    }

    if (cfg.rot90_yx) {
        const bool do_rot = rng.uniform() < cfg.p_rot90;
        const auto quarters = 1 + rng.uniform_int(3);
        if (do_rot)
            for (std::uint64_t q = 0; q < quarters; ++q)
                apply_spatial([](const auto& v) { return detail::rot90_once(v); });
    }

    if (cfg.crop > 0) {
        if (cfg.crop > s.ct.d || cfg.crop > s.ct.h || cfg.crop > s.ct.w)
            throw ConfigError("augment: crop larger than the volume");
        const bool do_crop = rng.uniform() < cfg.p_crop;
        const auto oz = static_cast<std::int64_t>(
            rng.uniform_int(static_cast<std::uint64_t>(s.ct.d - cfg.crop + 1)));
        const auto oy = static_cast<std::int64_t>(
            rng.uniform_int(static_cast<std::uint64_t>(s.ct.h - cfg.crop + 1)));
        const auto ox = static_cast<std::int64_t>(
            rng.uniform_int(static_cast<std::uint64_t>(s.ct.w - cfg.crop + 1)));
        if (do_crop)
            apply_spatial([&](const auto& v) { return detail::crop_at(v, oz, oy, ox, cfg.crop); });
    }
    return out;
}

}  // namespace dosecast
