#pragma once

// Plain (non-differentiable) volume containers shared by the metric
// engine, the phantom generator and mask post-processing, plus the fixed
// structure channel order used across the pipeline.

#include <array>
#include <cstdint>
#include <vector>

#include "tensor.hpp"

namespace dosecast {

// Channel order for segmentation classes and the organ channels of the
// composite input volume (channels 1..7 there, background dropped).
inline constexpr std::array<const char*, 8> kClassNames = {
    "background", "brainstem", "spinal_cord", "parotid_r",
    "parotid_l",  "esophagus",  "larynx",     "mandible"};

inline constexpr int kNumClasses = 8;
inline constexpr int kNumOars = 7;

// Voxel spacing in millimetres along z, y, x.
struct SpacingGrid {
    double sz = 1.0, sy = 1.0, sx = 1.0;
    double voxel_volume_mm3() const { return sz * sy * sx; }
};

struct Volume3 {
    std::int64_t d = 0, h = 0, w = 0;
    std::vector<double> v;

    Volume3() = default;
    Volume3(std::int64_t d_, std::int64_t h_, std::int64_t w_, double fill = 0.0)
        : d(d_), h(h_), w(w_), v(static_cast<std::size_t>(d_ * h_ * w_), fill) {}

    std::int64_t size() const { return d * h * w; }
    double& at(std::int64_t z, std::int64_t y, std::int64_t x) {
        return v[static_cast<std::size_t>((z * h + y) * w + x)];
    }
    double at(std::int64_t z, std::int64_t y, std::int64_t x) const {
        return v[static_cast<std::size_t>((z * h + y) * w + x)];
    }
};

struct Mask3 {
    std::int64_t d = 0, h = 0, w = 0;
    std::vector<std::uint8_t> v;

    Mask3() = default;
    Mask3(std::int64_t d_, std::int64_t h_, std::int64_t w_, std::uint8_t fill = 0)
        : d(d_), h(h_), w(w_), v(static_cast<std::size_t>(d_ * h_ * w_), fill) {}

    std::int64_t size() const { return d * h * w; }
    std::uint8_t& at(std::int64_t z, std::int64_t y, std::int64_t x) {
        return v[static_cast<std::size_t>((z * h + y) * w + x)];
    }
    std::uint8_t at(std::int64_t z, std::int64_t y, std::int64_t x) const {
        return v[static_cast<std::size_t>((z * h + y) * w + x)];
    }
    std::int64_t count() const {
        std::int64_t n = 0;
        for (auto b : v) n += b != 0;
        return n;
    }
};

inline bool same_extents(const Volume3& a, const Volume3& b) {
    return a.d == b.d && a.h == b.h && a.w == b.w;
}
inline bool same_extents(const Mask3& a, const Mask3& b) {
    return a.d == b.d && a.h == b.h && a.w == b.w;
}
inline bool same_extents(const Volume3& a, const Mask3& b) {
    return a.d == b.d && a.h == b.h && a.w == b.w;
}

// Single-channel (1,D,H,W) or bare (D,H,W) tensor to a double volume.
template <typename T>
Volume3 to_volume(const Tensor<T>& t) {
    const auto& s = t.shape();
    std::int64_t d, h, w;
    if (s.size() == 4 && s[0] == 1) {
        d = s[1]; h = s[2]; w = s[3];
    } else if (s.size() == 3) {
        d = s[0]; h = s[1]; w = s[2];
    } else {
        throw ShapeError("to_volume: " + shape_str(s) + " is not a single-channel volume");
    }
    Volume3 out(d, h, w);
    for (std::int64_t i = 0; i < out.size(); ++i)
        out.v[static_cast<std::size_t>(i)] = static_cast<double>(t.data()[static_cast<std::size_t>(i)]);
    return out;
}

template <typename T>
Mask3 to_mask(const Tensor<T>& t, double threshold = 0.5) {
    Volume3 v = to_volume(t);
    Mask3 out(v.d, v.h, v.w);
    for (std::int64_t i = 0; i < v.size(); ++i)
        out.v[static_cast<std::size_t>(i)] = v.v[static_cast<std::size_t>(i)] > threshold ? 1 : 0;
    return out;
}

template <typename T>
Tensor<T> from_volume(const Volume3& v) {
    Tensor<T> t = Tensor<T>::zeros({1, v.d, v.h, v.w});
    for (std::int64_t i = 0; i < v.size(); ++i)
        t.data()[static_cast<std::size_t>(i)] = static_cast<T>(v.v[static_cast<std::size_t>(i)]);
    return t;
}

template <typename T>
Tensor<T> from_mask(const Mask3& m) {
    Tensor<T> t = Tensor<T>::zeros({1, m.d, m.h, m.w});
    for (std::int64_t i = 0; i < m.size(); ++i)
        t.data()[static_cast<std::size_t>(i)] = static_cast<T>(m.v[static_cast<std::size_t>(i)]);
    return t;
}

}  // namespace dosecast
