#pragma once

// Deterministic synthetic head-and-neck subjects: stylized body, seven
// organ structures, one target volume with an analytic exponential dose,
// and a noisy multi-intensity CT. Everything is a pure function of
// (config seed, subject index).

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "distance.hpp"
#include "volume.hpp"

namespace dosecast {

// Distance in mm from every voxel center to the nearest set voxel (zero
// inside the set).
inline Volume3 distance_to_set(const Mask3& mask, const SpacingGrid& sp) {
    if (mask.count() == 0) throw UndefinedMetricError("distance_to_set: empty mask");
    return distance_field_mm(mask, sp);
}

struct RadiusRange {
    double lo = 0.0, hi = 0.0;  // voxels
};

struct PhantomConfig {
    std::int64_t resolution = 16;  // cubic extent, power of two >= 16
    SpacingGrid spacing{3.0, 3.0, 3.0};
    std::uint64_t seed = 0;
    std::array<RadiusRange, kNumOars> organ_radius;  // class order, voxels
    RadiusRange ptv_radius;
    std::vector<double> prescriptions = {70.0, 63.0, 56.0};  // Gy, decreasing
    double falloff_mm = 12.0;
    double noise_sigma = 0.02;

    static PhantomConfig for_resolution(std::int64_t res, std::uint64_t seed = 0) {
        PhantomConfig c;
        c.resolution = res;
        c.seed = seed;
        const double r = static_cast<double>(res);
        c.organ_radius = {{{0.060 * r, 0.090 * r},    // brainstem
                           {0.045 * r, 0.055 * r},    // spinal_cord (tube)
                           {0.060 * r, 0.080 * r},    // parotid_r
                           {0.060 * r, 0.080 * r},    // parotid_l
                           {0.045 * r, 0.050 * r},    // esophagus (tube)
                           {0.060 * r, 0.075 * r},    // larynx
                           {0.060 * r, 0.075 * r}}};  // mandible (widened in x)
        c.ptv_radius = {0.070 * r, 0.085 * r};
        return c;
    }

    void validate() const {
        if (resolution < 16 || (resolution & (resolution - 1)) != 0)
            throw ConfigError("phantom: resolution must be a power of two >= 16");
        if (spacing.sz <= 0 || spacing.sy <= 0 || spacing.sx <= 0)
            throw ConfigError("phantom: spacing must be positive");
        if (prescriptions.empty()) throw ConfigError("phantom: need at least one prescription");
        for (std::size_t i = 0; i < prescriptions.size(); ++i) {
            if (prescriptions[i] <= 0) throw ConfigError("phantom: prescriptions must be positive");
            if (i > 0 && prescriptions[i] >= prescriptions[i - 1])
                throw ConfigError("phantom: prescriptions must be strictly decreasing");
        }
        if (falloff_mm <= 0) throw ConfigError("phantom: falloff_mm must be positive");
        if (noise_sigma < 0) throw ConfigError("phantom: noise_sigma must be >= 0");
        auto check_range = [](const RadiusRange& rr, const char* what) {
            if (rr.lo <= 0 || rr.hi < rr.lo)
                throw ConfigError(std::string("phantom: bad radius range for ") + what);
        };
        for (int k = 0; k < kNumOars; ++k)
            check_range(organ_radius[static_cast<std::size_t>(k)], kClassNames[static_cast<std::size_t>(k) + 1]);
        check_range(ptv_radius, "ptv");
    }
};

struct Subject {
    Volume3 ct, dose;
    std::array<Mask3, kNumOars> oars;
    Mask3 ptv, body;
    SpacingGrid spacing;
    double prescription = 0.0;
};

namespace detail {

// Canonical layout in volume fractions; tubes extend along z.
struct StructGeom {
    bool tube;
    double cz, cy, cx;        // center
    double fz, fy, fx;        // per-axis radius factors
    double hz_lo, hz_hi;      // tube half-length range (fraction)
};

inline const std::array<StructGeom, kNumOars>& organ_geometry() {
    static const std::array<StructGeom, kNumOars> g = {{
        {false, 0.30, 0.42, 0.50, 1.0, 1.0, 1.0, 0, 0},    // brainstem
        {true, 0.55, 0.62, 0.50, 1.0, 1.0, 1.0, 0.24, 0.28},  // spinal_cord
        {false, 0.40, 0.48, 0.24, 1.0, 1.0, 1.0, 0, 0},    // parotid_r
        {false, 0.40, 0.48, 0.76, 1.0, 1.0, 1.0, 0, 0},    // parotid_l
        {true, 0.82, 0.46, 0.50, 1.0, 1.0, 1.0, 0.08, 0.10},  // esophagus
        {false, 0.62, 0.38, 0.50, 1.0, 1.0, 1.0, 0, 0},    // larynx
        {false, 0.45, 0.30, 0.50, 1.0, 1.0, 2.1, 0, 0},    // mandible
    }};
    return g;
}

constexpr StructGeom kPtvGeom{false, 0.55, 0.44, 0.66, 1.0, 1.0, 1.0, 0, 0};
constexpr double kCenterJitter = 0.02;  // fraction of resolution, per axis

// Tissue intensity per structure for the synthetic CT.
constexpr double kAirIntensity = 0.02;
constexpr double kBodyIntensity = 0.35;
constexpr double kPtvIntensity = 0.70;
constexpr std::array<double, kNumOars> kOrganIntensity = {0.55, 0.62, 0.48,
                                                          0.48, 0.44, 0.58, 0.85};

inline Mask3 make_body(std::int64_t res) {
    Mask3 body(res, res, res);
    const double c = static_cast<double>(res) / 2.0;
    const double rz = 0.45 * static_cast<double>(res);
    const double ry = 0.40 * static_cast<double>(res);
    const double rx = 0.40 * static_cast<double>(res);
    for (std::int64_t z = 0; z < res; ++z)
        for (std::int64_t y = 0; y < res; ++y)
            for (std::int64_t x = 0; x < res; ++x) {
                const double uz = (static_cast<double>(z) + 0.5 - c) / rz;
                const double uy = (static_cast<double>(y) + 0.5 - c) / ry;
                const double ux = (static_cast<double>(x) + 0.5 - c) / rx;
                if (uz * uz + uy * uy + ux * ux <= 1.0) body.at(z, y, x) = 1;
            }
    return body;
}

// One placement draw: jittered center, radius from the configured range,
// voxelized against the body. Draw order is fixed: jitter z,y,x, radius,
// then (tubes) half-length.
inline Mask3 draw_structure(const StructGeom& g, const RadiusRange& rr, std::int64_t res,
                            const Mask3& body, Rng& rng) {
    const double r = static_cast<double>(res);
    const double cz = g.cz * r + rng.uniform(-kCenterJitter, kCenterJitter) * r;
    const double cy = g.cy * r + rng.uniform(-kCenterJitter, kCenterJitter) * r;
    const double cx = g.cx * r + rng.uniform(-kCenterJitter, kCenterJitter) * r;
    const double rad = rng.uniform(rr.lo, rr.hi);
    const double hz = g.tube ? rng.uniform(g.hz_lo, g.hz_hi) * r : 0.0;

    Mask3 m(res, res, res);
    for (std::int64_t z = 0; z < res; ++z)
        for (std::int64_t y = 0; y < res; ++y)
            for (std::int64_t x = 0; x < res; ++x) {
                if (!body.at(z, y, x)) continue;
                const double uz = static_cast<double>(z) + 0.5 - cz;
                const double uy = static_cast<double>(y) + 0.5 - cy;
                const double ux = static_cast<double>(x) + 0.5 - cx;
                bool inside;
                if (g.tube) {
                    const double py = uy / (rad * g.fy), px = ux / (rad * g.fx);
                    inside = py * py + px * px <= 1.0 && std::fabs(uz) <= hz;
                } else {
                    const double pz = uz / (rad * g.fz), py = uy / (rad * g.fy),
                                 px = ux / (rad * g.fx);
                    inside = pz * pz + py * py + px * px <= 1.0;
                }
                if (inside) m.at(z, y, x) = 1;
            }
    return m;
}

inline bool overlaps_any(const Mask3& m, const std::vector<const Mask3*>& placed) {
    for (const Mask3* p : placed)
        for (std::size_t i = 0; i < m.v.size(); ++i)
            if (m.v[i] && p->v[i]) return true;
    return false;
}

}  // namespace detail

// Deterministic subject generation. Structures are placed by bounded
// rejection sampling; the target volume must sit clear of every organ yet
// within a resolution-scaled adjacency band of at least one.
inline Subject generate(const PhantomConfig& cfg, std::int64_t index) {
    cfg.validate();
    Rng rng = Rng(cfg.seed).fork(static_cast<std::uint64_t>(index));
    const std::int64_t res = cfg.resolution;
    constexpr int kMaxAttempts = 100;

    Subject s;
    s.spacing = cfg.spacing;
    s.body = detail::make_body(res);

    auto fail = [&](const char* what) {
        throw GenerationError("phantom: placement failed for " + std::string(what) + " at seed " +
                              std::to_string(cfg.seed) + " index " + std::to_string(index));
    };

    // CT smooth-field phases drawn first so placement retries never shift
    // them.
    const double ph_z = rng.uniform(), ph_y = rng.uniform(), ph_x = rng.uniform();

    std::vector<const Mask3*> placed;
    for (int k = 0; k < kNumOars; ++k) {
        bool ok = false;
        for (int attempt = 0; attempt < kMaxAttempts && !ok; ++attempt) {
            Mask3 m = detail::draw_structure(detail::organ_geometry()[static_cast<std::size_t>(k)],
                                             cfg.organ_radius[static_cast<std::size_t>(k)], res,
                                             s.body, rng);
            if (m.count() == 0 || detail::overlaps_any(m, placed)) continue;
            s.oars[static_cast<std::size_t>(k)] = std::move(m);
            ok = true;
        }
        if (!ok) fail(kClassNames[static_cast<std::size_t>(k) + 1]);
        placed.push_back(&s.oars[static_cast<std::size_t>(k)]);
    }

    s.prescription =
        cfg.prescriptions[rng.uniform_int(static_cast<std::uint64_t>(cfg.prescriptions.size()))];

    // Adjacency is measured in voxel units so the criterion scales with
    // the grid.
    Mask3 organ_union(res, res, res);
    for (const Mask3* p : placed)
        for (std::size_t i = 0; i < organ_union.v.size(); ++i)
            organ_union.v[i] |= p->v[i];
    const Volume3 organ_dist = distance_field_mm(organ_union, SpacingGrid{1.0, 1.0, 1.0});
    const double adjacency = std::max(2.5, 0.04 * static_cast<double>(res));

    bool ok = false;
    for (int attempt = 0; attempt < kMaxAttempts && !ok; ++attempt) {
        Mask3 m = detail::draw_structure(detail::kPtvGeom, cfg.ptv_radius, res, s.body, rng);
        if (m.count() == 0 || detail::overlaps_any(m, placed)) continue;
        double nearest = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < m.v.size(); ++i)
            if (m.v[i]) nearest = std::min(nearest, organ_dist.v[i]);
        if (nearest > adjacency) continue;
        s.ptv = std::move(m);
        ok = true;
    }
    if (!ok) fail("ptv");

    // Dose: exponential falloff with distance from the target, zero
    // outside the body. Distance is zero inside the target, so target
    // voxels carry the prescription exactly.
    const Volume3 ptv_dist = distance_to_set(s.ptv, cfg.spacing);
    s.dose = Volume3(res, res, res);
    for (std::size_t i = 0; i < s.dose.v.size(); ++i)
        if (s.body.v[i])
            s.dose.v[i] = s.prescription * std::exp(-ptv_dist.v[i] / cfg.falloff_mm);

    // CT: per-structure base intensity, a slow cosine field, then noise.
    s.ct = Volume3(res, res, res);
    const double tau = 6.283185307179586;
    for (std::int64_t z = 0; z < res; ++z)
        for (std::int64_t y = 0; y < res; ++y)
            for (std::int64_t x = 0; x < res; ++x) {
                double base = detail::kAirIntensity;
                if (s.body.at(z, y, x)) base = detail::kBodyIntensity;
                for (int k = 0; k < kNumOars; ++k)
                    if (s.oars[static_cast<std::size_t>(k)].at(z, y, x))
                        base = detail::kOrganIntensity[static_cast<std::size_t>(k)];
                if (s.ptv.at(z, y, x)) base = detail::kPtvIntensity;
                const double fr = static_cast<double>(res);
                const double smooth = 0.04 *
                                      std::cos(tau * (static_cast<double>(z) / fr + ph_z)) *
                                      std::cos(tau * (static_cast<double>(y) / fr + ph_y)) *
                                      std::cos(tau * (static_cast<double>(x) / fr + ph_x));
                double v = base + smooth + rng.normal() * cfg.noise_sigma;
                s.ct.at(z, y, x) = std::min(std::max(v, 0.0), 1.0);
            }
    return s;
}

// Stacks the seven organ masks into the (7,D,H,W) channel block consumed
// by the composite builder.
template <typename T>
Tensor<T> organ_channels(const Subject& s) {
    const std::int64_t d = s.body.d, h = s.body.h, w = s.body.w;
    Tensor<T> out = Tensor<T>::zeros({kNumOars, d, h, w});
    const std::int64_t n = d * h * w;
    for (int k = 0; k < kNumOars; ++k)
        for (std::int64_t i = 0; i < n; ++i)
            out.data()[static_cast<std::size_t>(k * n + i)] =
                static_cast<T>(s.oars[static_cast<std::size_t>(k)].v[static_cast<std::size_t>(i)]);
    return out;
}

// One-hot class target (8,D,H,W): background where no organ claims the
// voxel. The generator keeps organs disjoint so the channels partition.
template <typename T>
Tensor<T> onehot_classes(const Subject& s) {
    const std::int64_t d = s.body.d, h = s.body.h, w = s.body.w;
    const std::int64_t n = d * h * w;
    Tensor<T> out = Tensor<T>::zeros({kNumClasses, d, h, w});
    for (std::int64_t i = 0; i < n; ++i) {
        int cls = 0;
        for (int k = 0; k < kNumOars; ++k)
            if (s.oars[static_cast<std::size_t>(k)].v[static_cast<std::size_t>(i)]) cls = k + 1;
        out.data()[static_cast<std::size_t>(cls * n + i)] = static_cast<T>(1);
    }
    return out;
}

}  // namespace dosecast
