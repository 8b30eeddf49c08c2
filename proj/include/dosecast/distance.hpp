#pragma once

// Exact Euclidean distance transform on anisotropic grids via separable
// lower-envelope-of-parabolas passes, plus 6-connected surface extraction.
// Distances are between voxel centers, in millimetres.

#include <cmath>
#include <limits>
#include <vector>

#include "volume.hpp"

namespace dosecast {

namespace detail {

// 1D squared-distance pass: out[i] = min_j ((i-j)*w)^2 + f[j], samples w
// apart. Entries of f may be +inf (no parabola contributed there).
inline void dt1d(const std::vector<double>& f, double w, std::vector<double>& out) {
    const auto n = static_cast<std::int64_t>(f.size());
    out.assign(f.size(), std::numeric_limits<double>::infinity());

    // Only finite entries root parabolas; collect them first so the
    // envelope arithmetic never touches inf.
    std::vector<std::int64_t> idx;
    idx.reserve(f.size());
    for (std::int64_t i = 0; i < n; ++i)
        if (std::isfinite(f[static_cast<std::size_t>(i)])) idx.push_back(i);
    if (idx.empty()) return;

    std::vector<std::int64_t> vtx(idx.size());   // grid index of each envelope parabola
    std::vector<double> bound(idx.size() + 1);   // region boundaries in mm
    std::int64_t k = 0;
    vtx[0] = idx[0];
    bound[0] = -std::numeric_limits<double>::infinity();
    bound[1] = std::numeric_limits<double>::infinity();

    auto height = [&](std::int64_t i) { return f[static_cast<std::size_t>(i)]; };
    for (std::size_t t = 1; t < idx.size(); ++t) {
        const std::int64_t q = idx[t];
        const double xq = static_cast<double>(q) * w;
        double s;
        for (;;) {
            const std::int64_t r = vtx[static_cast<std::size_t>(k)];
            const double xr = static_cast<double>(r) * w;
            s = ((height(q) + xq * xq) - (height(r) + xr * xr)) / (2.0 * xq - 2.0 * xr);
            if (s > bound[static_cast<std::size_t>(k)]) break;
            --k;
        }
        ++k;
        vtx[static_cast<std::size_t>(k)] = q;
        bound[static_cast<std::size_t>(k)] = s;
        bound[static_cast<std::size_t>(k) + 1] = std::numeric_limits<double>::infinity();
    }

    k = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double x = static_cast<double>(i) * w;
        while (bound[static_cast<std::size_t>(k) + 1] < x) ++k;
        const double dx = x - static_cast<double>(vtx[static_cast<std::size_t>(k)]) * w;
        out[static_cast<std::size_t>(i)] = dx * dx + height(vtx[static_cast<std::size_t>(k)]);
    }
}

}  // namespace detail

// Distance in mm from every voxel center to the nearest set voxel center
// of `features`. Voxels with no reachable feature (empty mask) come back
// +inf.
inline Volume3 distance_field_mm(const Mask3& features, const SpacingGrid& sp) {
    const std::int64_t d = features.d, h = features.h, w = features.w;
    Volume3 sq(d, h, w, std::numeric_limits<double>::infinity());
    for (std::int64_t i = 0; i < features.size(); ++i)
        if (features.v[static_cast<std::size_t>(i)]) sq.v[static_cast<std::size_t>(i)] = 0.0;

    std::vector<double> line, out;

    // x pass
    line.resize(static_cast<std::size_t>(w));
    for (std::int64_t z = 0; z < d; ++z)
        for (std::int64_t y = 0; y < h; ++y) {
            for (std::int64_t x = 0; x < w; ++x) line[static_cast<std::size_t>(x)] = sq.at(z, y, x);
            detail::dt1d(line, sp.sx, out);
            for (std::int64_t x = 0; x < w; ++x) sq.at(z, y, x) = out[static_cast<std::size_t>(x)];
        }

    // y pass
    line.resize(static_cast<std::size_t>(h));
    for (std::int64_t z = 0; z < d; ++z)
        for (std::int64_t x = 0; x < w; ++x) {
            for (std::int64_t y = 0; y < h; ++y) line[static_cast<std::size_t>(y)] = sq.at(z, y, x);
            detail::dt1d(line, sp.sy, out);
            for (std::int64_t y = 0; y < h; ++y) sq.at(z, y, x) = out[static_cast<std::size_t>(y)];
        }

    // z pass
    line.resize(static_cast<std::size_t>(d));
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
            for (std::int64_t z = 0; z < d; ++z) line[static_cast<std::size_t>(z)] = sq.at(z, y, x);
            detail::dt1d(line, sp.sz, out);
            for (std::int64_t z = 0; z < d; ++z) sq.at(z, y, x) = out[static_cast<std::size_t>(z)];
        }

    for (auto& x : sq.v) x = std::sqrt(x);
    return sq;
}

// Voxels of m with at least one 6-neighbor outside m; the grid boundary
// counts as outside.
inline Mask3 surface_voxels(const Mask3& m) {
    Mask3 out(m.d, m.h, m.w);
    for (std::int64_t z = 0; z < m.d; ++z)
        for (std::int64_t y = 0; y < m.h; ++y)
            for (std::int64_t x = 0; x < m.w; ++x) {
                if (!m.at(z, y, x)) continue;
                const bool exposed =
                    z == 0 || z == m.d - 1 || y == 0 || y == m.h - 1 || x == 0 || x == m.w - 1 ||
                    !m.at(z - 1, y, x) || !m.at(z + 1, y, x) || !m.at(z, y - 1, x) ||
                    !m.at(z, y + 1, x) || !m.at(z, y, x - 1) || !m.at(z, y, x + 1);
                if (exposed) out.at(z, y, x) = 1;
            }
    return out;
}

}  // namespace dosecast
