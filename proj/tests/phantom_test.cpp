// Synthetic subject generator: determinism, geometric invariants
// (disjointness, containment, adjacency), the analytic dose law checked
// against a brute-force nearest-target oracle, and placement failure
// reporting.

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "dosecast/phantom.hpp"

using namespace dosecast;

namespace {

bool masks_equal(const Mask3& a, const Mask3& b) { return a.v == b.v; }

Mask3 organ_union_of(const Subject& s) {
    Mask3 u(s.body.d, s.body.h, s.body.w);
    for (const auto& m : s.oars)
        for (std::size_t i = 0; i < u.v.size(); ++i) u.v[i] |= m.v[i];
    return u;
}

// Brute-force mm distance from every voxel center to the nearest set
// voxel center.
Volume3 all_pairs_distance(const Mask3& m, const SpacingGrid& sp) {
    Volume3 out(m.d, m.h, m.w);
    std::vector<std::array<std::int64_t, 3>> pts;
    for (std::int64_t z = 0; z < m.d; ++z)
        for (std::int64_t y = 0; y < m.h; ++y)
            for (std::int64_t x = 0; x < m.w; ++x)
                if (m.at(z, y, x)) pts.push_back({z, y, x});
    for (std::int64_t z = 0; z < m.d; ++z)
        for (std::int64_t y = 0; y < m.h; ++y)
            for (std::int64_t x = 0; x < m.w; ++x) {
                double best = std::numeric_limits<double>::infinity();
                for (const auto& p : pts) {
                    const double dz = static_cast<double>(z - p[0]) * sp.sz;
                    const double dy = static_cast<double>(y - p[1]) * sp.sy;
                    const double dx = static_cast<double>(x - p[2]) * sp.sx;
                    best = std::min(best, std::sqrt(dz * dz + dy * dy + dx * dx));
                }
                out.at(z, y, x) = best;
            }
    return out;
}

}  // namespace

TEST(Phantom, DeterministicAndIndexSensitive) {
    const auto cfg = PhantomConfig::for_resolution(16, 11);
    const Subject a = generate(cfg, 3);
    const Subject b = generate(cfg, 3);
    EXPECT_EQ(a.ct.v, b.ct.v);
    EXPECT_EQ(a.dose.v, b.dose.v);
    EXPECT_TRUE(masks_equal(a.ptv, b.ptv));
    EXPECT_TRUE(masks_equal(a.body, b.body));
    for (int k = 0; k < kNumOars; ++k)
        EXPECT_TRUE(masks_equal(a.oars[static_cast<std::size_t>(k)],
                                b.oars[static_cast<std::size_t>(k)]));
    EXPECT_EQ(a.prescription, b.prescription);

    const Subject c = generate(cfg, 4);
    EXPECT_NE(a.ct.v, c.ct.v);
}

TEST(Phantom, GeometricInvariantsAcrossSeeds) {
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        const auto cfg = PhantomConfig::for_resolution(16, seed);
        for (std::int64_t idx = 0; idx < 4; ++idx) {
            const Subject s = generate(cfg, idx);
            const std::size_t n = s.body.v.size();

            for (int k = 0; k < kNumOars; ++k)
                ASSERT_GT(s.oars[static_cast<std::size_t>(k)].count(), 0)
                    << "empty " << kClassNames[static_cast<std::size_t>(k) + 1] << " seed " << seed;
            ASSERT_GT(s.ptv.count(), 0);
            ASSERT_GT(s.body.count(), 0);

            // Pairwise disjoint structures, all inside the body.
            for (std::size_t i = 0; i < n; ++i) {
                int claims = s.ptv.v[i] ? 1 : 0;
                for (const auto& m : s.oars) claims += m.v[i] ? 1 : 0;
                ASSERT_LE(claims, 1) << "overlap at voxel " << i << " seed " << seed;
                if (claims) ASSERT_TRUE(s.body.v[i]) << "structure outside body, seed " << seed;
            }

            // The target sits clear of the organs yet within the
            // resolution-scaled adjacency band of the nearest one.
            const Mask3 u = organ_union_of(s);
            const Volume3 d = distance_field_mm(u, SpacingGrid{1.0, 1.0, 1.0});
            double nearest = std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < n; ++i)
                if (s.ptv.v[i]) nearest = std::min(nearest, d.v[i]);
            ASSERT_GT(nearest, 0.0);
            ASSERT_LE(nearest, std::max(2.5, 0.04 * 16.0)) << "seed " << seed;

            // CT stays in its stated range.
            for (double v : s.ct.v) {
                ASSERT_GE(v, 0.0);
                ASSERT_LE(v, 1.0);
            }
        }
    }
}

TEST(Phantom, DoseLawMatchesBruteForceOracle) {
    const auto cfg = PhantomConfig::for_resolution(16, 5);
    const Subject s = generate(cfg, 0);

    bool found = false;
    for (double p : cfg.prescriptions) found = found || p == s.prescription;
    EXPECT_TRUE(found);

    const Volume3 dist = all_pairs_distance(s.ptv, s.spacing);
    for (std::size_t i = 0; i < s.dose.v.size(); ++i) {
        if (!s.body.v[i]) {
            ASSERT_EQ(s.dose.v[i], 0.0);
            continue;
        }
        const double want = s.prescription * std::exp(-dist.v[i] / cfg.falloff_mm);
        ASSERT_NEAR(s.dose.v[i], want, 1e-9 * s.prescription);
        ASSERT_LE(s.dose.v[i], s.prescription + 1e-12);
        ASSERT_GT(s.dose.v[i], 0.0);
    }

    // Target voxels carry the prescription bit-exactly.
    for (std::size_t i = 0; i < s.ptv.v.size(); ++i)
        if (s.ptv.v[i]) ASSERT_EQ(s.dose.v[i], s.prescription);
}

TEST(Phantom, DistanceToSetWorkedExample) {
    Mask3 m(1, 1, 4);
    m.at(0, 0, 0) = 1;
    const Volume3 d = distance_to_set(m, SpacingGrid{1.0, 1.0, 2.0});
    EXPECT_DOUBLE_EQ(d.at(0, 0, 0), 0.0);
    EXPECT_DOUBLE_EQ(d.at(0, 0, 1), 2.0);
    EXPECT_DOUBLE_EQ(d.at(0, 0, 3), 6.0);

    Mask3 empty(2, 2, 2);
    EXPECT_THROW(distance_to_set(empty, SpacingGrid{1, 1, 1}), UndefinedMetricError);
}

TEST(Phantom, PlacementFailureNamesStructureSeedAndIndex) {
    auto cfg = PhantomConfig::for_resolution(16, 7);
    for (auto& rr : cfg.organ_radius) rr = {7.0, 7.0};  // forces organ overlap
    try {
        generate(cfg, 3);
        FAIL() << "expected GenerationError";
    } catch (const GenerationError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("seed 7"), std::string::npos) << msg;
        EXPECT_NE(msg.find("index 3"), std::string::npos) << msg;
        EXPECT_NE(msg.find("spinal_cord"), std::string::npos) << msg;
    }
}

TEST(Phantom, ConfigValidation) {
    auto cfg = PhantomConfig::for_resolution(16, 0);
    cfg.resolution = 24;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = PhantomConfig::for_resolution(16, 0);
    cfg.prescriptions = {56.0, 63.0};
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = PhantomConfig::for_resolution(16, 0);
    cfg.falloff_mm = 0.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = PhantomConfig::for_resolution(16, 0);
    cfg.organ_radius[2] = {3.0, 2.0};
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Phantom, LargerResolutionGenerates) {
    const auto cfg = PhantomConfig::for_resolution(32, 2);
    const Subject s = generate(cfg, 0);
    EXPECT_EQ(s.body.d, 32);
    EXPECT_GT(s.ptv.count(), 0);
}

TEST(Phantom, ChannelEncodingsPartitionTheVolume) {
    const auto cfg = PhantomConfig::for_resolution(16, 9);
    const Subject s = generate(cfg, 1);
    const std::int64_t n = 16 * 16 * 16;

    const auto organs = organ_channels<double>(s);
    ASSERT_EQ(organs.shape(), (Shape{kNumOars, 16, 16, 16}));
    for (int k = 0; k < kNumOars; ++k)
        for (std::int64_t i = 0; i < n; ++i)
            ASSERT_EQ(organs.data()[static_cast<std::size_t>(k * n + i)],
                      static_cast<double>(s.oars[static_cast<std::size_t>(k)].v[static_cast<std::size_t>(i)]));

    const auto onehot = onehot_classes<double>(s);
    ASSERT_EQ(onehot.shape(), (Shape{kNumClasses, 16, 16, 16}));
    for (std::int64_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int c = 0; c < kNumClasses; ++c)
            acc += onehot.data()[static_cast<std::size_t>(c * n + i)];
        ASSERT_EQ(acc, 1.0);
        for (int k = 0; k < kNumOars; ++k)
            ASSERT_EQ(onehot.data()[static_cast<std::size_t>((k + 1) * n + i)],
                      static_cast<double>(s.oars[static_cast<std::size_t>(k)].v[static_cast<std::size_t>(i)]));
    }
}
