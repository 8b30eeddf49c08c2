#pragma once

// Evaluation mathematics: volumetric Dice, 95th-percentile Hausdorff
// distance, DVH criteria and scores, DVH curves, isodose-volume Dice
// curves, and the paired t-test used to compare prediction sets.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "distance.hpp"
#include "volume.hpp"

namespace dosecast {

enum class RoiKind { Oar, Ptv };

enum class Criterion { D0_1cc, Dmean, D1, D95, D99 };

inline const char* criterion_name(Criterion c) {
    switch (c) {
        case Criterion::D0_1cc: return "D0.1cc";
        case Criterion::Dmean: return "Dmean";
        case Criterion::D1: return "D1%";
        case Criterion::D95: return "D95%";
        case Criterion::D99: return "D99%";
    }
    return "?";
}

// Which criteria are scored for a structure of the given kind.
inline std::vector<Criterion> criteria_for(RoiKind kind) {
    if (kind == RoiKind::Oar) return {Criterion::D0_1cc, Criterion::Dmean};
    return {Criterion::D1, Criterion::D95, Criterion::D99};
}

struct RoiSpec {
    std::string name;
    RoiKind kind = RoiKind::Oar;
    std::vector<Criterion> criteria() const { return criteria_for(kind); }
};

namespace detail {

inline double percentile(std::vector<double> d, double q) {
    std::sort(d.begin(), d.end());
    const std::size_t m = d.size();
    if (m == 1) return d[0];
    const double rank = q / 100.0 * static_cast<double>(m - 1);
    const auto lo = static_cast<std::size_t>(rank);
    const auto hi = std::min(lo + 1, m - 1);
    const double frac = rank - static_cast<double>(lo);
    return d[lo] * (1.0 - frac) + d[hi] * frac;
}

}  // namespace detail

// Volume overlap 2|G∩P| / (|G|+|P|); both-empty counts as perfect.
inline double dice(const Mask3& g, const Mask3& p) {
    if (!same_extents(g, p)) throw ShapeError("dice: extent mismatch");
    std::int64_t inter = 0, total = 0;
    for (std::size_t i = 0; i < g.v.size(); ++i) {
        inter += (g.v[i] != 0) & (p.v[i] != 0);
        total += (g.v[i] != 0) + (p.v[i] != 0);
    }
    if (total == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(total);
}

// Max over both directions of the 95th percentile of surface-to-surface
// voxel-center distances, in mm. Surfaces use 6-connectivity.
inline double hd95(const Mask3& g, const Mask3& p, const SpacingGrid& sp) {
    if (!same_extents(g, p)) throw ShapeError("hd95: extent mismatch");
    if (g.count() == 0 || p.count() == 0)
        throw UndefinedMetricError("hd95: undefined for an empty mask");

    const Mask3 sg = surface_voxels(g);
    const Mask3 spf = surface_voxels(p);
    const Volume3 to_p = distance_field_mm(spf, sp);
    const Volume3 to_g = distance_field_mm(sg, sp);

    std::vector<double> d_gp, d_pg;
    for (std::size_t i = 0; i < sg.v.size(); ++i) {
        if (sg.v[i]) d_gp.push_back(to_p.v[i]);
        if (spf.v[i]) d_pg.push_back(to_g.v[i]);
    }
    return std::max(detail::percentile(std::move(d_gp), 95.0),
                    detail::percentile(std::move(d_pg), 95.0));
}

// DVH criteria over a masked dose. Dx% is the descending-sorted dose at
// 1-based rank ceil(x/100*n); D0.1cc is the descending rank covering the
// hottest 100 mm^3, clamped to the mask size for structures smaller than
// that.
inline std::map<Criterion, double> dvh_criteria(const Volume3& dose, const Mask3& mask,
                                                const SpacingGrid& sp, const RoiSpec& roi) {
    if (!same_extents(dose, mask)) throw ShapeError("dvh_criteria: extent mismatch");
    std::vector<double> d;
    for (std::size_t i = 0; i < mask.v.size(); ++i)
        if (mask.v[i]) d.push_back(dose.v[i]);
    if (d.empty())
        throw UndefinedMetricError("dvh_criteria: empty mask for ROI " + roi.name);
    std::sort(d.begin(), d.end(), std::greater<double>());
    const auto n = static_cast<std::int64_t>(d.size());

    auto at_rank = [&](std::int64_t r) {  // 1-based
        r = std::min(std::max<std::int64_t>(r, 1), n);
        return d[static_cast<std::size_t>(r - 1)];
    };
    std::map<Criterion, double> out;
    for (Criterion c : roi.criteria()) {
        switch (c) {
            case Criterion::Dmean: {
                double acc = 0.0;
                for (double x : d) acc += x;
                out[c] = acc / static_cast<double>(n);
                break;
            }
            case Criterion::D0_1cc:
                out[c] = at_rank(std::max<std::int64_t>(
                    1, std::llround(100.0 / sp.voxel_volume_mm3())));
                break;
            case Criterion::D1: out[c] = at_rank((1 * n + 99) / 100); break;
            case Criterion::D95: out[c] = at_rank((95 * n + 99) / 100); break;
            case Criterion::D99: out[c] = at_rank((99 * n + 99) / 100); break;
        }
    }
    return out;
}

// Mean absolute dose error over a region (one subject).
inline double dose_score(const Volume3& g, const Volume3& p, const Mask3& region) {
    if (!same_extents(g, p) || !same_extents(g, region))
        throw ShapeError("dose_score: extent mismatch");
    double acc = 0.0;
    std::int64_t n = 0;
    for (std::size_t i = 0; i < region.v.size(); ++i)
        if (region.v[i]) {
            acc += std::fabs(g.v[i] - p.v[i]);
            ++n;
        }
    if (n == 0) throw UndefinedMetricError("dose_score: empty region");
    return acc / static_cast<double>(n);
}

struct SubjectDoses {
    std::string id;
    Volume3 gt, pred;
    SpacingGrid spacing;
    std::vector<std::pair<RoiSpec, Mask3>> rois;
};

// Mean absolute DVH-criterion error pooled over all subjects, ROIs and
// criteria. ROIs whose criteria are undefined (empty mask) are skipped
// with a warning and shrink the denominator.
inline double dvh_score(const std::vector<SubjectDoses>& subjects,
                        std::vector<std::string>* warnings = nullptr) {
    double total = 0.0;
    std::int64_t count = 0;
    for (const auto& s : subjects) {
        for (const auto& [roi, mask] : s.rois) {
            std::map<Criterion, double> cg, cp;
            try {
                cg = dvh_criteria(s.gt, mask, s.spacing, roi);
                cp = dvh_criteria(s.pred, mask, s.spacing, roi);
            } catch (const UndefinedMetricError& e) {
                if (warnings)
                    warnings->push_back("dvh_score: skipping " + s.id + "/" + roi.name + ": " +
                                        e.what());
                continue;
            }
            for (Criterion c : roi.criteria()) {
                total += std::fabs(cg.at(c) - cp.at(c));
                ++count;
            }
        }
    }
    if (count == 0) throw UndefinedMetricError("dvh_score: no scoreable ROI criteria");
    return total / static_cast<double>(count);
}

struct DvhCurve {
    std::vector<double> thresholds;  // ascending, Gy
    std::vector<double> fraction;    // volume fraction receiving >= threshold
};

inline DvhCurve dvh_curve(const Volume3& dose, const Mask3& mask, int bins, double max_dose) {
    if (bins < 2) throw ConfigError("dvh_curve: bins must be >= 2");
    if (!same_extents(dose, mask)) throw ShapeError("dvh_curve: extent mismatch");
    std::vector<double> d;
    for (std::size_t i = 0; i < mask.v.size(); ++i)
        if (mask.v[i]) d.push_back(dose.v[i]);
    if (d.empty()) throw UndefinedMetricError("dvh_curve: empty mask");
    std::sort(d.begin(), d.end());
    DvhCurve out;
    const auto n = static_cast<double>(d.size());
    for (int i = 0; i < bins; ++i) {
        const double t = max_dose * static_cast<double>(i) / static_cast<double>(bins - 1);
        const auto below = std::lower_bound(d.begin(), d.end(), t) - d.begin();
        out.thresholds.push_back(t);
        out.fraction.push_back(static_cast<double>(d.size() - static_cast<std::size_t>(below)) / n);
    }
    return out;
}

// Dice between the >= t level sets of two dose fields, per threshold.
inline std::vector<std::pair<double, double>> isodose_dice_curve(
    const Volume3& g, const Volume3& p, const std::vector<double>& thresholds) {
    if (!same_extents(g, p)) throw ShapeError("isodose_dice_curve: extent mismatch");
    std::vector<std::pair<double, double>> out;
    Mask3 mg(g.d, g.h, g.w), mp(g.d, g.h, g.w);
    for (double t : thresholds) {
        for (std::size_t i = 0; i < g.v.size(); ++i) {
            mg.v[i] = g.v[i] >= t ? 1 : 0;
            mp.v[i] = p.v[i] >= t ? 1 : 0;
        }
        out.emplace_back(t, dice(mg, mp));
    }
    return out;
}

namespace detail {

// Continued fraction for the regularized incomplete beta function.
inline double beta_cf(double a, double b, double x) {
    constexpr double eps = 3e-16, tiny = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 300; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) <= eps) break;
    }
    return h;
}

inline double reg_inc_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double front = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                                  a * std::log(x) + b * std::log1p(-x));
    if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
    return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

}  // namespace detail

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
};

// Two-sided paired t-test on matched samples; p from the Student-t
// distribution with n-1 degrees of freedom.
inline TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ShapeError("paired_t_test: length mismatch");
    const auto n = static_cast<std::int64_t>(a.size());
    if (n < 2) throw ConfigError("paired_t_test: need at least 2 pairs");
    double mean = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double dd = (a[i] - b[i]) - mean;
        var += dd * dd;
    }
    var /= static_cast<double>(n - 1);
    if (var <= 0.0)
        throw UndefinedMetricError("paired_t_test: zero-variance differences");
    TTestResult r;
    r.t = mean / std::sqrt(var / static_cast<double>(n));
    const double nu = static_cast<double>(n - 1);
    r.p = detail::reg_inc_beta(nu / 2.0, 0.5, nu / (nu + r.t * r.t));
    return r;
}

// One evaluated structure within a report row.
struct RoiCriteria {
    std::string subject, roi;
    std::map<Criterion, double> gt, pred;
};

struct DvhReport {
    std::vector<RoiCriteria> rois;
    double dose_score = 0.0;
    double dvh_score = 0.0;
    std::vector<double> criterion_diffs;  // one per scored (subject, ROI, criterion)
};

}  // namespace dosecast
