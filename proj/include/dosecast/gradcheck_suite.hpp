#pragma once

// Batteries of central-difference gradient checks: randomized instances
// for every differentiable operation, and parameter-level checks that
// push a finite-difference probe through each training loss. Shared by
// the command-line `gradcheck` subcommand and the release gate.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "grad_check.hpp"
#include "losses.hpp"
#include "phantom.hpp"
#include "trainer.hpp"

namespace dosecast {

struct GradSuiteSummary {
    std::vector<GradCheckReport> reports;

    bool all_passed() const {
        for (const auto& r : reports)
            if (!r.passed) return false;
        return !reports.empty();
    }

    double worst() const {
        double w = 0.0;
        for (const auto& r : reports) w = std::max(w, r.max_relative_error);
        return w;
    }

    std::int64_t coords() const {
        std::int64_t n = 0;
        for (const auto& r : reports) n += r.element_count;
        return n;
    }
};

namespace detail {

inline Shape random_small_shape(Rng& rng, std::size_t ndim_lo = 1, std::size_t ndim_hi = 4) {
    const auto ndim = ndim_lo + rng.uniform_int(ndim_hi - ndim_lo + 1);
    Shape s;
    for (std::size_t i = 0; i < ndim; ++i)
        s.push_back(1 + static_cast<std::int64_t>(rng.uniform_int(4)));
    return s;
}

// Values bounded away from zero, for operations with a kink there.
inline Tensor<double> away_from_zero(const Shape& s, Rng& rng, double lo = 0.15, double hi = 1.5) {
    auto t = Tensor<double>::zeros(s);
    for (auto& v : t.data()) v = (rng.uniform_int(2) ? 1.0 : -1.0) * rng.uniform(lo, hi);
    return t;
}

inline Tensor<double> positive(const Shape& s, Rng& rng, double lo = 0.1, double hi = 2.0) {
    auto t = Tensor<double>::zeros(s);
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

}  // namespace detail

// Ten (by default) randomized instances per operation class. Instance i
// of every class draws from its own seeded stream, so failures
// reproduce in isolation.
inline GradSuiteSummary op_gradient_suite(std::int64_t instances = 10) {
    GradSuiteSummary out;
    auto tag = [](const std::string& base, std::int64_t i) {
        return base + "[" + std::to_string(i) + "]";
    };

    for (std::int64_t i = 0; i < instances; ++i) {
        Rng rng(0xC0FFEEull + static_cast<std::uint64_t>(i) * 7919);
        GradCheckOptions opts;
        opts.seed = 0x5EEDBEEFull + static_cast<std::uint64_t>(i);

        {
            const Shape s = detail::random_small_shape(rng);
            auto a = Tensor<double>::randn(s, rng);
            auto b = Tensor<double>::randn(s, rng);
            out.reports.push_back(grad_check(tag("add", i), [&] { return add(a, b); }, {a, b}, opts));
            out.reports.push_back(grad_check(tag("sub", i), [&] { return sub(a, b); }, {a, b}, opts));
            out.reports.push_back(grad_check(tag("mul", i), [&] { return mul(a, b); }, {a, b}, opts));
            auto d = detail::away_from_zero(s, rng, 0.5, 1.5);
            out.reports.push_back(grad_check(tag("div", i), [&] { return div(a, d); }, {a, d}, opts));
        }
        {
            const Shape s = detail::random_small_shape(rng);
            auto a = Tensor<double>::randn(s, rng);
            const double c = rng.uniform(-2.0, 2.0);
            out.reports.push_back(
                grad_check(tag("add_scalar", i), [&] { return add_scalar(a, c); }, {a}, opts));
            out.reports.push_back(
                grad_check(tag("mul_scalar", i), [&] { return mul_scalar(a, c); }, {a}, opts));
            out.reports.push_back(grad_check(tag("neg", i), [&] { return neg(a); }, {a}, opts));
        }
        {
            const Shape s = detail::random_small_shape(rng);
            auto a = detail::away_from_zero(s, rng);
            out.reports.push_back(grad_check(tag("relu", i), [&] { return relu(a); }, {a}, opts));
            out.reports.push_back(grad_check(tag("abs", i), [&] { return abs_of(a); }, {a}, opts));
            auto g = Tensor<double>::randn(s, rng);
            out.reports.push_back(grad_check(tag("gelu", i), [&] { return gelu(g); }, {g}, opts));
            out.reports.push_back(grad_check(tag("mish", i), [&] { return mish(g); }, {g}, opts));
            auto p = detail::positive(s, rng);
            out.reports.push_back(
                grad_check(tag("log_eps", i), [&] { return log_eps(p, 1e-5); }, {p}, opts));
        }
        {
            const Shape s = detail::random_small_shape(rng, 2, 4);
            auto a = Tensor<double>::randn(s, rng);
            Shape flat = {numel(s)};
            out.reports.push_back(
                grad_check(tag("reshape", i), [&] { return reshape(a, flat); }, {a}, opts));

            std::vector<std::size_t> perm(s.size());
            for (std::size_t k = 0; k < perm.size(); ++k) perm[k] = k;
            for (std::size_t k = perm.size(); k > 1; --k)
                std::swap(perm[k - 1], perm[rng.uniform_int(k)]);
            out.reports.push_back(
                grad_check(tag("permute", i), [&] { return permute(a, perm); }, {a}, opts));

            const auto axis = static_cast<std::int64_t>(rng.uniform_int(s.size()));
            auto b = Tensor<double>::randn(s, rng);
            out.reports.push_back(grad_check(
                tag("concat", i), [&] { return concat<double>({a, b}, axis); }, {a, b}, opts));

            const std::int64_t extent = s[static_cast<std::size_t>(axis)];
            const std::int64_t start = static_cast<std::int64_t>(
                rng.uniform_int(static_cast<std::uint64_t>(extent)));
            const std::int64_t len = 1 + static_cast<std::int64_t>(rng.uniform_int(
                                             static_cast<std::uint64_t>(extent - start)));
            out.reports.push_back(grad_check(
                tag("slice", i), [&] { return slice(a, axis, start, len); }, {a}, opts));
        }
        {
            const Shape s = detail::random_small_shape(rng);
            auto a = Tensor<double>::randn(s, rng);
            out.reports.push_back(grad_check(tag("sum", i), [&] { return sum(a); }, {a}, opts));
            out.reports.push_back(grad_check(tag("mean", i), [&] { return mean(a); }, {a}, opts));
        }
        {
            const std::int64_t m = 1 + static_cast<std::int64_t>(rng.uniform_int(4));
            const std::int64_t k = 1 + static_cast<std::int64_t>(rng.uniform_int(4));
            const std::int64_t n = 1 + static_cast<std::int64_t>(rng.uniform_int(4));
            auto a = Tensor<double>::randn({m, k}, rng);
            auto b = Tensor<double>::randn({k, n}, rng);
            out.reports.push_back(
                grad_check(tag("matmul", i), [&] { return matmul(a, b); }, {a, b}, opts));
            auto bias = Tensor<double>::randn({n}, rng);
            auto x = Tensor<double>::randn({m, n}, rng);
            out.reports.push_back(
                grad_check(tag("add_bias", i), [&] { return add_bias(x, bias); }, {x, bias}, opts));
        }
        {
            const Shape s = detail::random_small_shape(rng, 2, 3);
            auto a = Tensor<double>::randn(s, rng);
            const auto axis = static_cast<std::int64_t>(rng.uniform_int(s.size()));
            out.reports.push_back(
                grad_check(tag("softmax", i), [&] { return softmax(a, axis); }, {a}, opts));

            const std::int64_t m = s[static_cast<std::size_t>(axis)];
            auto gain = detail::away_from_zero({m}, rng, 0.5, 1.5);
            auto shift = Tensor<double>::randn({m}, rng);
            out.reports.push_back(grad_check(
                tag("layer_norm", i), [&] { return layer_norm(a, gain, shift, axis); },
                {a, gain, shift}, opts));
        }
        {
            const std::int64_t Ci = 1 + static_cast<std::int64_t>(rng.uniform_int(2));
            const std::int64_t Co = 1 + static_cast<std::int64_t>(rng.uniform_int(2));
            const std::int64_t e = 3 + static_cast<std::int64_t>(rng.uniform_int(3));
            const std::int64_t stride = 1 + static_cast<std::int64_t>(rng.uniform_int(2));
            auto x = Tensor<double>::randn({Ci, e, e, e}, rng);
            auto w = Tensor<double>::randn({Co, Ci, 3, 3, 3}, rng, 0.5);
            auto b = Tensor<double>::randn({Co}, rng);
            out.reports.push_back(grad_check(
                tag("conv3d", i), [&] { return conv3d(x, w, b, stride, 1); }, {x, w, b}, opts));

            auto wt = Tensor<double>::randn({Ci, Co, 2, 2, 2}, rng, 0.5);
            out.reports.push_back(grad_check(
                tag("conv_transpose3d", i), [&] { return conv_transpose3d(x, wt, b, 2); },
                {x, wt, b}, opts));

            const std::int64_t eo = 2 + static_cast<std::int64_t>(rng.uniform_int(5));
            out.reports.push_back(grad_check(
                tag("trilinear_resize", i), [&] { return trilinear_resize(x, eo, eo, eo); }, {x},
                opts));
        }
        {
            // Composite losses as single differentiable units.
            const std::int64_t J = 2 + static_cast<std::int64_t>(rng.uniform_int(3));
            auto logits = Tensor<double>::randn({J, 2, 2, 2}, rng);
            auto probs = softmax(logits.detach(), 0);
            auto target = Tensor<double>::zeros({J, 2, 2, 2});
            for (std::int64_t v = 0; v < 8; ++v) {
                const auto cls = static_cast<std::int64_t>(rng.uniform_int(
                    static_cast<std::uint64_t>(J)));
                target.data()[static_cast<std::size_t>(cls * 8 + v)] = 1.0;
            }
            out.reports.push_back(grad_check(
                tag("dice_ce_loss", i), [&] { return dice_ce_loss(probs, target); }, {probs},
                opts));

            DosePyramid<double> pred;
            PyramidTarget<double> gt;
            std::int64_t e = 8;
            for (int level = 0; level < 3; ++level) {
                pred.levels.insert(pred.levels.begin(), Tensor<double>::randn({1, e, e, e}, rng));
                gt.insert(gt.begin(), Tensor<double>::randn({1, e, e, e}, rng));
                e /= 2;
            }
            LossWeights w;
            std::vector<Tensor<double>> leaves = pred.levels;
            out.reports.push_back(grad_check(
                tag("dose_loss", i), [&] { return dose_loss(pred, gt, w); }, leaves, opts));
        }
    }
    return out;
}

namespace detail {

// Directional probe: one backward pass gives the analytic derivative
// g.u along a random direction u over all parameters at once; two loss
// evaluations give its central-difference counterpart. Coordinate-wise
// differencing is left to the per-op suite because a deep composition
// drowns its smallest per-coordinate gradients in evaluation roundoff,
// while the directional dot product stays well conditioned.
inline GradCheckReport directional_gradcheck(const std::string& name, NamedParams<double>& params,
                                             const std::function<Tensor<double>()>& loss,
                                             std::int64_t directions, double tol = 1e-4) {
    GradCheckReport rep;
    rep.op_name = name;

    for (auto& [n, p] : params) {
        p.set_requires_grad(true);
        p.zero_grad();
    }
    Tensor<double> out = loss();
    if (!std::isfinite(out.item()))
        throw NumericalError("gradcheck(" + name + "): non-finite loss");
    backward(out);

    std::vector<std::vector<double>> grads, originals;
    for (auto& [n, p] : params) {
        if (p.grad().empty()) p.zero_grad();
        grads.push_back(p.grad());
        originals.push_back(p.data());
    }

    Rng rng(fnv1a64(name.data(), name.size()));
    const double h = 1e-4;
    for (std::int64_t k = 0; k < directions; ++k) {
        std::vector<std::vector<double>> u(params.size());
        double analytic = 0.0;
        for (std::size_t t = 0; t < params.size(); ++t) {
            u[t].resize(originals[t].size());
            for (std::size_t i = 0; i < u[t].size(); ++i) {
                u[t][i] = rng.normal();
                analytic += grads[t][i] * u[t][i];
            }
        }

        auto eval_at = [&](double sign) {
            for (std::size_t t = 0; t < params.size(); ++t) {
                auto& x = params[t].second.data();
                for (std::size_t i = 0; i < x.size(); ++i)
                    x[i] = originals[t][i] + sign * h * u[t][i];
            }
            NoGradGuard ng;
            return loss().item();
        };
        const double fp = eval_at(1.0);
        const double fm = eval_at(-1.0);
        for (std::size_t t = 0; t < params.size(); ++t) params[t].second.data() = originals[t];

        const double numeric = (fp - fm) / (2.0 * h);
        const double rel = std::fabs(analytic - numeric) /
                           std::max(1e-8, std::fabs(analytic) + std::fabs(numeric));
        rep.max_relative_error = std::max(rep.max_relative_error, rel);
        ++rep.element_count;
    }
    rep.passed = rep.max_relative_error < tol;
    return rep;
}

// Probe target for the absolute-error losses: the base prediction
// shifted a full unit per voxel with random signs. Residuals then sit
// at +-1, far from the kink of |.|, so a +-h parameter perturbation
// never crosses it and central differences stay valid; the real
// network and loss adjoints are exercised unchanged.
inline PyramidTarget<double> kink_free_target(const std::vector<Tensor<double>>& base_levels,
                                              std::uint64_t seed) {
    Rng rng(seed);
    PyramidTarget<double> t;
    for (const auto& lv : base_levels) {
        auto tt = Tensor<double>::zeros(lv.shape());
        for (std::size_t i = 0; i < tt.data().size(); ++i)
            tt.data()[i] = lv.data()[i] - (rng.uniform_int(2) ? 1.0 : -1.0);
        t.push_back(tt);
    }
    return t;
}

}  // namespace detail

// Directional finite-difference probes through each training loss with
// respect to the parameters of small but structurally complete models.
inline GradSuiteSummary model_gradient_suite(const std::string& scope,
                                             std::int64_t directions = 10) {
    GradSuiteSummary out;
    const Subject s = generate(PhantomConfig::for_resolution(16, 90), 0);
    const auto ct = from_volume<double>(s.ct);

    Rng rng(0xFADE);
    SegNetConfig seg_cfg;
    seg_cfg.encoder = EncoderConfig::cubic(16, 8, 1, 16, 4, 2, 2.0);
    seg_cfg.decoder.channels = {8, 6, 4, 4};
    DoseNetConfig dose_cfg;
    dose_cfg.encoder = EncoderConfig::cubic(16, 8, 10, 16, 4, 2, 2.0);
    dose_cfg.decoder.channels = {8, 6, 4, 4};
    dose_cfg.stage1_width = 2;

    if (scope == "seg" || scope == "e2e") {
        auto seg = SegNet<double>::init(seg_cfg, rng);
        NamedParams<double> ps;
        seg.collect("", ps);
        auto target = onehot_classes<double>(s);
        out.reports.push_back(detail::directional_gradcheck(
            "seg_loss_params", ps,
            [&] { return dice_ce_loss(seg.forward(ct).probs, target); }, directions));
    }
    if (scope == "dose" || scope == "e2e") {
        auto dose = DoseNet<double>::init(dose_cfg, rng);
        auto x_cop = make_composite(ct, organ_channels<double>(s), from_mask<double>(s.ptv));
        LossWeights flat;
        flat.lambda1 = 1.0;
        flat.lambda2 = 0.0;
        LossWeights w;

        PyramidTarget<double> gt1, gt;
        {
            NoGradGuard ng;
            gt1 = detail::kink_free_target({dose.stage1_forward(x_cop)}, 0xA1);
            gt = detail::kink_free_target(dose.cascade(x_cop).levels, 0xA2);
        }

        dose.set_stage1_trainable(true);
        NamedParams<double> p1;
        dose.collect_stage1("", p1);
        out.reports.push_back(detail::directional_gradcheck(
            "dose_stage1_loss_params", p1,
            [&] {
                DosePyramid<double> pred;
                pred.levels = {dose.stage1_forward(x_cop)};
                return dose_loss(pred, gt1, flat);
            },
            directions));

        dose.set_stage1_trainable(false);
        NamedParams<double> p2;
        dose.collect_stage2("", p2);
        out.reports.push_back(detail::directional_gradcheck(
            "dose_stage2_loss_params", p2,
            [&] { return dose_loss(dose.cascade(x_cop), gt, w); }, directions));
    }
    if (scope == "e2e") {
        auto seg = SegNet<double>::init(seg_cfg, rng);
        auto dose = DoseNet<double>::init(dose_cfg, rng);
        dose.set_stage1_trainable(false);
        NamedParams<double> ps;
        seg.collect("seg.", ps);
        dose.collect_stage2("dose.stage2.", ps);
        auto target = onehot_classes<double>(s);
        LossWeights w;
        auto ptv = from_mask<double>(s.ptv);
        PyramidTarget<double> gt;
        {
            NoGradGuard ng;
            gt = detail::kink_free_target(cascade_forward(seg, dose, ct, ptv).pyramid.levels, 0xA3);
        }
        out.reports.push_back(detail::directional_gradcheck(
            "end_to_end_loss_params", ps,
            [&] {
                auto casc = cascade_forward(seg, dose, ct, ptv);
                return add(dice_ce_loss(casc.seg.probs, target),
                           dose_loss(casc.pyramid, gt, w));
            },
            directions));
    }
    if (out.reports.empty())
        throw ConfigError("gradcheck: unknown scope '" + scope + "' (op | seg | dose | e2e)");
    return out;
}

}  // namespace dosecast
