#pragma once

// Central-difference gradient verification. The callable rebuilds its
// graph from the given leaf tensors on every evaluation; non-scalar
// outputs are reduced through a fixed random projection so one backward
// pass covers every output coordinate.

#include <cstdint>
#include <string>
#include <vector>

#include "ops.hpp"

namespace dosecast {

struct GradCheckOptions {
    double tol = 1e-4;
    double step_scale = 6e-6;               // h = step_scale * max(1, |x|)
    std::int64_t max_coords_per_tensor = 0;  // 0 checks every coordinate
    std::uint64_t seed = 0x5EEDBEEF;
};

struct GradCheckReport {
    std::string op_name;
    double max_relative_error = 0.0;
    std::int64_t element_count = 0;  // coordinates compared
    bool passed = false;
};

template <typename F>
GradCheckReport grad_check(const std::string& op_name, F&& f,
                           std::vector<Tensor<double>> inputs, GradCheckOptions opts = {}) {
    GradCheckReport report;
    report.op_name = op_name;

    for (auto& in : inputs) {
        in.set_requires_grad(true);
        in.zero_grad();
    }

    Tensor<double> out = f();
    std::vector<double> proj;
    if (out.size() > 1) {
        Rng prng(opts.seed ^ 0xA5A5A5A5ull);
        proj.resize(static_cast<std::size_t>(out.size()));
        for (auto& v : proj) v = prng.normal();
    }

    auto project = [&proj](const Tensor<double>& t) {
        if (proj.empty()) return t.item();
        double acc = 0.0;
        const auto& v = t.data();
        for (std::size_t i = 0; i < v.size(); ++i) acc += v[i] * proj[i];
        return acc;
    };

    Tensor<double> scalar;
    if (proj.empty()) {
        scalar = out;
    } else {
        scalar = sum(mul(out, Tensor<double>::from_data(out.shape(), proj)));
    }
    if (!std::isfinite(scalar.item()))
        throw NumericalError("grad_check(" + op_name + "): non-finite output");
    backward(scalar);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (auto& in : inputs) {
        if (in.grad().empty()) in.zero_grad();
        analytic.push_back(in.grad());
    }

    auto eval = [&]() {
        NoGradGuard ng;
        return project(f());
    };

    Rng pick(opts.seed);
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        auto& x = inputs[t].data();
        const std::int64_t n = static_cast<std::int64_t>(x.size());
        std::vector<std::int64_t> coords;
        if (opts.max_coords_per_tensor > 0 && opts.max_coords_per_tensor < n) {
            std::vector<std::int64_t> all(static_cast<std::size_t>(n));
            for (std::int64_t i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
            for (std::int64_t i = 0; i < opts.max_coords_per_tensor; ++i) {
                const auto j = i + static_cast<std::int64_t>(pick.uniform_int(
                                       static_cast<std::uint64_t>(n - i)));
                std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(j)]);
            }
            coords.assign(all.begin(), all.begin() + opts.max_coords_per_tensor);
        } else {
            coords.resize(static_cast<std::size_t>(n));
            for (std::int64_t i = 0; i < n; ++i) coords[static_cast<std::size_t>(i)] = i;
        }

        for (std::int64_t c : coords) {
            const auto ci = static_cast<std::size_t>(c);
            const double orig = x[ci];
            const double h = opts.step_scale * std::max(1.0, std::fabs(orig));
            x[ci] = orig + h;
            const double fp = eval();
            x[ci] = orig - h;
            const double fm = eval();
            x[ci] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double exact = analytic[t][ci];
            if (!std::isfinite(numeric) || !std::isfinite(exact))
                throw NumericalError("grad_check(" + op_name + "): non-finite gradient at input " +
                                     std::to_string(t) + " coord " + std::to_string(c));
            const double rel = std::fabs(exact - numeric) /
                               std::max(1e-8, std::fabs(exact) + std::fabs(numeric));
            if (rel > report.max_relative_error) report.max_relative_error = rel;
            ++report.element_count;
        }
    }

    report.passed = report.max_relative_error < opts.tol;
    return report;
}

}  // namespace dosecast
