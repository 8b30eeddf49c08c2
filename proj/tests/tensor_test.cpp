// Autograd mechanics: graph recording, accumulation semantics, grad_check
// behavior on a deliberately wrong derivative.

#include <gtest/gtest.h>

#include "dosecast/grad_check.hpp"
#include "dosecast/ops.hpp"

using namespace dosecast;

TEST(Tensor, FromDataRejectsWrongCount) {
    EXPECT_THROW(Tensor<double>::from_data({2, 3}, {1.0, 2.0}), ShapeError);
}

TEST(Tensor, ItemRequiresScalar) {
    auto t = Tensor<double>::zeros({2});
    EXPECT_THROW(t.item(), ShapeError);
}

TEST(Tensor, BackwardRequiresScalarRoot) {
    auto x = Tensor<double>::full({3}, 1.0).set_requires_grad(true);
    auto y = mul(x, x);
    EXPECT_THROW(backward(y), ShapeError);
}

TEST(Tensor, RepeatedBackwardDoublesGradBitwise) {
    Rng rng(7);
    auto x = Tensor<double>::randn({17}, rng).set_requires_grad(true);
    auto loss = sum(mul(x, x));
    backward(loss);
    const std::vector<double> once = x.grad();
    // Second pass over an identical graph must add exactly the same
    // contribution, so every element doubles bit-for-bit.
    auto loss2 = sum(mul(x, x));
    backward(loss2);
    for (std::size_t i = 0; i < once.size(); ++i)
        EXPECT_EQ(x.grad()[i], 2.0 * once[i]);
}

TEST(Tensor, DiamondGraphSumsBothPaths) {
    auto x = Tensor<double>::full({4}, 1.5).set_requires_grad(true);
    auto a = mul_scalar(x, 2.0);
    auto b = mul_scalar(x, 3.0);
    backward(sum(add(a, b)));
    for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 5.0);
}

TEST(Tensor, SameTensorTwiceInOneOp) {
    auto x = Tensor<double>::full({3}, 2.0).set_requires_grad(true);
    backward(sum(mul(x, x)));
    for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 4.0);
}

TEST(Tensor, NoGradGuardSkipsRecording) {
    auto x = Tensor<double>::full({3}, 1.0).set_requires_grad(true);
    NoGradGuard ng;
    auto y = mul(x, x);
    EXPECT_TRUE(y.is_leaf());
}

TEST(Tensor, OpsOnPlainTensorsBuildNoGraph) {
    auto x = Tensor<double>::full({3}, 1.0);
    auto y = mul(x, x);
    EXPECT_TRUE(y.is_leaf());
}

TEST(Tensor, SetRequiresGradOnNonLeafThrows) {
    auto x = Tensor<double>::full({3}, 1.0).set_requires_grad(true);
    auto y = mul(x, x);
    EXPECT_THROW(y.set_requires_grad(true), ContractError);
}

TEST(Tensor, ZeroGradResets) {
    auto x = Tensor<double>::full({3}, 1.0).set_requires_grad(true);
    backward(sum(x));
    x.zero_grad();
    for (double g : x.grad()) EXPECT_EQ(g, 0.0);
}

TEST(GradCheck, PassesOnCorrectOp) {
    Rng rng(11);
    auto x = Tensor<double>::randn({4, 5}, rng);
    auto r = grad_check("mul_self", [&] { return mul(x, x); }, {x});
    EXPECT_TRUE(r.passed);
    EXPECT_EQ(r.element_count, 20);
    EXPECT_LT(r.max_relative_error, 1e-6);
}

TEST(GradCheck, FlagsWrongGradient) {
    Rng rng(13);
    auto x = Tensor<double>::randn({6}, rng);
    // Forward is x*x but the recorded derivative is of 3*x*x.
    auto buggy = [&] {
        const auto& v = x.data();
        std::vector<double> out(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * v[i];
        auto p = x.node();
        return detail::make_result<double>("buggy", x.shape(), std::move(out), {x},
            [p](const std::vector<double>& g, GradMap<double>& grads) {
                auto& gx = detail::grad_slot(grads, p.get());
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * 6.0 * p->data[i];
            });
    };
    auto r = grad_check("buggy", buggy, {x});
    EXPECT_FALSE(r.passed);
    EXPECT_GT(r.max_relative_error, 0.1);
}

TEST(GradCheck, CoordinateSubsetCountsOnlySampled) {
    Rng rng(17);
    auto x = Tensor<double>::randn({50}, rng);
    GradCheckOptions opt;
    opt.max_coords_per_tensor = 8;
    auto r = grad_check("subset", [&] { return mul(x, x); }, {x}, opt);
    EXPECT_TRUE(r.passed);
    EXPECT_EQ(r.element_count, 8);
}
