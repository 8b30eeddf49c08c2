// Volumetric op oracles: scalar-loop references for conv3d and
// conv_transpose3d, the adjoint identity between them, trilinear resize
// properties, and finite-difference gradients for all three.

#include <gtest/gtest.h>

#include <cmath>

#include "dosecast/grad_check.hpp"
#include "dosecast/ops.hpp"

using namespace dosecast;

namespace {

Tensor<double> rand_t(const Shape& s, std::uint64_t seed, double sigma = 1.0) {
    Rng rng(seed);
    return Tensor<double>::randn(s, rng, sigma);
}

// Direct seven-loop convolution, written independently of the library
// kernel's loop order.
std::vector<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& w,
                                const Tensor<double>& b, std::int64_t s, std::int64_t p) {
    const auto Ci = x.shape()[0], D = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const auto Co = w.shape()[0], k = w.shape()[2];
    const auto Do = (D + 2 * p - k) / s + 1, Ho = (H + 2 * p - k) / s + 1,
               Wo = (W + 2 * p - k) / s + 1;
    std::vector<double> out(static_cast<std::size_t>(Co * Do * Ho * Wo));
    for (std::int64_t co = 0; co < Co; ++co)
        for (std::int64_t z = 0; z < Do; ++z)
            for (std::int64_t y = 0; y < Ho; ++y)
                for (std::int64_t xo = 0; xo < Wo; ++xo) {
                    double acc = b.data()[co];
                    for (std::int64_t ci = 0; ci < Ci; ++ci)
                        for (std::int64_t kz = 0; kz < k; ++kz)
                            for (std::int64_t ky = 0; ky < k; ++ky)
                                for (std::int64_t kx = 0; kx < k; ++kx) {
                                    const auto iz = z * s + kz - p;
                                    const auto iy = y * s + ky - p;
                                    const auto ix = xo * s + kx - p;
                                    if (iz < 0 || iz >= D || iy < 0 || iy >= H || ix < 0 || ix >= W)
                                        continue;
                                    acc += w.data()[(((co * Ci + ci) * k + kz) * k + ky) * k + kx] *
                                           x.data()[((ci * D + iz) * H + iy) * W + ix];
                                }
                    out[((co * Do + z) * Ho + y) * Wo + xo] = acc;
                }
    return out;
}

std::vector<double> conv_transpose_oracle(const Tensor<double>& x, const Tensor<double>& w,
                                          const Tensor<double>& b, std::int64_t s) {
    const auto Ci = x.shape()[0], D = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const auto Co = w.shape()[1], k = w.shape()[2];
    const auto Do = (D - 1) * s + k, Ho = (H - 1) * s + k, Wo = (W - 1) * s + k;
    std::vector<double> out(static_cast<std::size_t>(Co * Do * Ho * Wo));
    for (std::int64_t co = 0; co < Co; ++co)
        for (std::size_t i = 0; i < static_cast<std::size_t>(Do * Ho * Wo); ++i)
            out[co * Do * Ho * Wo + i] = b.data()[co];
    for (std::int64_t ci = 0; ci < Ci; ++ci)
        for (std::int64_t co = 0; co < Co; ++co)
            for (std::int64_t z = 0; z < D; ++z)
                for (std::int64_t y = 0; y < H; ++y)
                    for (std::int64_t xi = 0; xi < W; ++xi)
                        for (std::int64_t kz = 0; kz < k; ++kz)
                            for (std::int64_t ky = 0; ky < k; ++ky)
                                for (std::int64_t kx = 0; kx < k; ++kx)
                                    out[((co * Do + z * s + kz) * Ho + y * s + ky) * Wo + xi * s +
                                        kx] +=
                                        w.data()[(((ci * Co + co) * k + kz) * k + ky) * k + kx] *
                                        x.data()[((ci * D + z) * H + y) * W + xi];
    return out;
}

}  // namespace

TEST(Conv3d, MatchesOracleStride1Pad1) {
    auto x = rand_t({2, 5, 5, 5}, 31);
    auto w = rand_t({3, 2, 3, 3, 3}, 32);
    auto b = rand_t({3}, 33);
    auto y = conv3d(x, w, b, 1, 1);
    ASSERT_EQ(y.shape(), (Shape{3, 5, 5, 5}));
    auto ref = conv_oracle(x, w, b, 1, 1);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.data()[i], ref[i], 1e-12);
}

TEST(Conv3d, MatchesOracleStride2Pad0) {
    auto x = rand_t({3, 6, 6, 6}, 34);
    auto w = rand_t({2, 3, 2, 2, 2}, 35);
    auto b = rand_t({2}, 36);
    auto y = conv3d(x, w, b, 2, 0);
    ASSERT_EQ(y.shape(), (Shape{2, 3, 3, 3}));
    auto ref = conv_oracle(x, w, b, 2, 0);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.data()[i], ref[i], 1e-12);
}

TEST(Conv3d, MatchesOracleKernel7Pad3) {
    auto x = rand_t({1, 8, 8, 8}, 37);
    auto w = rand_t({2, 1, 7, 7, 7}, 38, 0.2);
    auto b = rand_t({2}, 39);
    auto y = conv3d(x, w, b, 1, 3);
    ASSERT_EQ(y.shape(), (Shape{2, 8, 8, 8}));
    auto ref = conv_oracle(x, w, b, 1, 3);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.data()[i], ref[i], 1e-10);
}

TEST(Conv3d, OneByOneKernelIsChannelMix) {
    auto x = rand_t({3, 4, 4, 4}, 40);
    auto w = rand_t({2, 3, 1, 1, 1}, 41);
    auto b = Tensor<double>::zeros({2});
    auto y = conv3d(x, w, b, 1, 0);
    for (int v = 0; v < 64; ++v)
        for (int co = 0; co < 2; ++co) {
            double acc = 0.0;
            for (int ci = 0; ci < 3; ++ci)
                acc += w.data()[co * 3 + ci] * x.data()[ci * 64 + v];
            EXPECT_NEAR(y.data()[co * 64 + v], acc, 1e-12);
        }
}

TEST(Conv3d, ShapeValidation) {
    auto x = rand_t({2, 4, 4, 4}, 42);
    auto w = rand_t({3, 2, 3, 3, 3}, 43);
    auto b = rand_t({3}, 44);
    EXPECT_THROW(conv3d(rand_t({4, 4, 4}, 45), w, b, 1, 1), ShapeError);
    EXPECT_THROW(conv3d(x, rand_t({3, 1, 3, 3, 3}, 46), b, 1, 1), ShapeError);
    EXPECT_THROW(conv3d(x, w, rand_t({2}, 47), 1, 1), ShapeError);
    EXPECT_THROW(conv3d(x, rand_t({3, 2, 7, 7, 7}, 48), b, 1, 0), ShapeError);
}

TEST(Conv3d, Gradients) {
    auto x = rand_t({2, 4, 4, 4}, 51);
    auto w = rand_t({2, 2, 3, 3, 3}, 52, 0.5);
    auto b = rand_t({2}, 53);
    EXPECT_TRUE(grad_check("conv3d", [&] { return conv3d(x, w, b, 1, 1); }, {x, w, b}).passed);
    EXPECT_TRUE(grad_check("conv3d_s2", [&] { return conv3d(x, w, b, 2, 1); }, {x, w, b}).passed);
}

TEST(ConvTranspose3d, MatchesOracle) {
    auto x = rand_t({2, 3, 3, 3}, 54);
    auto w = rand_t({2, 3, 2, 2, 2}, 55);
    auto b = rand_t({3}, 56);
    auto y = conv_transpose3d(x, w, b, 2);
    ASSERT_EQ(y.shape(), (Shape{3, 6, 6, 6}));
    auto ref = conv_transpose_oracle(x, w, b, 2);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.data()[i], ref[i], 1e-12);
}

TEST(ConvTranspose3d, InvertsStride2DownsamplingShape) {
    auto x = rand_t({4, 5, 5, 5}, 57);
    auto w = rand_t({4, 2, 2, 2, 2}, 58);
    auto b = Tensor<double>::zeros({2});
    auto y = conv_transpose3d(x, w, b, 2);
    EXPECT_EQ(y.shape(), (Shape{2, 10, 10, 10}));
}

// <conv_transpose(x, w), y> == <x, conv(y, w)> with matching stride and
// no padding: the (Ci,Co,k,k,k) weight read as (Co',Ci',k,k,k) is exactly
// the adjoint convolution's kernel, so the transpose op really is the
// adjoint.
TEST(ConvTranspose3d, AdjointOfStridedConv) {
    auto x = rand_t({2, 3, 3, 3}, 59);
    auto w = rand_t({2, 3, 2, 2, 2}, 60);
    auto zero2 = Tensor<double>::zeros({2});
    auto zero3 = Tensor<double>::zeros({3});
    auto up = conv_transpose3d(x, w, zero3, 2);
    auto y = rand_t(up.shape(), 61);
    double lhs = 0.0;
    for (std::size_t i = 0; i < up.data().size(); ++i) lhs += up.data()[i] * y.data()[i];
    auto down = conv3d(y, w, zero2, 2, 0);
    ASSERT_EQ(down.shape(), x.shape());
    double rhs = 0.0;
    for (std::size_t i = 0; i < x.data().size(); ++i) rhs += x.data()[i] * down.data()[i];
    EXPECT_NEAR(lhs, rhs, 1e-10 * std::max(1.0, std::fabs(lhs)));
}

TEST(ConvTranspose3d, Gradients) {
    auto x = rand_t({2, 3, 3, 3}, 62);
    auto w = rand_t({2, 2, 2, 2, 2}, 63, 0.5);
    auto b = rand_t({2}, 64);
    EXPECT_TRUE(
        grad_check("conv_transpose3d", [&] { return conv_transpose3d(x, w, b, 2); }, {x, w, b})
            .passed);
}

TEST(TrilinearResize, IdentityAtSameSize) {
    auto x = rand_t({2, 4, 5, 6}, 65);
    auto y = trilinear_resize(x, 4, 5, 6);
    for (std::size_t i = 0; i < x.data().size(); ++i) EXPECT_NEAR(y.data()[i], x.data()[i], 1e-14);
}

TEST(TrilinearResize, PreservesConstants) {
    auto x = Tensor<double>::full({1, 6, 6, 6}, 3.25);
    auto y = trilinear_resize(x, 3, 4, 5);
    for (double v : y.data()) EXPECT_NEAR(v, 3.25, 1e-13);
    auto z = trilinear_resize(x, 12, 9, 7);
    for (double v : z.data()) EXPECT_NEAR(v, 3.25, 1e-13);
}

TEST(TrilinearResize, HalvingAveragesPairs) {
    // At exactly half size, each source coordinate lands midway between
    // two input samples, so outputs are the average of a 2x2x2 block.
    auto x = rand_t({1, 4, 4, 4}, 66);
    auto y = trilinear_resize(x, 2, 2, 2);
    for (int z = 0; z < 2; ++z)
        for (int yy = 0; yy < 2; ++yy)
            for (int xx = 0; xx < 2; ++xx) {
                double acc = 0.0;
                for (int dz = 0; dz < 2; ++dz)
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx)
                            acc += x.data()[((2 * z + dz) * 4 + 2 * yy + dy) * 4 + 2 * xx + dx];
                EXPECT_NEAR(y.data()[(z * 2 + yy) * 2 + xx], acc / 8.0, 1e-12);
            }
}

TEST(TrilinearResize, Gradient) {
    auto x = rand_t({2, 4, 4, 4}, 67);
    EXPECT_TRUE(
        grad_check("trilinear_down", [&] { return trilinear_resize(x, 2, 2, 2); }, {x}).passed);
    EXPECT_TRUE(
        grad_check("trilinear_up", [&] { return trilinear_resize(x, 6, 7, 8); }, {x}).passed);
}
