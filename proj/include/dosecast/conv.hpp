#pragma once

// Volumetric ops on (C, D, H, W) tensors: conv3d, conv_transpose3d and
// trilinear_resize. Kernels are cubic; inner loops run along W so the
// stride-1 paths stay contiguous.

#include <cmath>

#include "tensor.hpp"

namespace dosecast {

namespace detail {

inline void check_vol4(const char* op, const Shape& s) {
    if (s.size() != 4)
        throw ShapeError(std::string(op) + ": expected (C,D,H,W), got " + shape_str(s));
}

// Output positions z with z*stride + koff - pad inside [0, in_extent).
struct ConvRange {
    std::int64_t lo, hi;  // [lo, hi)
};

inline ConvRange conv_range(std::int64_t in_extent, std::int64_t out_extent,
                            std::int64_t stride, std::int64_t pad, std::int64_t koff) {
    std::int64_t lo = pad - koff;
    lo = lo <= 0 ? 0 : (lo + stride - 1) / stride;
    const std::int64_t num = in_extent - 1 + pad - koff;
    std::int64_t hi = num < 0 ? 0 : num / stride + 1;
    if (hi > out_extent) hi = out_extent;
    if (lo > hi) lo = hi;
    return {lo, hi};
}

}  // namespace detail

// x (Ci,D,H,W), w (Co,Ci,k,k,k), b (Co). Output extent (E + 2*pad - k)/stride + 1.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 std::int64_t stride, std::int64_t pad) {
    detail::check_vol4("conv3d", x.shape());
    if (w.shape().size() != 5 || w.shape()[2] != w.shape()[3] || w.shape()[2] != w.shape()[4])
        throw ShapeError("conv3d: weight " + shape_str(w.shape()) + " is not (Co,Ci,k,k,k)");
    const std::int64_t Ci = x.shape()[0], D = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const std::int64_t Co = w.shape()[0], k = w.shape()[2];
    if (w.shape()[1] != Ci)
        throw ShapeError("conv3d: weight expects " + std::to_string(w.shape()[1]) +
                         " input channels, got " + std::to_string(Ci));
    if (b.shape().size() != 1 || b.shape()[0] != Co)
        throw ShapeError("conv3d: bias " + shape_str(b.shape()) + " for " + std::to_string(Co) +
                         " channels");
    if (stride < 1 || pad < 0) throw ConfigError("conv3d: stride/pad out of range");
    const std::int64_t Do = (D + 2 * pad - k) / stride + 1;
    const std::int64_t Ho = (H + 2 * pad - k) / stride + 1;
    const std::int64_t Wo = (W + 2 * pad - k) / stride + 1;
    if (Do < 1 || Ho < 1 || Wo < 1)
        throw ShapeError("conv3d: kernel " + std::to_string(k) + " too large for input " +
                         shape_str(x.shape()));

    std::vector<T> out(static_cast<std::size_t>(Co * Do * Ho * Wo));
    const T* xv = x.data().data();
    const T* wv = w.data().data();
    const T* bv = b.data().data();
    for (std::int64_t co = 0; co < Co; ++co)
        std::fill(out.begin() + co * Do * Ho * Wo, out.begin() + (co + 1) * Do * Ho * Wo, bv[co]);
    for (std::int64_t co = 0; co < Co; ++co) {
        for (std::int64_t ci = 0; ci < Ci; ++ci) {
            const T* wbase = wv + (co * Ci + ci) * k * k * k;
            for (std::int64_t kz = 0; kz < k; ++kz) {
                const auto rz = detail::conv_range(D, Do, stride, pad, kz);
                for (std::int64_t ky = 0; ky < k; ++ky) {
                    const auto ry = detail::conv_range(H, Ho, stride, pad, ky);
                    for (std::int64_t kx = 0; kx < k; ++kx) {
                        const auto rx = detail::conv_range(W, Wo, stride, pad, kx);
                        const T wval = wbase[(kz * k + ky) * k + kx];
                        const std::int64_t nx = rx.hi - rx.lo;
                        for (std::int64_t z = rz.lo; z < rz.hi; ++z) {
                            const std::int64_t iz = z * stride + kz - pad;
                            for (std::int64_t y = ry.lo; y < ry.hi; ++y) {
                                const std::int64_t iy = y * stride + ky - pad;
                                const T* irow = xv + ((ci * D + iz) * H + iy) * W +
                                                (rx.lo * stride + kx - pad);
                                T* orow = out.data() + ((co * Do + z) * Ho + y) * Wo + rx.lo;
                                if (stride == 1) {
                                    for (std::int64_t i = 0; i < nx; ++i) orow[i] += wval * irow[i];
                                } else {
                                    for (std::int64_t i = 0; i < nx; ++i)
                                        orow[i] += wval * irow[i * stride];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    auto nx_ = x.node();
    auto nw = w.node();
    auto nb = b.node();
    return detail::make_result<T>("conv3d", {Co, Do, Ho, Wo}, std::move(out), {x, w, b},
        [nx_, nw, nb, Ci, D, H, W, Co, k, Do, Ho, Wo, stride, pad](
            const std::vector<T>& g, GradMap<T>& grads) {
            const T* xv = nx_->data.data();
            const T* wv = nw->data.data();
            auto& gx = detail::grad_slot(grads, nx_.get());
            auto& gw = detail::grad_slot(grads, nw.get());
            auto& gb = detail::grad_slot(grads, nb.get());
            for (std::int64_t co = 0; co < Co; ++co) {
                T acc = T(0);
                const T* grow = g.data() + co * Do * Ho * Wo;
                for (std::int64_t i = 0; i < Do * Ho * Wo; ++i) acc += grow[i];
                gb[co] += acc;
            }
            for (std::int64_t co = 0; co < Co; ++co) {
                for (std::int64_t ci = 0; ci < Ci; ++ci) {
                    const T* wbase = wv + (co * Ci + ci) * k * k * k;
                    T* gwbase = gw.data() + (co * Ci + ci) * k * k * k;
                    for (std::int64_t kz = 0; kz < k; ++kz) {
                        const auto rz = detail::conv_range(D, Do, stride, pad, kz);
                        for (std::int64_t ky = 0; ky < k; ++ky) {
                            const auto ry = detail::conv_range(H, Ho, stride, pad, ky);
                            for (std::int64_t kx = 0; kx < k; ++kx) {
                                const auto rx = detail::conv_range(W, Wo, stride, pad, kx);
                                const T wval = wbase[(kz * k + ky) * k + kx];
                                const std::int64_t nxr = rx.hi - rx.lo;
                                T wacc = T(0);
                                for (std::int64_t z = rz.lo; z < rz.hi; ++z) {
                                    const std::int64_t iz = z * stride + kz - pad;
                                    for (std::int64_t y = ry.lo; y < ry.hi; ++y) {
                                        const std::int64_t iy = y * stride + ky - pad;
                                        const std::int64_t ibase =
                                            ((ci * D + iz) * H + iy) * W + (rx.lo * stride + kx - pad);
                                        const T* irow = xv + ibase;
                                        T* gxrow = gx.data() + ibase;
                                        const T* grow =
                                            g.data() + ((co * Do + z) * Ho + y) * Wo + rx.lo;
                                        if (stride == 1) {
                                            for (std::int64_t i = 0; i < nxr; ++i) {
                                                gxrow[i] += wval * grow[i];
                                                wacc += grow[i] * irow[i];
                                            }
                                        } else {
                                            for (std::int64_t i = 0; i < nxr; ++i) {
                                                gxrow[i * stride] += wval * grow[i];
                                                wacc += grow[i] * irow[i * stride];
                                            }
                                        }
                                    }
                                }
                                gwbase[(kz * k + ky) * k + kx] += wacc;
                            }
                        }
                    }
                }
            }
        });
}

// x (Ci,D,H,W), w (Ci,Co,k,k,k), b (Co). Output extent (E-1)*stride + k.
template <typename T>
Tensor<T> conv_transpose3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                           std::int64_t stride) {
    detail::check_vol4("conv_transpose3d", x.shape());
    if (w.shape().size() != 5 || w.shape()[2] != w.shape()[3] || w.shape()[2] != w.shape()[4])
        throw ShapeError("conv_transpose3d: weight " + shape_str(w.shape()) + " is not (Ci,Co,k,k,k)");
    const std::int64_t Ci = x.shape()[0], D = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const std::int64_t Co = w.shape()[1], k = w.shape()[2];
    if (w.shape()[0] != Ci)
        throw ShapeError("conv_transpose3d: weight expects " + std::to_string(w.shape()[0]) +
                         " input channels, got " + std::to_string(Ci));
    if (b.shape().size() != 1 || b.shape()[0] != Co)
        throw ShapeError("conv_transpose3d: bias " + shape_str(b.shape()) + " for " +
                         std::to_string(Co) + " channels");
    if (stride < 1) throw ConfigError("conv_transpose3d: stride out of range");
    const std::int64_t Do = (D - 1) * stride + k;
    const std::int64_t Ho = (H - 1) * stride + k;
    const std::int64_t Wo = (W - 1) * stride + k;

    std::vector<T> out(static_cast<std::size_t>(Co * Do * Ho * Wo));
    const T* xv = x.data().data();
    const T* wv = w.data().data();
    const T* bv = b.data().data();
    for (std::int64_t co = 0; co < Co; ++co)
        std::fill(out.begin() + co * Do * Ho * Wo, out.begin() + (co + 1) * Do * Ho * Wo, bv[co]);
    for (std::int64_t ci = 0; ci < Ci; ++ci) {
        for (std::int64_t co = 0; co < Co; ++co) {
            const T* wbase = wv + (ci * Co + co) * k * k * k;
            for (std::int64_t kz = 0; kz < k; ++kz) {
                for (std::int64_t ky = 0; ky < k; ++ky) {
                    for (std::int64_t kx = 0; kx < k; ++kx) {
                        const T wval = wbase[(kz * k + ky) * k + kx];
                        for (std::int64_t z = 0; z < D; ++z) {
                            const std::int64_t oz = z * stride + kz;
                            for (std::int64_t y = 0; y < H; ++y) {
                                const std::int64_t oy = y * stride + ky;
                                const T* irow = xv + ((ci * D + z) * H + y) * W;
                                T* orow = out.data() + ((co * Do + oz) * Ho + oy) * Wo + kx;
                                for (std::int64_t i = 0; i < W; ++i)
                                    orow[i * stride] += wval * irow[i];
                            }
                        }
                    }
                }
            }
        }
    }

    auto nx_ = x.node();
    auto nw = w.node();
    auto nb = b.node();
    return detail::make_result<T>("conv_transpose3d", {Co, Do, Ho, Wo}, std::move(out), {x, w, b},
        [nx_, nw, nb, Ci, D, H, W, Co, k, Do, Ho, Wo, stride](
            const std::vector<T>& g, GradMap<T>& grads) {
            const T* xv = nx_->data.data();
            const T* wv = nw->data.data();
            auto& gx = detail::grad_slot(grads, nx_.get());
            auto& gw = detail::grad_slot(grads, nw.get());
            auto& gb = detail::grad_slot(grads, nb.get());
            for (std::int64_t co = 0; co < Co; ++co) {
                T acc = T(0);
                const T* grow = g.data() + co * Do * Ho * Wo;
                for (std::int64_t i = 0; i < Do * Ho * Wo; ++i) acc += grow[i];
                gb[co] += acc;
            }
            for (std::int64_t ci = 0; ci < Ci; ++ci) {
                for (std::int64_t co = 0; co < Co; ++co) {
                    const T* wbase = wv + (ci * Co + co) * k * k * k;
                    T* gwbase = gw.data() + (ci * Co + co) * k * k * k;
                    for (std::int64_t kz = 0; kz < k; ++kz) {
                        for (std::int64_t ky = 0; ky < k; ++ky) {
                            for (std::int64_t kx = 0; kx < k; ++kx) {
                                const T wval = wbase[(kz * k + ky) * k + kx];
                                T wacc = T(0);
                                for (std::int64_t z = 0; z < D; ++z) {
                                    const std::int64_t oz = z * stride + kz;
                                    for (std::int64_t y = 0; y < H; ++y) {
                                        const std::int64_t oy = y * stride + ky;
                                        const std::int64_t ibase = ((ci * D + z) * H + y) * W;
                                        const T* irow = xv + ibase;
                                        T* gxrow = gx.data() + ibase;
                                        const T* grow =
                                            g.data() + ((co * Do + oz) * Ho + oy) * Wo + kx;
                                        for (std::int64_t i = 0; i < W; ++i) {
                                            gxrow[i] += wval * grow[i * stride];
                                            wacc += irow[i] * grow[i * stride];
                                        }
                                    }
                                }
                                gwbase[(kz * k + ky) * k + kx] += wacc;
                            }
                        }
                    }
                }
            }
        });
}

namespace detail {

struct LerpTab {
    std::vector<std::int64_t> i0, i1;
    std::vector<double> t;
};

// Half-pixel source sampling, clamped to the valid range.
inline LerpTab lerp_axis(std::int64_t in, std::int64_t out) {
    LerpTab tab;
    tab.i0.resize(static_cast<std::size_t>(out));
    tab.i1.resize(static_cast<std::size_t>(out));
    tab.t.resize(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::int64_t o = 0; o < out; ++o) {
        double f = (static_cast<double>(o) + 0.5) * scale - 0.5;
        if (f < 0.0) f = 0.0;
        const double fmax = static_cast<double>(in - 1);
        if (f > fmax) f = fmax;
        const auto i0 = static_cast<std::int64_t>(f);
        tab.i0[static_cast<std::size_t>(o)] = i0;
        tab.i1[static_cast<std::size_t>(o)] = std::min(i0 + 1, in - 1);
        tab.t[static_cast<std::size_t>(o)] = f - static_cast<double>(i0);
    }
    return tab;
}

}  // namespace detail

template <typename T>
Tensor<T> trilinear_resize(const Tensor<T>& x, std::int64_t Do, std::int64_t Ho, std::int64_t Wo) {
    detail::check_vol4("trilinear_resize", x.shape());
    if (Do < 1 || Ho < 1 || Wo < 1) throw ShapeError("trilinear_resize: empty target");
    const std::int64_t C = x.shape()[0], D = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const auto tz = detail::lerp_axis(D, Do);
    const auto ty = detail::lerp_axis(H, Ho);
    const auto tx = detail::lerp_axis(W, Wo);
    std::vector<T> out(static_cast<std::size_t>(C * Do * Ho * Wo));
    const T* xv = x.data().data();
    for (std::int64_t c = 0; c < C; ++c) {
        const T* xc = xv + c * D * H * W;
        T* oc = out.data() + c * Do * Ho * Wo;
        for (std::int64_t z = 0; z < Do; ++z) {
            const std::int64_t z0 = tz.i0[z], z1 = tz.i1[z];
            const double az = tz.t[z];
            for (std::int64_t y = 0; y < Ho; ++y) {
                const std::int64_t y0 = ty.i0[y], y1 = ty.i1[y];
                const double ay = ty.t[y];
                const T* r00 = xc + (z0 * H + y0) * W;
                const T* r01 = xc + (z0 * H + y1) * W;
                const T* r10 = xc + (z1 * H + y0) * W;
                const T* r11 = xc + (z1 * H + y1) * W;
                T* orow = oc + (z * Ho + y) * Wo;
                for (std::int64_t xo = 0; xo < Wo; ++xo) {
                    const std::int64_t x0 = tx.i0[xo], x1 = tx.i1[xo];
                    const double ax = tx.t[xo];
                    const double v00 = (1.0 - ax) * r00[x0] + ax * r00[x1];
                    const double v01 = (1.0 - ax) * r01[x0] + ax * r01[x1];
                    const double v10 = (1.0 - ax) * r10[x0] + ax * r10[x1];
                    const double v11 = (1.0 - ax) * r11[x0] + ax * r11[x1];
                    const double v0 = (1.0 - ay) * v00 + ay * v01;
                    const double v1 = (1.0 - ay) * v10 + ay * v11;
                    orow[xo] = static_cast<T>((1.0 - az) * v0 + az * v1);
                }
            }
        }
    }
    auto nx_ = x.node();
    return detail::make_result<T>("trilinear_resize", {C, Do, Ho, Wo}, std::move(out), {x},
        [nx_, C, D, H, W, Do, Ho, Wo, tz, ty, tx](const std::vector<T>& g, GradMap<T>& grads) {
            auto& gx = detail::grad_slot(grads, nx_.get());
            for (std::int64_t c = 0; c < C; ++c) {
                T* gc = gx.data() + c * D * H * W;
                const T* grow0 = g.data() + c * Do * Ho * Wo;
                for (std::int64_t z = 0; z < Do; ++z) {
                    const std::int64_t z0 = tz.i0[z], z1 = tz.i1[z];
                    const double az = tz.t[z];
                    for (std::int64_t y = 0; y < Ho; ++y) {
                        const std::int64_t y0 = ty.i0[y], y1 = ty.i1[y];
                        const double ay = ty.t[y];
                        const T* grow = grow0 + (z * Ho + y) * Wo;
                        for (std::int64_t xo = 0; xo < Wo; ++xo) {
                            const std::int64_t x0 = tx.i0[xo], x1 = tx.i1[xo];
                            const double ax = tx.t[xo];
                            const double gv = static_cast<double>(grow[xo]);
                            const double wz0 = 1.0 - az, wz1 = az;
                            const double wy0 = 1.0 - ay, wy1 = ay;
                            const double wx0 = 1.0 - ax, wx1 = ax;
                            gc[(z0 * H + y0) * W + x0] += static_cast<T>(gv * wz0 * wy0 * wx0);
                            gc[(z0 * H + y0) * W + x1] += static_cast<T>(gv * wz0 * wy0 * wx1);
                            gc[(z0 * H + y1) * W + x0] += static_cast<T>(gv * wz0 * wy1 * wx0);
                            gc[(z0 * H + y1) * W + x1] += static_cast<T>(gv * wz0 * wy1 * wx1);
                            gc[(z1 * H + y0) * W + x0] += static_cast<T>(gv * wz1 * wy0 * wx0);
                            gc[(z1 * H + y0) * W + x1] += static_cast<T>(gv * wz1 * wy0 * wx1);
                            gc[(z1 * H + y1) * W + x0] += static_cast<T>(gv * wz1 * wy1 * wx0);
                            gc[(z1 * H + y1) * W + x1] += static_cast<T>(gv * wz1 * wy1 * wx1);
                        }
                    }
                }
            }
        });
}

}  // namespace dosecast
