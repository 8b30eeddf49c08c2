#pragma once

// Differentiable tensor ops: elementwise, structural, matmul, reductions,
// softmax and layer_norm. Volumetric ops live in conv.hpp, included at the
// bottom so this header is the single entry point.

#include <cmath>
#include <cstring>

#include "tensor.hpp"

namespace dosecast {

namespace detail {

template <typename T>
void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (!same_shape(a.shape(), b.shape()))
        throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()) + " differ");
}

// Resolve an axis, allowing negative indices.
inline std::size_t resolve_axis(const char* op, std::int64_t axis, std::size_t ndim) {
    std::int64_t a = axis < 0 ? axis + static_cast<std::int64_t>(ndim) : axis;
    if (a < 0 || a >= static_cast<std::int64_t>(ndim))
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for rank " + std::to_string(ndim));
    return static_cast<std::size_t>(a);
}

struct AxisSplit {
    std::int64_t outer, m, inner;
};

inline AxisSplit axis_split(const Shape& s, std::size_t axis) {
    AxisSplit sp{1, s[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) sp.outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) sp.inner *= s[i];
    return sp;
}

template <typename T, typename F, typename DF>
Tensor<T> unary_op(const char* name, const Tensor<T>& a, F f, DF dfdx) {
    const auto& x = a.data();
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<T>(f(static_cast<double>(x[i])));
    auto pa = a.node();
    return make_result<T>(name, a.shape(), std::move(out), {a},
        [pa, dfdx](const std::vector<T>& g, GradMap<T>& grads) {
            auto& ga = grad_slot(grads, pa.get());
            const auto& xv = pa->data;
            for (std::size_t i = 0; i < g.size(); ++i)
                ga[i] += g[i] * static_cast<T>(dfdx(static_cast<double>(xv[i])));
        });
}

}  // namespace detail

// ------------------------------------------------------------ elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape("add", a, b);
    const auto& xa = a.data();
    const auto& xb = b.data();
    std::vector<T> out(xa.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xa[i] + xb[i];
    auto pa = a.node();
    auto pb = b.node();
    return detail::make_result<T>("add", a.shape(), std::move(out), {a, b},
        [pa, pb](const std::vector<T>& g, GradMap<T>& grads) {
            auto& ga = detail::grad_slot(grads, pa.get());
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            auto& gb = detail::grad_slot(grads, pb.get());
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape("sub", a, b);
    const auto& xa = a.data();
    const auto& xb = b.data();
    std::vector<T> out(xa.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xa[i] - xb[i];
    auto pa = a.node();
    auto pb = b.node();
    return detail::make_result<T>("sub", a.shape(), std::move(out), {a, b},
        [pa, pb](const std::vector<T>& g, GradMap<T>& grads) {
            auto& ga = detail::grad_slot(grads, pa.get());
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            auto& gb = detail::grad_slot(grads, pb.get());
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape("mul", a, b);
    const auto& xa = a.data();
    const auto& xb = b.data();
    std::vector<T> out(xa.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xa[i] * xb[i];
    auto pa = a.node();
    auto pb = b.node();
    return detail::make_result<T>("mul", a.shape(), std::move(out), {a, b},
        [pa, pb](const std::vector<T>& g, GradMap<T>& grads) {
            auto& ga = detail::grad_slot(grads, pa.get());
            const auto& vb = pb->data;
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
            auto& gb = detail::grad_slot(grads, pb.get());
            const auto& va = pa->data;
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
        });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape("div", a, b);
    const auto& xa = a.data();
    const auto& xb = b.data();
    std::vector<T> out(xa.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xa[i] / xb[i];
    auto pa = a.node();
    auto pb = b.node();
    return detail::make_result<T>("div", a.shape(), std::move(out), {a, b},
        [pa, pb](const std::vector<T>& g, GradMap<T>& grads) {
            const auto& va = pa->data;
            const auto& vb = pb->data;
            auto& ga = detail::grad_slot(grads, pa.get());
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / vb[i];
            auto& gb = detail::grad_slot(grads, pb.get());
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * va[i] / (vb[i] * vb[i]);
        });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, double s) {
    return detail::unary_op("add_scalar", a,
        [s](double x) { return x + s; },
        [](double) { return 1.0; });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, double s) {
    return detail::unary_op("mul_scalar", a,
        [s](double x) { return x * s; },
        [s](double) { return s; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) { return mul_scalar(a, -1.0); }

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    return detail::unary_op("relu", a,
        [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    return detail::unary_op("gelu", a,
        [=](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
        [=](double x) {
            const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            return cdf + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
        });
}

namespace detail {
inline double softplus(double x) { return x > 20.0 ? x : std::log1p(std::exp(x)); }
}

template <typename T>
Tensor<T> mish(const Tensor<T>& a) {
    return detail::unary_op("mish", a,
        [](double x) { return x * std::tanh(detail::softplus(x)); },
        [](double x) {
            const double t = std::tanh(detail::softplus(x));
            const double sig = 1.0 / (1.0 + std::exp(-x));
            return t + x * (1.0 - t * t) * sig;
        });
}

// log(x + eps); inputs are expected nonnegative (probabilities).
template <typename T>
Tensor<T> log_eps(const Tensor<T>& a, double eps) {
    return detail::unary_op("log_eps", a,
        [eps](double x) { return std::log(x + eps); },
        [eps](double x) { return 1.0 / (x + eps); });
}

template <typename T>
Tensor<T> abs_of(const Tensor<T>& a) {
    return detail::unary_op("abs", a,
        [](double x) { return std::fabs(x); },
        [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

// ------------------------------------------------------------ structural

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, const Shape& s) {
    if (numel(s) != numel(a.shape()))
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(s));
    std::vector<T> out = a.data();
    auto pa = a.node();
    return detail::make_result<T>("reshape", s, std::move(out), {a},
        [pa](const std::vector<T>& g, GradMap<T>& grads) {
            auto& ga = detail::grad_slot(grads, pa.get());
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        });
}

namespace detail {

inline std::vector<std::int64_t> row_major_strides(const Shape& s) {
    std::vector<std::int64_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

// out multi-index J picks in element I with I = J mapped through perm:
// out.shape[j] == in.shape[perm[j]].
template <typename T>
void permute_gather(const Shape& out_shape, const std::vector<std::int64_t>& in_strides,
                    const std::vector<std::size_t>& perm, const T* in, T* out, bool accumulate) {
    const std::size_t nd = out_shape.size();
    std::vector<std::int64_t> gather(nd);
    for (std::size_t j = 0; j < nd; ++j) gather[j] = in_strides[perm[j]];
    std::vector<std::int64_t> idx(nd, 0);
    const std::int64_t total = numel(out_shape);
    std::int64_t src = 0;
    for (std::int64_t lin = 0; lin < total; ++lin) {
        if (accumulate)
            out[src] += in[lin];
        else
            out[lin] = in[src];
        for (std::size_t j = nd; j-- > 0;) {
            src += gather[j];
            if (++idx[j] < out_shape[j]) break;
            src -= gather[j] * out_shape[j];
            idx[j] = 0;
        }
    }
}

}  // namespace detail

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& perm) {
    const std::size_t nd = a.shape().size();
    if (perm.size() != nd)
        throw ShapeError("permute: " + std::to_string(perm.size()) + " axes for rank " +
                         std::to_string(nd));
    std::vector<bool> seen(nd, false);
    for (std::size_t p : perm) {
        if (p >= nd || seen[p]) throw ShapeError("permute: invalid axis list");
        seen[p] = true;
    }
    Shape out_shape(nd);
    for (std::size_t j = 0; j < nd; ++j) out_shape[j] = a.shape()[perm[j]];
    auto in_strides = detail::row_major_strides(a.shape());
    std::vector<T> out(a.data().size());
    detail::permute_gather(out_shape, in_strides, perm, a.data().data(), out.data(), false);
    auto pa = a.node();
    return detail::make_result<T>("permute", out_shape, std::move(out), {a},
        [pa, out_shape, in_strides, perm](const std::vector<T>& g, GradMap<T>& grads) {
            auto& ga = detail::grad_slot(grads, pa.get());
            detail::permute_gather(out_shape, in_strides, perm, g.data(), ga.data(), true);
        });
}

// Note the accumulate path in permute_gather runs "out[src] += in[lin]"
// where src walks the permuted strides, which is exactly the scatter of
// the forward gather.

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::int64_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const std::size_t ax = detail::resolve_axis("concat", axis, parts[0].shape().size());
    Shape out_shape = parts[0].shape();
    std::int64_t total_axis = 0;
    for (const auto& p : parts) {
        if (p.shape().size() != out_shape.size())
            throw ShapeError("concat: rank mismatch");
        for (std::size_t i = 0; i < out_shape.size(); ++i)
            if (i != ax && p.shape()[i] != out_shape[i])
                throw ShapeError("concat: shapes " + shape_str(out_shape) + " and " +
                                 shape_str(p.shape()) + " differ off axis");
        total_axis += p.shape()[ax];
    }
    out_shape[ax] = total_axis;
    const auto sp = detail::axis_split(out_shape, ax);
    std::vector<T> out(static_cast<std::size_t>(numel(out_shape)));
    std::vector<std::int64_t> blocks;  // per-part axis extent * inner
    blocks.reserve(parts.size());
    for (const auto& p : parts) blocks.push_back(p.shape()[ax] * sp.inner);
    const std::int64_t out_block = total_axis * sp.inner;
    for (std::int64_t o = 0; o < sp.outer; ++o) {
        std::int64_t off = o * out_block;
        for (std::size_t k = 0; k < parts.size(); ++k) {
            const T* src = parts[k].data().data() + o * blocks[k];
            std::memcpy(out.data() + off, src, static_cast<std::size_t>(blocks[k]) * sizeof(T));
            off += blocks[k];
        }
    }
    std::vector<std::shared_ptr<TensorNode<T>>> pnodes;
    pnodes.reserve(parts.size());
    for (const auto& p : parts) pnodes.push_back(p.node());
    const std::int64_t outer = sp.outer;
    return detail::make_result<T>("concat", out_shape, std::move(out), parts,
        [pnodes, blocks, out_block, outer](const std::vector<T>& g, GradMap<T>& grads) {
            for (std::int64_t o = 0; o < outer; ++o) {
                std::int64_t off = o * out_block;
                for (std::size_t k = 0; k < pnodes.size(); ++k) {
                    auto& gp = detail::grad_slot(grads, pnodes[k].get());
                    T* dst = gp.data() + o * blocks[k];
                    const T* src = g.data() + off;
                    for (std::int64_t i = 0; i < blocks[k]; ++i) dst[i] += src[i];
                    off += blocks[k];
                }
            }
        });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::int64_t axis, std::int64_t start, std::int64_t len) {
    const std::size_t ax = detail::resolve_axis("slice", axis, a.shape().size());
    const std::int64_t m = a.shape()[ax];
    if (start < 0 || len <= 0 || start + len > m)
        throw ShapeError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") outside extent " + std::to_string(m));
    Shape out_shape = a.shape();
    out_shape[ax] = len;
    const auto sp = detail::axis_split(a.shape(), ax);
    std::vector<T> out(static_cast<std::size_t>(numel(out_shape)));
    const std::int64_t in_block = m * sp.inner;
    const std::int64_t out_block = len * sp.inner;
    const std::int64_t shift = start * sp.inner;
    for (std::int64_t o = 0; o < sp.outer; ++o)
        std::memcpy(out.data() + o * out_block, a.data().data() + o * in_block + shift,
                    static_cast<std::size_t>(out_block) * sizeof(T));
    auto pa = a.node();
    const std::int64_t outer = sp.outer;
    return detail::make_result<T>("slice", out_shape, std::move(out), {a},
        [pa, in_block, out_block, shift, outer](const std::vector<T>& g, GradMap<T>& grads) {
            auto& ga = detail::grad_slot(grads, pa.get());
            for (std::int64_t o = 0; o < outer; ++o) {
                T* dst = ga.data() + o * in_block + shift;
                const T* src = g.data() + o * out_block;
                for (std::int64_t i = 0; i < out_block; ++i) dst[i] += src[i];
            }
        });
}

// ------------------------------------------------------------ reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    const auto& x = a.data();
    T acc = T(0);
    for (T v : x) acc += v;
    auto pa = a.node();
    return detail::make_result<T>("sum", {1}, {acc}, {a},
        [pa](const std::vector<T>& g, GradMap<T>& grads) {
            auto& ga = detail::grad_slot(grads, pa.get());
            const T gv = g[0];
            for (auto& v : ga) v += gv;
        });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    const auto& x = a.data();
    T acc = T(0);
    for (T v : x) acc += v;
    const T inv = T(1) / static_cast<T>(x.size());
    auto pa = a.node();
    return detail::make_result<T>("mean", {1}, {acc * inv}, {a},
        [pa, inv](const std::vector<T>& g, GradMap<T>& grads) {
            auto& ga = detail::grad_slot(grads, pa.get());
            const T gv = g[0] * inv;
            for (auto& v : ga) v += gv;
        });
}

// -------------------------------------------------------------- linear

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
        throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const std::int64_t M = a.shape()[0], K = a.shape()[1], N = b.shape()[1];
    std::vector<T> out(static_cast<std::size_t>(M * N), T(0));
    {
        const T* pa = a.data().data();
        const T* pb = b.data().data();
        for (std::int64_t i = 0; i < M; ++i) {
            T* orow = out.data() + i * N;
            for (std::int64_t k = 0; k < K; ++k) {
                const T av = pa[i * K + k];
                const T* brow = pb + k * N;
                for (std::int64_t j = 0; j < N; ++j) orow[j] += av * brow[j];
            }
        }
    }
    auto na = a.node();
    auto nb = b.node();
    return detail::make_result<T>("matmul", {M, N}, std::move(out), {a, b},
        [na, nb, M, K, N](const std::vector<T>& g, GradMap<T>& grads) {
            const T* va = na->data.data();
            const T* vb = nb->data.data();
            // dA = G B^T
            auto& ga = detail::grad_slot(grads, na.get());
            for (std::int64_t i = 0; i < M; ++i) {
                T* arow = ga.data() + i * K;
                const T* grow = g.data() + i * N;
                for (std::int64_t k = 0; k < K; ++k) {
                    const T* brow = vb + k * N;
                    T acc = T(0);
                    for (std::int64_t j = 0; j < N; ++j) acc += grow[j] * brow[j];
                    arow[k] += acc;
                }
            }
            // dB = A^T G
            auto& gb = detail::grad_slot(grads, nb.get());
            for (std::int64_t i = 0; i < M; ++i) {
                const T* grow = g.data() + i * N;
                for (std::int64_t k = 0; k < K; ++k) {
                    const T av = va[i * K + k];
                    T* brow = gb.data() + k * N;
                    for (std::int64_t j = 0; j < N; ++j) brow[j] += av * grow[j];
                }
            }
        });
}

// Adds a length-N bias vector to every row of an (M, N) tensor.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b) {
    if (x.shape().size() != 2 || b.shape().size() != 1 || b.shape()[0] != x.shape()[1])
        throw ShapeError("add_bias: " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
    const std::int64_t M = x.shape()[0], N = x.shape()[1];
    std::vector<T> out(x.data().size());
    for (std::int64_t i = 0; i < M; ++i)
        for (std::int64_t j = 0; j < N; ++j)
            out[i * N + j] = x.data()[i * N + j] + b.data()[j];
    auto nx = x.node();
    auto nb = b.node();
    return detail::make_result<T>("add_bias", x.shape(), std::move(out), {x, b},
        [nx, nb, M, N](const std::vector<T>& g, GradMap<T>& grads) {
            auto& gx = detail::grad_slot(grads, nx.get());
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            auto& gb = detail::grad_slot(grads, nb.get());
            for (std::int64_t i = 0; i < M; ++i)
                for (std::int64_t j = 0; j < N; ++j) gb[j] += g[i * N + j];
        });
}

// ------------------------------------------------------------------ nn

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, std::int64_t axis) {
    const std::size_t ax = detail::resolve_axis("softmax", axis, a.shape().size());
    const auto sp = detail::axis_split(a.shape(), ax);
    std::vector<T> out(a.data().size());
    const T* x = a.data().data();
    for (std::int64_t o = 0; o < sp.outer; ++o) {
        for (std::int64_t in = 0; in < sp.inner; ++in) {
            const std::int64_t base = o * sp.m * sp.inner + in;
            T mx = x[base];
            for (std::int64_t j = 1; j < sp.m; ++j)
                mx = std::max(mx, x[base + j * sp.inner]);
            T denom = T(0);
            for (std::int64_t j = 0; j < sp.m; ++j) {
                const T e = static_cast<T>(std::exp(static_cast<double>(x[base + j * sp.inner] - mx)));
                out[base + j * sp.inner] = e;
                denom += e;
            }
            const T inv = T(1) / denom;
            for (std::int64_t j = 0; j < sp.m; ++j) out[base + j * sp.inner] *= inv;
        }
    }
    auto pa = a.node();
    std::vector<T> saved = out;  // softmax values, needed by the backward rule
    return detail::make_result<T>("softmax", a.shape(), std::move(out), {a},
        [pa, sp, saved](const std::vector<T>& g, GradMap<T>& grads) {
            auto& ga = detail::grad_slot(grads, pa.get());
            for (std::int64_t o = 0; o < sp.outer; ++o) {
                for (std::int64_t in = 0; in < sp.inner; ++in) {
                    const std::int64_t base = o * sp.m * sp.inner + in;
                    T dot = T(0);
                    for (std::int64_t j = 0; j < sp.m; ++j) {
                        const std::int64_t k = base + j * sp.inner;
                        dot += g[k] * saved[k];
                    }
                    for (std::int64_t j = 0; j < sp.m; ++j) {
                        const std::int64_t k = base + j * sp.inner;
                        ga[k] += saved[k] * (g[k] - dot);
                    }
                }
            }
        });
}

// Normalizes along `axis` (population variance, eps inside the root), then
// applies per-position gain and shift of length shape[axis].
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& shift,
                     std::int64_t axis, double eps = 1e-5) {
    const std::size_t ax = detail::resolve_axis("layer_norm", axis, x.shape().size());
    const auto sp = detail::axis_split(x.shape(), ax);
    if (gain.shape().size() != 1 || gain.shape()[0] != sp.m || !same_shape(gain.shape(), shift.shape()))
        throw ShapeError("layer_norm: gain/shift " + shape_str(gain.shape()) + "," +
                         shape_str(shift.shape()) + " for axis extent " + std::to_string(sp.m));
    const T* xv = x.data().data();
    const T* gv = gain.data().data();
    const T* sv = shift.data().data();
    std::vector<T> out(x.data().size());
    std::vector<T> xhat(x.data().size());
    std::vector<T> invs(static_cast<std::size_t>(sp.outer * sp.inner));
    const double invm = 1.0 / static_cast<double>(sp.m);
    for (std::int64_t o = 0; o < sp.outer; ++o) {
        for (std::int64_t in = 0; in < sp.inner; ++in) {
            const std::int64_t base = o * sp.m * sp.inner + in;
            double mu = 0.0;
            for (std::int64_t j = 0; j < sp.m; ++j) mu += static_cast<double>(xv[base + j * sp.inner]);
            mu *= invm;
            double var = 0.0;
            for (std::int64_t j = 0; j < sp.m; ++j) {
                const double d = static_cast<double>(xv[base + j * sp.inner]) - mu;
                var += d * d;
            }
            var *= invm;
            const double inv = 1.0 / std::sqrt(var + eps);
            invs[static_cast<std::size_t>(o * sp.inner + in)] = static_cast<T>(inv);
            for (std::int64_t j = 0; j < sp.m; ++j) {
                const std::int64_t k = base + j * sp.inner;
                const T xh = static_cast<T>((static_cast<double>(xv[k]) - mu) * inv);
                xhat[k] = xh;
                out[k] = gv[j] * xh + sv[j];
            }
        }
    }
    auto nx = x.node();
    auto ng = gain.node();
    auto ns = shift.node();
    return detail::make_result<T>("layer_norm", x.shape(), std::move(out), {x, gain, shift},
        [nx, ng, ns, sp, xhat, invs](const std::vector<T>& g, GradMap<T>& grads) {
            auto& gx = detail::grad_slot(grads, nx.get());
            auto& gg = detail::grad_slot(grads, ng.get());
            auto& gs = detail::grad_slot(grads, ns.get());
            const T* gainv = ng->data.data();
            const double invm = 1.0 / static_cast<double>(sp.m);
            for (std::int64_t o = 0; o < sp.outer; ++o) {
                for (std::int64_t in = 0; in < sp.inner; ++in) {
                    const std::int64_t base = o * sp.m * sp.inner + in;
                    const double inv = static_cast<double>(invs[static_cast<std::size_t>(o * sp.inner + in)]);
                    double mean_gy = 0.0, mean_gyxh = 0.0;
                    for (std::int64_t j = 0; j < sp.m; ++j) {
                        const std::int64_t k = base + j * sp.inner;
                        const double gy = static_cast<double>(g[k]) * static_cast<double>(gainv[j]);
                        mean_gy += gy;
                        mean_gyxh += gy * static_cast<double>(xhat[k]);
                    }
                    mean_gy *= invm;
                    mean_gyxh *= invm;
                    for (std::int64_t j = 0; j < sp.m; ++j) {
                        const std::int64_t k = base + j * sp.inner;
                        const double gy = static_cast<double>(g[k]) * static_cast<double>(gainv[j]);
                        gx[k] += static_cast<T>(inv * (gy - mean_gy -
                                                       static_cast<double>(xhat[k]) * mean_gyxh));
                        gg[j] += g[k] * xhat[k];
                        gs[j] += g[k];
                    }
                }
            }
        });
}

// ------------------------------------------------- non-graph utilities

template <typename T>
Tensor<T> clamp_min(const Tensor<T>& a, T lo) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const auto& x = a.data();
    for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = std::max(x[i], lo);
    return out;
}

template <typename T>
bool all_finite(const Tensor<T>& a) {
    for (T v : a.data())
        if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
}

}  // namespace dosecast

#include "conv.hpp"
