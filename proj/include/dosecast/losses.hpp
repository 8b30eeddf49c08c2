#pragma once

// Training losses: Dice plus cross-entropy for the segmentation subnet,
// and deep-supervised weighted L1 over the dose pyramid, with the
// ground-truth pyramid builder.

#include "dose_net.hpp"

namespace dosecast {

struct LossWeights {
    double lambda1 = 10.0;  // final-output weight
    double lambda2 = 8.0;   // deep-supervision weight

    void validate() const {
        if (lambda1 < 0.0 || lambda2 < 0.0)
            throw ConfigError("loss weights must be nonnegative");
    }
};

template <typename T>
using PyramidTarget = std::vector<Tensor<T>>;

// 1 - (2/J) sum_j [sum_k Y*P / (sum_k Y^2 + sum_k P^2 + eps)]
//   - (1/K) sum_k sum_j Y*log(P + eps),
// J classes, K voxels. A class absent from both sides contributes 0/eps
// to its Dice fraction.
template <typename T>
Tensor<T> dice_ce_loss(const Tensor<T>& probs, const Tensor<T>& onehot, double eps = 1e-5) {
    detail::check_same_shape("dice_ce_loss", probs, onehot);
    if (probs.shape().size() != 4)
        throw ShapeError("dice_ce_loss: expected (C,D,H,W), got " + shape_str(probs.shape()));
    for (T v : probs.data())
        if (static_cast<double>(v) < -1e-6 || static_cast<double>(v) > 1.0 + 1e-6)
            throw ContractError("dice_ce_loss: probability " + std::to_string(static_cast<double>(v)) +
                                " outside [0,1]");
    const auto J = probs.shape()[0];
    const auto K = probs.shape()[1] * probs.shape()[2] * probs.shape()[3];
    auto eps_t = Tensor<T>::scalar(static_cast<T>(eps));

    Tensor<T> dice_acc = Tensor<T>::scalar(T(0));
    for (std::int64_t j = 0; j < J; ++j) {
        auto pc = slice(probs, 0, j, 1);
        auto gc = slice(onehot, 0, j, 1);
        auto inter = sum(mul(gc, pc));
        auto denom = add(add(sum(mul(gc, gc)), sum(mul(pc, pc))), eps_t);
        dice_acc = add(dice_acc, div(inter, denom));
    }
    auto dice_term = mul_scalar(dice_acc, 2.0 / static_cast<double>(J));
    auto ce_term = mul_scalar(sum(mul(onehot, log_eps(probs, eps))), 1.0 / static_cast<double>(K));
    return sub(sub(Tensor<T>::scalar(T(1)), dice_term), ce_term);
}

// Level s (1-based) is the ground truth resized to extent/2^(S-s); the
// final level is the untouched ground-truth tensor.
template <typename T>
PyramidTarget<T> build_gt_pyramid(const Tensor<T>& dose, int S) {
    if (dose.shape().size() != 4 || dose.shape()[0] != 1)
        throw ShapeError("build_gt_pyramid: dose " + shape_str(dose.shape()) + " is not (1,D,H,W)");
    if (S < 1) throw ConfigError("build_gt_pyramid: S must be >= 1");
    const std::int64_t div = std::int64_t{1} << (S - 1);
    const auto D = dose.shape()[1], H = dose.shape()[2], W = dose.shape()[3];
    if (D % div || H % div || W % div)
        throw ConfigError("build_gt_pyramid: extents " + shape_str(dose.shape()) +
                          " not divisible by " + std::to_string(div));
    PyramidTarget<T> out;
    for (int s = 1; s < S; ++s) {
        const std::int64_t f = std::int64_t{1} << (S - s);
        out.push_back(trilinear_resize(dose, D / f, H / f, W / f));
    }
    out.push_back(dose);
    return out;
}

// lambda1 * mean|.|_1 at the finest level plus lambda2 * the mean of the
// per-level L1 means over the coarser levels.
template <typename T>
Tensor<T> dose_loss(const DosePyramid<T>& pred, const PyramidTarget<T>& target,
                    const LossWeights& w) {
    w.validate();
    const auto S = pred.levels.size();
    if (S == 0 || S != target.size())
        throw ShapeError("dose_loss: pyramid has " + std::to_string(S) + " levels, target " +
                         std::to_string(target.size()));
    if (S == 1 && w.lambda2 > 0.0)
        throw ConfigError("dose_loss: single-level pyramid with nonzero deep-supervision weight");
    std::vector<Tensor<T>> level_means;
    level_means.reserve(S);
    for (std::size_t s = 0; s < S; ++s)
        level_means.push_back(mean(abs_of(sub(pred.levels[s], target[s]))));
    auto loss = mul_scalar(level_means.back(), w.lambda1);
    if (S > 1 && w.lambda2 > 0.0) {
        auto ds = level_means[0];
        for (std::size_t s = 1; s + 1 < S; ++s) ds = add(ds, level_means[s]);
        loss = add(loss, mul_scalar(ds, w.lambda2 / static_cast<double>(S - 1)));
    }
    return loss;
}

}  // namespace dosecast
