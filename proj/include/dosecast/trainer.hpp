#pragma once

// Optimization loop for the four training regimes: segmentation alone,
// the first dose stage alone, the pyramid stage over a frozen first
// stage, and joint end-to-end refinement. Deterministic given the seed:
// subjects are visited round-robin and augmentation draws follow a fixed
// per-step order.

#include <cstdint>
#include <string>
#include <vector>

#include "augment.hpp"
#include "checkpoint.hpp"
#include "dose_net.hpp"
#include "losses.hpp"
#include "optim.hpp"
#include "phantom.hpp"
#include "seg_net.hpp"

namespace dosecast {

enum class TrainMode { Seg, DoseStage1, DoseStage2, EndToEnd };

inline const char* train_mode_name(TrainMode m) {
    switch (m) {
        case TrainMode::Seg: return "seg";
        case TrainMode::DoseStage1: return "dose_stage1";
        case TrainMode::DoseStage2: return "dose_stage2";
        case TrainMode::EndToEnd: return "end_to_end";
    }
    return "?";
}

struct TrainConfig {
    TrainMode mode = TrainMode::Seg;
    double lr = 1e-4;
    double weight_decay = 1e-5;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::int64_t steps = 200;
    std::int64_t batch_size = 2;
    std::uint64_t seed = 0;
    LossWeights loss;
    bool augment_enabled = false;
    AugmentationConfig aug;
    std::string fingerprint;  // stored with the checkpoint

    void validate() const {
        if (lr <= 0) throw ConfigError("train: lr must be positive");
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (steps < 0) throw ConfigError("train: steps must be >= 0");
        loss.validate();
        aug.validate();
    }
};

struct TraceRow {
    std::int64_t step = 0;
    double total = 0.0, seg_term = 0.0, dose_term = 0.0;
};

struct TrainResult {
    std::vector<TraceRow> trace;  // steps rows pre-update, plus a final evaluation row
    Checkpoint checkpoint;
};

namespace detail {

struct LossTerms {
    Tensor<double> total;
    double seg_term = 0.0, dose_term = 0.0;
};

inline LossTerms subject_loss(TrainMode mode, SegNet<double>* seg, DoseNet<double>* dose,
                              const Subject& s, const LossWeights& w) {
    LossTerms out;
    const auto ct = from_volume<double>(s.ct);
    switch (mode) {
        case TrainMode::Seg: {
            auto probs = seg->forward(ct).probs;
            out.total = dice_ce_loss(probs, onehot_classes<double>(s));
            out.seg_term = out.total.item();
            break;
        }
        case TrainMode::DoseStage1: {
            auto x_cop = make_composite(ct, organ_channels<double>(s), from_mask<double>(s.ptv));
            DosePyramid<double> pred;
            pred.levels = {dose->stage1_forward(x_cop)};
            LossWeights flat;  // plain single-level L1
            flat.lambda1 = 1.0;
            flat.lambda2 = 0.0;
            out.total = dose_loss(pred, build_gt_pyramid(from_volume<double>(s.dose), 1), flat);
            out.dose_term = out.total.item();
            break;
        }
        case TrainMode::DoseStage2: {
            auto x_cop = make_composite(ct, organ_channels<double>(s), from_mask<double>(s.ptv));
            auto pyr = dose->cascade(x_cop);
            out.total = dose_loss(pyr, build_gt_pyramid(from_volume<double>(s.dose), kPyramidLevels), w);
            out.dose_term = out.total.item();
            break;
        }
        case TrainMode::EndToEnd: {
            auto casc = cascade_forward(*seg, *dose, ct, from_mask<double>(s.ptv));
            auto seg_loss = dice_ce_loss(casc.seg.probs, onehot_classes<double>(s));
            auto dose_l = dose_loss(casc.pyramid,
                                    build_gt_pyramid(from_volume<double>(s.dose), kPyramidLevels), w);
            out.seg_term = seg_loss.item();
            out.dose_term = dose_l.item();
            out.total = add(seg_loss, dose_l);
            break;
        }
    }
    return out;
}

}  // namespace detail

// Mode-appropriate trainable parameters, with their checkpoint names.
inline NamedParams<double> trainable_params(TrainMode mode, SegNet<double>* seg,
                                            DoseNet<double>* dose) {
    NamedParams<double> ps;
    switch (mode) {
        case TrainMode::Seg: seg->collect("seg.", ps); break;
        case TrainMode::DoseStage1: dose->collect_stage1("dose.stage1.", ps); break;
        case TrainMode::DoseStage2: dose->collect_stage2("dose.stage2.", ps); break;
        case TrainMode::EndToEnd:
            seg->collect("seg.", ps);
            dose->collect_stage2("dose.stage2.", ps);
            break;
    }
    return ps;
}

// Everything the mode's checkpoint must carry, trainable or frozen.
inline NamedParams<double> checkpoint_params(TrainMode mode, SegNet<double>* seg,
                                             DoseNet<double>* dose) {
    NamedParams<double> ps;
    switch (mode) {
        case TrainMode::Seg: seg->collect("seg.", ps); break;
        case TrainMode::DoseStage1: dose->collect_stage1("dose.stage1.", ps); break;
        case TrainMode::DoseStage2:
            dose->collect_stage1("dose.stage1.", ps);
            dose->collect_stage2("dose.stage2.", ps);
            break;
        case TrainMode::EndToEnd:
            seg->collect("seg.", ps);
            dose->collect_stage1("dose.stage1.", ps);
            dose->collect_stage2("dose.stage2.", ps);
            break;
    }
    return ps;
}

inline TrainResult train(SegNet<double>* seg, DoseNet<double>* dose,
                         const std::vector<Subject>& data, const TrainConfig& cfg) {
    cfg.validate();
    const bool needs_seg = cfg.mode == TrainMode::Seg || cfg.mode == TrainMode::EndToEnd;
    const bool needs_dose = cfg.mode != TrainMode::Seg;
    if (needs_seg && seg == nullptr)
        throw ConfigError("train: mode needs a segmentation model");
    if (needs_dose && dose == nullptr) throw ConfigError("train: mode needs a dose model");
    if (data.empty()) throw ConfigError("train: empty dataset");

    // The pyramid stages never see gradients into the first stage.
    if (dose != nullptr)
        dose->set_stage1_trainable(cfg.mode == TrainMode::DoseStage1);

    auto params = trainable_params(cfg.mode, seg, dose);
    AdamWConfig ocfg;
    ocfg.lr = cfg.lr;
    ocfg.weight_decay = cfg.weight_decay;
    ocfg.beta1 = cfg.beta1;
    ocfg.beta2 = cfg.beta2;
    ocfg.eps = cfg.eps;
    AdamW<double> opt(ocfg);

    Rng aug_rng = Rng(cfg.seed).fork(1);
    const auto n = static_cast<std::int64_t>(data.size());

    auto batch_subject = [&](std::int64_t step, std::int64_t item) -> const Subject& {
        return data[static_cast<std::size_t>((step * cfg.batch_size + item) % n)];
    };

    TrainResult result;
    for (std::int64_t step = 0; step < cfg.steps; ++step) {
        for (auto& [name, p] : params) p.zero_grad();
        Tensor<double> total;
        double seg_term = 0.0, dose_term = 0.0;
        for (std::int64_t item = 0; item < cfg.batch_size; ++item) {
            const Subject& raw = batch_subject(step, item);
            const Subject sub = cfg.augment_enabled ? augment(raw, cfg.aug, aug_rng) : raw;
            auto terms = detail::subject_loss(cfg.mode, seg, dose, sub, cfg.loss);
            seg_term += terms.seg_term;
            dose_term += terms.dose_term;
            total = item == 0 ? terms.total : add(total, terms.total);
        }
        const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);
        total = mul_scalar(total, inv_b);
        const double loss_val = total.item();
        if (!std::isfinite(loss_val))
            throw TrainError("train: non-finite loss at step " + std::to_string(step));
        result.trace.push_back({step, loss_val, seg_term * inv_b, dose_term * inv_b});
        backward(total);
        opt.step(params);
    }

    // Final row: post-training evaluation on the first batch, without
    // augmentation or graph recording.
    {
        NoGradGuard ng;
        double total = 0.0, seg_term = 0.0, dose_term = 0.0;
        for (std::int64_t item = 0; item < cfg.batch_size; ++item) {
            auto terms = detail::subject_loss(cfg.mode, seg, dose, batch_subject(0, item), cfg.loss);
            total += terms.total.item();
            seg_term += terms.seg_term;
            dose_term += terms.dose_term;
        }
        const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);
        result.trace.push_back({cfg.steps, total * inv_b, seg_term * inv_b, dose_term * inv_b});
    }

    auto full = checkpoint_params(cfg.mode, seg, dose);
    add_params(result.checkpoint, full, "");
    add_optim_state(result.checkpoint, opt.state(), "");
    result.checkpoint.step = opt.step_count();
    result.checkpoint.fingerprint = cfg.fingerprint;
    result.checkpoint.sort_entries();
    return result;
}

}  // namespace dosecast
