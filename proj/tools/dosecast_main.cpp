// Command-line front end for the dose prediction pipeline: synthetic
// subject generation, the four training regimes, cascade prediction,
// metric evaluation with CSV reports, and the gradient-check suites.
// Exit codes: 0 success, 1 usage/config error, 2 data/format error,
// 3 numerical failure.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "CLI11.hpp"
#include <nlohmann/json.hpp>

#include "dosecast/gradcheck_suite.hpp"
#include "dosecast/metrics.hpp"
#include "dosecast/run_config.hpp"
#include "dosecast/trainer.hpp"
#include "dosecast/vol1.hpp"

namespace fs = std::filesystem;
using namespace dosecast;

namespace {

// Shortest exact decimal form; reparsing gives the same double back.
std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string subject_file(const fs::path& dir, std::int64_t index, const std::string& kind) {
    return (dir / ("subject_" + std::to_string(index) + "_" + kind + ".vol1")).string();
}

// Indices i for which subject_<i>_<kind>.vol1 exists, ascending.
std::vector<std::int64_t> scan_subjects(const fs::path& dir, const std::string& kind) {
    if (!fs::is_directory(dir)) throw FormatError("not a directory: " + dir.string());
    const std::string prefix = "subject_";
    const std::string suffix = "_" + kind + ".vol1";
    std::vector<std::int64_t> out;
    for (const auto& ent : fs::directory_iterator(dir)) {
        const std::string name = ent.path().filename().string();
        if (name.size() <= prefix.size() + suffix.size()) continue;
        if (name.compare(0, prefix.size(), prefix) != 0) continue;
        if (name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) continue;
        const std::string mid = name.substr(prefix.size(), name.size() - prefix.size() - suffix.size());
        if (mid.empty() || mid.find_first_not_of("0123456789") != std::string::npos) continue;
        out.push_back(std::stoll(mid));
    }
    std::sort(out.begin(), out.end());
    return out;
}

void require_kind(const Vol1& v, const std::string& kind, const std::string& what) {
    if (v.kind != kind)
        throw FormatError(what + ": expected kind '" + kind + "', got '" + v.kind + "'");
}

void require_single_channel(const Vol1& v, const std::string& what) {
    if (v.channels != 1)
        throw FormatError(what + ": expected 1 channel, got " + std::to_string(v.channels));
}

bool same_extents_v(const Vol1& a, const Vol1& b) {
    return a.d == b.d && a.h == b.h && a.w == b.w;
}

bool same_spacing(const SpacingGrid& a, const SpacingGrid& b) {
    return a.sz == b.sz && a.sy == b.sy && a.sx == b.sx;
}

Subject read_subject(const fs::path& dir, std::int64_t index) {
    const Vol1 ct = read_vol1(subject_file(dir, index, "ct"));
    const Vol1 masks = read_vol1(subject_file(dir, index, "masks"));
    const Vol1 ptv = read_vol1(subject_file(dir, index, "ptv"));
    const Vol1 body = read_vol1(subject_file(dir, index, "body"));
    const Vol1 dose = read_vol1(subject_file(dir, index, "dose"));
    const std::string tag = "subject " + std::to_string(index);
    require_kind(ct, "ct", tag + " ct");
    require_single_channel(ct, tag + " ct");
    require_kind(masks, "mask", tag + " masks");
    require_kind(ptv, "mask", tag + " ptv");
    require_single_channel(ptv, tag + " ptv");
    require_kind(body, "mask", tag + " body");
    require_single_channel(body, tag + " body");
    require_kind(dose, "dose", tag + " dose");
    require_single_channel(dose, tag + " dose");
    for (const Vol1* v : {&masks, &ptv, &body, &dose}) {
        if (!same_extents_v(ct, *v)) throw FormatError(tag + ": volume extents disagree");
        if (!same_spacing(ct.spacing, v->spacing)) throw FormatError(tag + ": spacing disagrees");
    }
    Subject s;
    s.ct = volume_from_vol1(ct);
    s.dose = volume_from_vol1(dose);
    s.oars = organ_masks_from_vol1(masks);
    s.ptv = mask_from_vol1(ptv);
    s.body = mask_from_vol1(body);
    s.spacing = ct.spacing;
    s.prescription = *std::max_element(s.dose.v.begin(), s.dose.v.end());
    return s;
}

// Volumes must share one cubic extent; returns it.
std::int64_t dataset_resolution(const std::vector<Subject>& subjects) {
    const auto& first = subjects.front().ct;
    if (first.d != first.h || first.d != first.w)
        throw FormatError("volumes must be cubic, got " + std::to_string(first.d) + "x" +
                          std::to_string(first.h) + "x" + std::to_string(first.w));
    for (const auto& s : subjects)
        if (s.ct.d != first.d || s.ct.h != first.h || s.ct.w != first.w)
            throw FormatError("subjects disagree on volume extents");
    return first.d;
}

Checkpoint merge_checkpoints(const std::vector<std::string>& paths) {
    Checkpoint merged;
    for (const auto& p : paths) {
        Checkpoint c = load_checkpoint(p);
        for (auto& e : c.entries) merged.entries.push_back(std::move(e));
    }
    return merged;
}

Tensor<double> organs_tensor(const std::array<Mask3, kNumOars>& oars) {
    std::vector<Tensor<double>> parts;
    for (const auto& m : oars) parts.push_back(from_mask<double>(m));
    return concat<double>(parts, 0);
}

std::string canonical_mode(const std::string& m) {
    if (m == "dose1") return "dose_stage1";
    if (m == "dose2") return "dose_stage2";
    if (m == "e2e") return "end_to_end";
    return m;
}

RunConfig load_run_config(const std::string& path) {
    if (path.empty()) return RunConfig{};
    return RunConfig::parse_file(path);
}

void ensure_parent_dir(const fs::path& file) {
    const fs::path parent = file.parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

std::ofstream open_out(const fs::path& path) {
    ensure_parent_dir(path);
    std::ofstream f(path);
    if (!f) throw FormatError("cannot write " + path.string());
    return f;
}

// ---------------------------------------------------------------- phantom

struct PhantomArgs {
    std::string config, out_dir;
    std::int64_t count = 1;
};

void run_phantom(const PhantomArgs& a) {
    if (a.count < 1) throw ConfigError("phantom: --count must be >= 1");
    const RunConfig rc = load_run_config(a.config);
    const PhantomConfig cfg = phantom_config_from(rc);
    fs::create_directories(a.out_dir);

    nlohmann::json manifest;
    manifest["count"] = a.count;
    manifest["fingerprint"] = rc.fingerprint();
    manifest["resolution"] = cfg.resolution;
    manifest["seed"] = cfg.seed;
    manifest["spacing_mm"] = {cfg.spacing.sz, cfg.spacing.sy, cfg.spacing.sx};
    manifest["subjects"] = nlohmann::json::array();

    for (std::int64_t i = 0; i < a.count; ++i) {
        const Subject s = generate(cfg, i);
        const fs::path dir(a.out_dir);
        write_vol1(vol1_from_volume(s.ct, s.spacing, "ct"), subject_file(dir, i, "ct"));
        write_vol1(vol1_from_organ_masks(s.oars, s.spacing), subject_file(dir, i, "masks"));
        write_vol1(vol1_from_mask(s.ptv, s.spacing), subject_file(dir, i, "ptv"));
        write_vol1(vol1_from_mask(s.body, s.spacing), subject_file(dir, i, "body"));
        write_vol1(vol1_from_volume(s.dose, s.spacing, "dose"), subject_file(dir, i, "dose"));
        manifest["subjects"].push_back(
            {{"index", i}, {"seed", cfg.seed}, {"prescription", s.prescription}});
        std::printf("phantom: subject_%lld prescription %s Gy\n",
                    static_cast<long long>(i), fmt(s.prescription).c_str());
    }

    auto mf = open_out(fs::path(a.out_dir) / "manifest.json");
    mf << manifest.dump(2) << "\n";
    std::printf("phantom: wrote %lld subjects to %s\n", static_cast<long long>(a.count),
                a.out_dir.c_str());
}

// ------------------------------------------------------------------ train

struct TrainArgs {
    std::string mode, config, data_dir, out, trace;
    std::vector<std::string> init;
};

void run_train(const TrainArgs& a) {
    RunConfig rc = load_run_config(a.config);
    rc.set("train.mode", canonical_mode(a.mode));
    const TrainConfig tc = train_config_from(rc);

    const bool needs_seg = tc.mode == TrainMode::Seg || tc.mode == TrainMode::EndToEnd;
    const bool needs_dose = tc.mode != TrainMode::Seg;
    const bool needs_init = tc.mode == TrainMode::DoseStage2 || tc.mode == TrainMode::EndToEnd;
    if (needs_init && a.init.empty())
        throw ConfigError(std::string("train: mode ") + train_mode_name(tc.mode) +
                          " requires --init checkpoints from the earlier training stages");
    if (!needs_init && !a.init.empty())
        throw ConfigError("train: --init applies only to dose_stage2 and end_to_end modes");

    const auto indices = scan_subjects(a.data_dir, "ct");
    if (indices.empty())
        throw FormatError("train: no subject_<i>_ct.vol1 files in " + a.data_dir);
    std::vector<Subject> subjects;
    for (auto i : indices) subjects.push_back(read_subject(a.data_dir, i));
    const std::int64_t res = dataset_resolution(subjects);

    Rng init_rng(tc.seed);
    SegNet<double> seg;
    DoseNet<double> dose;
    if (needs_seg) seg = SegNet<double>::init(seg_config_from(rc, res), init_rng);
    if (needs_dose) dose = DoseNet<double>::init(dose_config_from(rc, res), init_rng);

    if (needs_init) {
        const Checkpoint merged = merge_checkpoints(a.init);
        NamedParams<double> to_load;
        if (tc.mode == TrainMode::DoseStage2) {
            dose.collect_stage1("dose.stage1.", to_load);
        } else {
            seg.collect("seg.", to_load);
            dose.collect_stage1("dose.stage1.", to_load);
            dose.collect_stage2("dose.stage2.", to_load);
        }
        load_params(merged, to_load, "");
    }

    std::printf("train: mode=%s subjects=%zu resolution=%lld steps=%lld\n",
                train_mode_name(tc.mode), subjects.size(), static_cast<long long>(res),
                static_cast<long long>(tc.steps));
    const TrainResult result =
        train(needs_seg ? &seg : nullptr, needs_dose ? &dose : nullptr, subjects, tc);

    ensure_parent_dir(a.out);
    save_checkpoint(result.checkpoint, a.out);
    const std::string trace_path = a.trace.empty() ? a.out + ".trace.csv" : a.trace;
    auto tf = open_out(trace_path);
    tf << "step,total,seg,dose\n";
    for (const auto& row : result.trace)
        tf << row.step << "," << fmt(row.total) << "," << fmt(row.seg_term) << ","
           << fmt(row.dose_term) << "\n";

    std::printf("train: loss %s -> %s over %lld steps\n", fmt(result.trace.front().total).c_str(),
                fmt(result.trace.back().total).c_str(), static_cast<long long>(tc.steps));
    std::printf("train: wrote %s and %s\n", a.out.c_str(), trace_path.c_str());
}

// ---------------------------------------------------------------- predict

struct PredictArgs {
    std::string config, ct, ptv, oar, out, seg_out;
    std::vector<std::string> checkpoints;
};

std::string default_seg_out(const std::string& out) {
    const std::string tail = "_dose.vol1";
    if (out.size() > tail.size() && out.compare(out.size() - tail.size(), tail.size(), tail) == 0)
        return out.substr(0, out.size() - tail.size()) + "_masks.vol1";
    return out + ".masks.vol1";
}

void run_predict(const PredictArgs& a) {
    const RunConfig rc = load_run_config(a.config);
    const Vol1 ct_v = read_vol1(a.ct);
    require_kind(ct_v, "ct", "predict --ct");
    require_single_channel(ct_v, "predict --ct");
    const Vol1 ptv_v = read_vol1(a.ptv);
    require_kind(ptv_v, "mask", "predict --ptv");
    require_single_channel(ptv_v, "predict --ptv");
    if (!same_extents_v(ct_v, ptv_v) || !same_spacing(ct_v.spacing, ptv_v.spacing))
        throw FormatError("predict: ct and ptv volumes disagree");
    if (ct_v.d != ct_v.h || ct_v.d != ct_v.w)
        throw FormatError("predict: volumes must be cubic");
    const std::int64_t res = ct_v.d;
    const bool cascade = a.oar.empty();

    const Checkpoint merged = merge_checkpoints(a.checkpoints);
    Rng init_rng(0);
    DoseNet<double> dose = DoseNet<double>::init(dose_config_from(rc, res), init_rng);
    SegNet<double> seg;
    NamedParams<double> to_load;
    if (cascade) {
        seg = SegNet<double>::init(seg_config_from(rc, res), init_rng);
        seg.collect("seg.", to_load);
    }
    dose.collect_stage1("dose.stage1.", to_load);
    dose.collect_stage2("dose.stage2.", to_load);
    load_params(merged, to_load, "");

    NoGradGuard ng;
    const auto ct_t = from_volume<double>(volume_from_vol1(ct_v));
    const auto ptv_t = from_mask<double>(mask_from_vol1(ptv_v));

    Tensor<double> dose_map;
    if (cascade) {
        const auto casc = cascade_forward(seg, dose, ct_t, ptv_t);
        dose_map = predict_dose(casc.pyramid);
        const auto class_masks = predict_masks(casc.seg.probs);
        std::array<Mask3, kNumOars> organ_masks;
        for (int k = 0; k < kNumOars; ++k)
            organ_masks[static_cast<std::size_t>(k)] = class_masks[static_cast<std::size_t>(k) + 1];
        const std::string seg_path = a.seg_out.empty() ? default_seg_out(a.out) : a.seg_out;
        ensure_parent_dir(seg_path);
        write_vol1(vol1_from_organ_masks(organ_masks, ct_v.spacing), seg_path);
        std::printf("predict: cascade mode, wrote organ masks to %s\n", seg_path.c_str());
    } else {
        const Vol1 oar_v = read_vol1(a.oar);
        require_kind(oar_v, "mask", "predict --oar");
        if (!same_extents_v(ct_v, oar_v) || !same_spacing(ct_v.spacing, oar_v.spacing))
            throw FormatError("predict: ct and oar volumes disagree");
        const auto x_cop =
            make_composite(ct_t, organs_tensor(organ_masks_from_vol1(oar_v)), ptv_t);
        dose_map = predict_dose(dose.cascade(x_cop));
        std::printf("predict: provided organ masks\n");
    }

    ensure_parent_dir(a.out);
    write_vol1(vol1_from_volume(to_volume(dose_map), ct_v.spacing, "dose"), a.out);
    std::printf("predict: wrote %s\n", a.out.c_str());
}

// ------------------------------------------------------------------- eval

struct EvalArgs {
    std::string config, pred_dir, gt_dir, baseline_dir, curves_dir, out;
};

struct EvalRow {
    std::string subject, roi, metric, gt, pred, value;
};

void sort_rows(std::vector<EvalRow>& rows) {
    std::sort(rows.begin(), rows.end(), [](const EvalRow& a, const EvalRow& b) {
        return std::tie(a.subject, a.roi, a.metric) < std::tie(b.subject, b.roi, b.metric);
    });
}

struct EvalSubject {
    std::string id;
    Volume3 gt_dose, pred_dose;
    Mask3 body;
    SpacingGrid spacing;
    std::vector<std::pair<RoiSpec, Mask3>> rois;   // 7 organs then ptv
    bool has_pred_masks = false;
    std::array<Mask3, kNumOars> pred_masks;
};

// Per-subject pooled mean absolute criterion difference.
double subject_dvh_score(const EvalSubject& s, const Volume3& pred,
                         std::vector<std::string>* warnings) {
    SubjectDoses sd{s.id, s.gt_dose, pred, s.spacing, s.rois};
    return dvh_score({sd}, warnings);
}

void run_eval(const EvalArgs& a) {
    const RunConfig rc = load_run_config(a.config);
    const int dvh_bins = static_cast<int>(rc.get_int("eval.dvh_bins"));
    const double dvh_max = rc.get_real("eval.dvh_max_dose");
    const auto iso_thresholds = rc.get_reals("eval.isodose_thresholds");

    const auto indices = scan_subjects(a.gt_dir, "dose");
    if (indices.empty())
        throw FormatError("eval: no subject_<i>_dose.vol1 files in " + a.gt_dir);

    std::string missing;
    for (auto i : indices) {
        if (!fs::exists(subject_file(a.pred_dir, i, "dose")))
            missing += " " + subject_file(a.pred_dir, i, "dose");
        if (!a.baseline_dir.empty() && !fs::exists(subject_file(a.baseline_dir, i, "dose")))
            missing += " " + subject_file(a.baseline_dir, i, "dose");
    }
    if (!missing.empty()) throw FormatError("eval: missing prediction files:" + missing);

    std::vector<EvalSubject> subjects;
    std::vector<Volume3> baseline_doses;
    for (auto i : indices) {
        EvalSubject s;
        s.id = "subject_" + std::to_string(i);
        const Vol1 gt = read_vol1(subject_file(a.gt_dir, i, "dose"));
        require_kind(gt, "dose", s.id + " gt dose");
        require_single_channel(gt, s.id + " gt dose");
        const Vol1 pred = read_vol1(subject_file(a.pred_dir, i, "dose"));
        require_single_channel(pred, s.id + " predicted dose");
        if (!same_extents_v(gt, pred))
            throw FormatError("eval: " + s.id + " extents disagree between gt and prediction");
        const Vol1 masks = read_vol1(subject_file(a.gt_dir, i, "masks"));
        const Vol1 ptv = read_vol1(subject_file(a.gt_dir, i, "ptv"));
        const Vol1 body = read_vol1(subject_file(a.gt_dir, i, "body"));
        s.gt_dose = volume_from_vol1(gt);
        s.pred_dose = volume_from_vol1(pred);
        s.body = mask_from_vol1(body);
        s.spacing = gt.spacing;
        const auto oars = organ_masks_from_vol1(masks);
        for (int k = 0; k < kNumOars; ++k)
            s.rois.emplace_back(RoiSpec{kClassNames[static_cast<std::size_t>(k) + 1], RoiKind::Oar},
                                oars[static_cast<std::size_t>(k)]);
        s.rois.emplace_back(RoiSpec{"ptv", RoiKind::Ptv}, mask_from_vol1(ptv));
        const std::string pm = subject_file(a.pred_dir, i, "masks");
        if (fs::exists(pm)) {
            s.has_pred_masks = true;
            s.pred_masks = organ_masks_from_vol1(read_vol1(pm));
        }
        if (!a.baseline_dir.empty()) {
            const Vol1 base = read_vol1(subject_file(a.baseline_dir, i, "dose"));
            if (!same_extents_v(gt, base))
                throw FormatError("eval: " + s.id + " extents disagree between gt and baseline");
            baseline_doses.push_back(volume_from_vol1(base));
        }
        subjects.push_back(std::move(s));
    }

    std::vector<std::string> warnings;
    std::vector<EvalRow> dvh_rows, dose_rows, seg_rows, summary_rows, ttest_rows;
    std::vector<double> subject_mae, dice_values, hd95_values;

    for (const auto& s : subjects) {
        subject_mae.push_back(dose_score(s.gt_dose, s.pred_dose, s.body));
        dose_rows.push_back({s.id, "body", "mae", "", "", fmt(subject_mae.back())});
        for (const auto& [roi, mask] : s.rois) {
            std::map<Criterion, double> cg, cp;
            try {
                cg = dvh_criteria(s.gt_dose, mask, s.spacing, roi);
                cp = dvh_criteria(s.pred_dose, mask, s.spacing, roi);
            } catch (const UndefinedMetricError& e) {
                warnings.push_back("eval: skipping " + s.id + "/" + roi.name + ": " + e.what());
                continue;
            }
            for (Criterion c : roi.criteria())
                dvh_rows.push_back({s.id, roi.name, criterion_name(c), fmt(cg.at(c)),
                                    fmt(cp.at(c)), fmt(std::fabs(cg.at(c) - cp.at(c)))});
        }
        if (s.has_pred_masks) {
            for (int k = 0; k < kNumOars; ++k) {
                const std::string roi = kClassNames[static_cast<std::size_t>(k) + 1];
                const Mask3& gm = s.rois[static_cast<std::size_t>(k)].second;
                const Mask3& pm = s.pred_masks[static_cast<std::size_t>(k)];
                dice_values.push_back(dice(gm, pm));
                seg_rows.push_back({s.id, roi, "dice", "", "", fmt(dice_values.back())});
                try {
                    hd95_values.push_back(hd95(gm, pm, s.spacing));
                    seg_rows.push_back({s.id, roi, "hd95", "", "", fmt(hd95_values.back())});
                } catch (const UndefinedMetricError& e) {
                    warnings.push_back("eval: skipping " + s.id + "/" + roi + " hd95: " + e.what());
                }
            }
        }
    }

    double mae_sum = 0.0;
    for (double v : subject_mae) mae_sum += v;
    const double dose_score_mean = mae_sum / static_cast<double>(subject_mae.size());
    summary_rows.push_back({"", "", "dose_score", "", "", fmt(dose_score_mean)});

    std::vector<SubjectDoses> pooled;
    for (const auto& s : subjects) pooled.push_back({s.id, s.gt_dose, s.pred_dose, s.spacing, s.rois});
    summary_rows.push_back({"", "", "dvh_score", "", "", fmt(dvh_score(pooled, &warnings))});

    if (!dice_values.empty()) {
        double acc = 0.0;
        for (double v : dice_values) acc += v;
        summary_rows.push_back(
            {"", "", "dice_mean", "", "", fmt(acc / static_cast<double>(dice_values.size()))});
    }
    if (!hd95_values.empty()) {
        double acc = 0.0;
        for (double v : hd95_values) acc += v;
        summary_rows.push_back(
            {"", "", "hd95_mean", "", "", fmt(acc / static_cast<double>(hd95_values.size()))});
    }

    if (!a.baseline_dir.empty()) {
        std::vector<double> base_mae, pred_dvh, base_dvh;
        for (std::size_t i = 0; i < subjects.size(); ++i) {
            base_mae.push_back(dose_score(subjects[i].gt_dose, baseline_doses[i], subjects[i].body));
            pred_dvh.push_back(subject_dvh_score(subjects[i], subjects[i].pred_dose, &warnings));
            base_dvh.push_back(subject_dvh_score(subjects[i], baseline_doses[i], &warnings));
        }
        try {
            const TTestResult dose_t = paired_t_test(subject_mae, base_mae);
            ttest_rows.push_back({"", "", "dose_score_p", "", "", fmt(dose_t.p)});
            ttest_rows.push_back({"", "", "dose_score_t", "", "", fmt(dose_t.t)});
        } catch (const Error& e) {
            warnings.push_back(std::string("eval: dose score t-test skipped: ") + e.what());
        }
        try {
            const TTestResult dvh_t = paired_t_test(pred_dvh, base_dvh);
            ttest_rows.push_back({"", "", "dvh_score_p", "", "", fmt(dvh_t.p)});
            ttest_rows.push_back({"", "", "dvh_score_t", "", "", fmt(dvh_t.t)});
        } catch (const Error& e) {
            warnings.push_back(std::string("eval: dvh score t-test skipped: ") + e.what());
        }
    }

    if (!a.curves_dir.empty()) {
        fs::create_directories(a.curves_dir);
        for (const auto& s : subjects) {
            for (const auto& [roi, mask] : s.rois) {
                DvhCurve gt_c, pred_c;
                try {
                    gt_c = dvh_curve(s.gt_dose, mask, dvh_bins, dvh_max);
                    pred_c = dvh_curve(s.pred_dose, mask, dvh_bins, dvh_max);
                } catch (const UndefinedMetricError& e) {
                    warnings.push_back("eval: skipping " + s.id + "/" + roi.name + " curve: " +
                                       e.what());
                    continue;
                }
                auto cf = open_out(fs::path(a.curves_dir) / ("dvh_" + s.id + "_" + roi.name + ".csv"));
                cf << "threshold_gy,gt_fraction,pred_fraction\n";
                for (std::size_t b = 0; b < gt_c.thresholds.size(); ++b)
                    cf << fmt(gt_c.thresholds[b]) << "," << fmt(gt_c.fraction[b]) << ","
                       << fmt(pred_c.fraction[b]) << "\n";
            }
            auto isf = open_out(fs::path(a.curves_dir) / ("isodose_" + s.id + ".csv"));
            isf << "threshold_gy,dice\n";
            for (const auto& [t, d] : isodose_dice_curve(s.gt_dose, s.pred_dose, iso_thresholds))
                isf << fmt(t) << "," << fmt(d) << "\n";
        }
    }

    for (const auto& w : warnings) std::fprintf(stderr, "%s\n", w.c_str());

    sort_rows(dvh_rows);
    sort_rows(dose_rows);
    sort_rows(seg_rows);
    sort_rows(summary_rows);
    sort_rows(ttest_rows);
    auto rf = open_out(a.out);
    rf << "row,subject,roi,metric,gt,pred,value\n";
    auto emit = [&](const char* type, const std::vector<EvalRow>& rows) {
        for (const auto& r : rows)
            rf << type << "," << r.subject << "," << r.roi << "," << r.metric << "," << r.gt << ","
               << r.pred << "," << r.value << "\n";
    };
    emit("dvh", dvh_rows);
    emit("dose", dose_rows);
    emit("seg", seg_rows);
    emit("summary", summary_rows);
    emit("ttest", ttest_rows);

    std::printf("eval: subjects=%zu dose_score=%s dvh_score=%s\n", subjects.size(),
                summary_rows.empty() ? "?" : fmt(dose_score_mean).c_str(),
                fmt(dvh_score(pooled, nullptr)).c_str());
    std::printf("eval: wrote %s\n", a.out.c_str());
}

// -------------------------------------------------------------- gradcheck

int run_gradcheck(const std::string& scope) {
    const GradSuiteSummary summary =
        scope == "op" ? op_gradient_suite() : model_gradient_suite(scope);
    std::printf("%-40s %14s %8s %s\n", "check", "max_rel_err", "coords", "status");
    for (const auto& r : summary.reports)
        std::printf("%-40s %14.3e %8lld %s\n", r.op_name.c_str(), r.max_relative_error,
                    static_cast<long long>(r.element_count), r.passed ? "ok" : "FAIL");
    std::printf("gradcheck %s: %zu checks, %lld coordinates, worst %.3e, %s\n", scope.c_str(),
                summary.reports.size(), static_cast<long long>(summary.coords()), summary.worst(),
                summary.all_passed() ? "PASS" : "FAIL");
    if (!summary.all_passed()) {
        for (const auto& r : summary.reports)
            if (!r.passed)
                std::fprintf(stderr, "gradcheck: FAILED %s max_rel_err=%.3e\n", r.op_name.c_str(),
                             r.max_relative_error);
        return 3;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"transformer cascade for radiotherapy dose prediction on synthetic subjects"};
    app.require_subcommand(1);

    PhantomArgs pa;
    auto* phantom_cmd = app.add_subcommand("phantom", "generate synthetic subjects as VOL1 files");
    phantom_cmd->add_option("--config", pa.config, "run configuration file");
    phantom_cmd->add_option("--count", pa.count, "number of subjects")->default_val(1);
    phantom_cmd->add_option("--out-dir", pa.out_dir, "output directory")->required();

    TrainArgs ta;
    auto* train_cmd = app.add_subcommand("train", "train one stage of the pipeline");
    train_cmd->add_option("--mode", ta.mode, "seg | dose1 | dose2 | e2e")
        ->required()
        ->check(CLI::IsMember({"seg", "dose1", "dose2", "e2e", "dose_stage1", "dose_stage2",
                               "end_to_end"}));
    train_cmd->add_option("--config", ta.config, "run configuration file");
    train_cmd->add_option("--data-dir", ta.data_dir, "directory of subject VOL1 files")->required();
    train_cmd->add_option("--out", ta.out, "output checkpoint path")->required();
    train_cmd->add_option("--init", ta.init,
                          "checkpoints providing earlier-stage weights (repeatable)");
    train_cmd->add_option("--trace", ta.trace, "loss trace CSV path (default: <out>.trace.csv)");

    PredictArgs ra;
    auto* predict_cmd = app.add_subcommand("predict", "predict a dose map for one subject");
    predict_cmd->add_option("--checkpoint", ra.checkpoints, "trained checkpoints (repeatable)")
        ->required();
    predict_cmd->add_option("--config", ra.config, "run configuration file");
    predict_cmd->add_option("--ct", ra.ct, "input CT VOL1 file")->required();
    predict_cmd->add_option("--ptv", ra.ptv, "target volume mask VOL1 file")->required();
    predict_cmd->add_option("--oar", ra.oar,
                            "organ mask bundle; omit to segment organs from the CT");
    predict_cmd->add_option("--out", ra.out, "output dose VOL1 path")->required();
    predict_cmd->add_option("--seg-out", ra.seg_out,
                            "predicted organ bundle path in cascade mode "
                            "(default: --out with _dose swapped for _masks)");

    EvalArgs ea;
    auto* eval_cmd = app.add_subcommand("eval", "score predictions against ground truth");
    eval_cmd->add_option("--pred-dir", ea.pred_dir, "directory of predicted dose files")->required();
    eval_cmd->add_option("--gt-dir", ea.gt_dir, "directory of ground-truth subject files")
        ->required();
    eval_cmd->add_option("--out", ea.out, "report CSV path")->required();
    eval_cmd->add_option("--config", ea.config, "run configuration file");
    eval_cmd->add_option("--curves-dir", ea.curves_dir, "emit DVH and isodose curve CSVs here");
    eval_cmd->add_option("--baseline-dir", ea.baseline_dir,
                         "second prediction directory for paired t-tests");

    std::string scope;
    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    grad_cmd->add_option("--scope", scope, "op | seg | dose | e2e")
        ->required()
        ->check(CLI::IsMember({"op", "seg", "dose", "e2e"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*phantom_cmd) run_phantom(pa);
        else if (*train_cmd) run_train(ta);
        else if (*predict_cmd) run_predict(ra);
        else if (*eval_cmd) run_eval(ea);
        else if (*grad_cmd) return run_gradcheck(scope);
        return 0;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "dosecast: %s\n", e.what());
        return 1;
    } catch (const TrainError& e) {
        std::fprintf(stderr, "dosecast: %s\n", e.what());
        return 3;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "dosecast: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        // Format, shape, generation and metric errors all indicate bad data.
        std::fprintf(stderr, "dosecast: %s\n", e.what());
        return 2;
    }
}
