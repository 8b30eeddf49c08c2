// End-to-end checks of the command-line binary: dataset generation,
// staged training, cascade prediction, evaluation reports, and the exit
// code contract. Summary numbers in reports are compared against the
// same metrics computed in-process on the same files.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dosecast/metrics.hpp"
#include "dosecast/run_config.hpp"
#include "dosecast/trainer.hpp"
#include "dosecast/vol1.hpp"

namespace fs = std::filesystem;
using namespace dosecast;

namespace {

struct CliResult {
    int code = -1;
    std::string out, err;
};

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void spit(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    f << text;
}

CliResult run_cli(const std::string& args, const fs::path& dir) {
    const std::string out_p = (dir / "cli_stdout.txt").string();
    const std::string err_p = (dir / "cli_stderr.txt").string();
    const std::string cmd =
        std::string(DOSECAST_CLI_PATH) + " " + args + " >" + out_p + " 2>" + err_p;
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out_p);
    r.err = slurp(err_p);
    return r;
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::path(testing::TempDir()) / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

const char* kTinyConfig =
    "phantom.resolution = 16\n"
    "phantom.seed = 5\n"
    "seg.channels = 8,6,4,4\n"
    "dose.channels = 8,6,4,4\n"
    "dose.stage1_width = 2\n"
    "train.steps = 2\n"
    "train.batch_size = 2\n"
    "train.lr = 1e-3\n";

std::string subject_file(const fs::path& dir, int index, const std::string& kind) {
    return (dir / ("subject_" + std::to_string(index) + "_" + kind + ".vol1")).string();
}

struct ReportRow {
    std::string type, subject, roi, metric, gt, pred, value;
};

std::vector<ReportRow> parse_report(const std::string& path) {
    std::ifstream f(path);
    std::string line;
    std::vector<ReportRow> rows;
    bool first = true;
    while (std::getline(f, line)) {
        if (first) {
            EXPECT_EQ(line, "row,subject,roi,metric,gt,pred,value");
            first = false;
            continue;
        }
        std::vector<std::string> cells;
        std::string cur;
        for (char c : line) {
            if (c == ',') {
                cells.push_back(cur);
                cur.clear();
            } else {
                cur += c;
            }
        }
        cells.push_back(cur);
        EXPECT_EQ(cells.size(), 7u) << line;
        rows.push_back({cells[0], cells[1], cells[2], cells[3], cells[4], cells[5], cells[6]});
    }
    return rows;
}

double summary_value(const std::vector<ReportRow>& rows, const std::string& metric) {
    for (const auto& r : rows)
        if (r.type == "summary" && r.metric == metric) return std::stod(r.value);
    ADD_FAILURE() << "no summary row for " << metric;
    return 0.0;
}

std::int64_t count_lines(const std::string& path) {
    std::ifstream f(path);
    std::string line;
    std::int64_t n = 0;
    while (std::getline(f, line)) ++n;
    return n;
}

Tensor<double> organs_tensor(const std::array<Mask3, kNumOars>& oars) {
    std::vector<Tensor<double>> parts;
    for (const auto& m : oars) parts.push_back(from_mask<double>(m));
    return concat<double>(parts, 0);
}

}  // namespace

TEST(CliPhantom, WritesCompleteDeterministicDataset) {
    const fs::path dir = fresh_dir("cli_phantom");
    const std::string cfg = (dir / "cfg.txt").string();
    spit(cfg, kTinyConfig);

    const auto r1 = run_cli("phantom --config " + cfg + " --count 2 --out-dir " +
                                (dir / "a").string(), dir);
    ASSERT_EQ(r1.code, 0) << r1.err;
    for (int i = 0; i < 2; ++i)
        for (const char* kind : {"ct", "masks", "ptv", "body", "dose"})
            EXPECT_TRUE(fs::exists(subject_file(dir / "a", i, kind))) << kind << " " << i;
    EXPECT_TRUE(fs::exists(dir / "a" / "manifest.json"));

    const Vol1 ct = read_vol1(subject_file(dir / "a", 0, "ct"));
    EXPECT_EQ(ct.kind, "ct");
    EXPECT_EQ(ct.d, 16);
    EXPECT_EQ(ct.h, 16);
    EXPECT_EQ(ct.w, 16);
    EXPECT_EQ(ct.spacing.sz, 3.0);
    EXPECT_EQ(ct.spacing.sy, 3.0);
    EXPECT_EQ(ct.spacing.sx, 3.0);
    const Vol1 masks = read_vol1(subject_file(dir / "a", 0, "masks"));
    EXPECT_EQ(masks.kind, "mask");
    ASSERT_EQ(masks.channels, kNumOars);
    EXPECT_EQ(masks.names.front(), "brainstem");
    EXPECT_EQ(masks.names.back(), "mandible");
    EXPECT_EQ(read_vol1(subject_file(dir / "a", 0, "dose")).kind, "dose");

    const auto r2 = run_cli("phantom --config " + cfg + " --count 2 --out-dir " +
                                (dir / "b").string(), dir);
    ASSERT_EQ(r2.code, 0) << r2.err;
    for (const auto& ent : fs::directory_iterator(dir / "a")) {
        const auto name = ent.path().filename();
        EXPECT_EQ(slurp(ent.path().string()), slurp((dir / "b" / name).string()))
            << name << " differs between identical runs";
    }
}

TEST(CliPipeline, WalkthroughTrainsPredictsAndEvaluates) {
    const fs::path dir = fresh_dir("cli_walkthrough");
    const std::string cfg = (dir / "cfg.txt").string();
    spit(cfg, kTinyConfig);
    const std::string data = (dir / "data").string();

    ASSERT_EQ(run_cli("phantom --config " + cfg + " --count 2 --out-dir " + data, dir).code, 0);

    const std::string seg_ckpt = (dir / "seg.ckpt").string();
    const std::string dose1_ckpt = (dir / "dose1.ckpt").string();
    const std::string dose2_ckpt = (dir / "dose2.ckpt").string();
    auto train = [&](const std::string& mode, const std::string& out, const std::string& extra) {
        return run_cli("train --mode " + mode + " --config " + cfg + " --data-dir " + data +
                           " --out " + out + extra, dir);
    };
    ASSERT_EQ(train("seg", seg_ckpt, "").code, 0);
    ASSERT_EQ(train("dose1", dose1_ckpt, "").code, 0);
    ASSERT_EQ(train("dose2", dose2_ckpt, " --init " + dose1_ckpt).code, 0);

    // Loss trace: header plus steps+1 data rows, step column 0..steps.
    EXPECT_EQ(count_lines(seg_ckpt + ".trace.csv"), 1 + 2 + 1);
    {
        std::ifstream tf(seg_ckpt + ".trace.csv");
        std::string line;
        std::getline(tf, line);
        EXPECT_EQ(line, "step,total,seg,dose");
        std::getline(tf, line);
        EXPECT_EQ(line.substr(0, 2), "0,");
    }

    // The pyramid stage must ship the first stage bytes untouched.
    const Checkpoint c1 = load_checkpoint(dose1_ckpt);
    const Checkpoint c2 = load_checkpoint(dose2_ckpt);
    std::int64_t stage1_entries = 0;
    for (const auto& e : c1.entries) {
        if (e.name.rfind("dose.stage1.", 0) != 0) continue;
        ++stage1_entries;
        const CkptEntry* other = c2.find(e.name);
        ASSERT_NE(other, nullptr) << e.name;
        EXPECT_EQ(e.data, other->data) << e.name;
    }
    EXPECT_EQ(stage1_entries, 20);  // ten conv layers, weight and bias each

    // Cascade prediction: dose plus an organ bundle per subject.
    const std::string pred = (dir / "pred").string();
    for (int i = 0; i < 2; ++i) {
        const auto r = run_cli("predict --checkpoint " + seg_ckpt + " --checkpoint " + dose2_ckpt +
                                   " --config " + cfg + " --ct " + subject_file(data, i, "ct") +
                                   " --ptv " + subject_file(data, i, "ptv") + " --out " +
                                   subject_file(pred, i, "dose"), dir);
        ASSERT_EQ(r.code, 0) << r.err;
    }
    const Vol1 pd = read_vol1(subject_file(pred, 0, "dose"));
    EXPECT_EQ(pd.kind, "dose");
    EXPECT_EQ(pd.d, 16);
    EXPECT_EQ(pd.h, 16);
    EXPECT_EQ(pd.w, 16);
    for (float v : pd.payload) ASSERT_GE(v, 0.0f);
    const Vol1 pm = read_vol1(subject_file(pred, 0, "masks"));
    EXPECT_EQ(pm.channels, kNumOars);

    // Supplying organ masks bypasses segmentation; the file must match an
    // in-process forward pass through the same loaded weights bitwise.
    const std::string oar_out = (dir / "oar_pred.vol1").string();
    ASSERT_EQ(run_cli("predict --checkpoint " + dose2_ckpt + " --config " + cfg + " --ct " +
                          subject_file(data, 0, "ct") + " --ptv " + subject_file(data, 0, "ptv") +
                          " --oar " + subject_file(data, 0, "masks") + " --out " + oar_out, dir)
                  .code, 0);
    {
        const RunConfig rc = RunConfig::parse_text(kTinyConfig);
        Rng rng(0);
        DoseNet<double> dose = DoseNet<double>::init(dose_config_from(rc, 16), rng);
        NamedParams<double> ps;
        dose.collect_stage1("dose.stage1.", ps);
        dose.collect_stage2("dose.stage2.", ps);
        load_params(c2, ps, "");
        NoGradGuard ng;
        const auto ct_t = from_volume<double>(volume_from_vol1(read_vol1(subject_file(data, 0, "ct"))));
        const auto ptv_t = from_mask<double>(mask_from_vol1(read_vol1(subject_file(data, 0, "ptv"))));
        const auto oars = organ_masks_from_vol1(read_vol1(subject_file(data, 0, "masks")));
        const auto expect =
            to_volume(predict_dose(dose.cascade(make_composite(ct_t, organs_tensor(oars), ptv_t))));
        const Vol1 got = read_vol1(oar_out);
        ASSERT_EQ(got.payload.size(), expect.v.size());
        for (std::size_t i = 0; i < expect.v.size(); ++i)
            ASSERT_EQ(got.payload[i], static_cast<float>(expect.v[i])) << i;
    }

    // Evaluation: summary values must equal the metrics computed
    // in-process from the same files, exactly.
    const std::string report = (dir / "report.csv").string();
    const auto ev = run_cli("eval --pred-dir " + pred + " --gt-dir " + data + " --out " + report +
                                " --config " + cfg, dir);
    ASSERT_EQ(ev.code, 0) << ev.err;
    const auto rows = parse_report(report);

    std::int64_t dvh_rows = 0, dose_rows = 0, dice_rows = 0;
    for (const auto& r : rows) {
        if (r.type == "dvh") ++dvh_rows;
        if (r.type == "dose") ++dose_rows;
        if (r.type == "seg" && r.metric == "dice") ++dice_rows;
        if (!r.value.empty()) EXPECT_TRUE(std::isfinite(std::stod(r.value))) << r.metric;
    }
    EXPECT_EQ(dvh_rows, 2 * (kNumOars * 2 + 3));  // two criteria per organ, three for the target
    EXPECT_EQ(dose_rows, 2);
    EXPECT_EQ(dice_rows, 2 * kNumOars);

    // Rows are sorted by (subject, roi, metric) within each block.
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].type != rows[i - 1].type) continue;
        const auto a = std::tie(rows[i - 1].subject, rows[i - 1].roi, rows[i - 1].metric);
        const auto b = std::tie(rows[i].subject, rows[i].roi, rows[i].metric);
        EXPECT_LE(a, b) << "row " << i << " out of order";
    }

    double mae_sum = 0.0;
    std::vector<SubjectDoses> pooled;
    for (int i = 0; i < 2; ++i) {
        const Volume3 gt = volume_from_vol1(read_vol1(subject_file(data, i, "dose")));
        const Volume3 pr = volume_from_vol1(read_vol1(subject_file(pred, i, "dose")));
        const Mask3 body = mask_from_vol1(read_vol1(subject_file(data, i, "body")));
        const auto oars = organ_masks_from_vol1(read_vol1(subject_file(data, i, "masks")));
        const Mask3 ptv = mask_from_vol1(read_vol1(subject_file(data, i, "ptv")));
        mae_sum += dose_score(gt, pr, body);
        SubjectDoses sd;
        sd.id = "subject_" + std::to_string(i);
        sd.gt = gt;
        sd.pred = pr;
        sd.spacing = {3.0, 3.0, 3.0};
        for (int k = 0; k < kNumOars; ++k)
            sd.rois.emplace_back(RoiSpec{kClassNames[static_cast<std::size_t>(k) + 1], RoiKind::Oar},
                                 oars[static_cast<std::size_t>(k)]);
        sd.rois.emplace_back(RoiSpec{"ptv", RoiKind::Ptv}, ptv);
        pooled.push_back(std::move(sd));
    }
    EXPECT_EQ(summary_value(rows, "dose_score"), mae_sum / 2.0);
    EXPECT_EQ(summary_value(rows, "dvh_score"), dvh_score(pooled));

    // Identity: evaluating the ground truth against itself is all zeros
    // and perfect overlap.
    const std::string id_report = (dir / "identity.csv").string();
    ASSERT_EQ(run_cli("eval --pred-dir " + data + " --gt-dir " + data + " --out " + id_report +
                          " --config " + cfg, dir).code, 0);
    const auto id_rows = parse_report(id_report);
    EXPECT_EQ(summary_value(id_rows, "dose_score"), 0.0);
    EXPECT_EQ(summary_value(id_rows, "dvh_score"), 0.0);
    EXPECT_EQ(summary_value(id_rows, "dice_mean"), 1.0);
    EXPECT_EQ(summary_value(id_rows, "hd95_mean"), 0.0);

    // Curves: one DVH file per structure and one isodose file per subject.
    const std::string curves = (dir / "curves").string();
    ASSERT_EQ(run_cli("eval --pred-dir " + pred + " --gt-dir " + data + " --out " +
                          (dir / "r2.csv").string() + " --config " + cfg + " --curves-dir " +
                          curves, dir).code, 0);
    EXPECT_TRUE(fs::exists(fs::path(curves) / "dvh_subject_0_brainstem.csv"));
    EXPECT_TRUE(fs::exists(fs::path(curves) / "dvh_subject_1_ptv.csv"));
    EXPECT_TRUE(fs::exists(fs::path(curves) / "isodose_subject_0.csv"));
    const auto bins = RunConfig::parse_text(kTinyConfig).get_int("eval.dvh_bins");
    EXPECT_EQ(count_lines((fs::path(curves) / "dvh_subject_0_brainstem.csv").string()), 1 + bins);

    // Baseline comparison emits paired t-test rows.
    const std::string t_report = (dir / "ttest.csv").string();
    ASSERT_EQ(run_cli("eval --pred-dir " + pred + " --gt-dir " + data + " --out " + t_report +
                          " --config " + cfg + " --baseline-dir " + data, dir).code, 0);
    const auto t_rows = parse_report(t_report);
    std::int64_t ttest_rows = 0;
    for (const auto& r : t_rows)
        if (r.type == "ttest") ++ttest_rows;
    EXPECT_EQ(ttest_rows, 4);
}

TEST(CliErrors, UsageProblemsExitOne) {
    const fs::path dir = fresh_dir("cli_usage");
    const std::string cfg = (dir / "cfg.txt").string();
    spit(cfg, kTinyConfig);

    EXPECT_EQ(run_cli("", dir).code, 1);
    EXPECT_EQ(run_cli("bogus", dir).code, 1);
    EXPECT_EQ(run_cli("train --mode warp --data-dir x --out y", dir).code, 1);
    EXPECT_EQ(run_cli("gradcheck --scope everything", dir).code, 1);
    EXPECT_EQ(run_cli("phantom --config " + cfg + " --count 0 --out-dir " + (dir / "d").string(),
                      dir).code, 1);

    // Pyramid-stage training without the first-stage weights.
    const auto r = run_cli("train --mode dose2 --config " + cfg + " --data-dir " +
                               (dir / "d").string() + " --out " + (dir / "x.ckpt").string(), dir);
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("requires --init"), std::string::npos) << r.err;

    const auto r2 = run_cli("train --mode seg --config " + cfg + " --data-dir " +
                                (dir / "d").string() + " --out " + (dir / "x.ckpt").string() +
                                " --init " + (dir / "x.ckpt").string(), dir);
    EXPECT_EQ(r2.code, 1);
}

TEST(CliErrors, DataProblemsExitTwo) {
    const fs::path dir = fresh_dir("cli_data");
    const std::string cfg = (dir / "cfg.txt").string();
    spit(cfg, kTinyConfig);
    const fs::path empty = dir / "empty";
    fs::create_directories(empty);

    EXPECT_EQ(run_cli("train --mode seg --config " + cfg + " --data-dir " + empty.string() +
                          " --out " + (dir / "x.ckpt").string(), dir).code, 2);

    spit((empty / "subject_0_ct.vol1").string(), "junk");
    EXPECT_EQ(run_cli("train --mode seg --config " + cfg + " --data-dir " + empty.string() +
                          " --out " + (dir / "x.ckpt").string(), dir).code, 2);

    const fs::path gt = dir / "gt";
    fs::create_directories(gt);
    ASSERT_EQ(run_cli("phantom --config " + cfg + " --count 1 --out-dir " + gt.string(), dir).code, 0);
    const auto r = run_cli("eval --pred-dir " + empty.string() + " --gt-dir " + gt.string() +
                               " --out " + (dir / "r.csv").string(), dir);
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("subject_0_dose.vol1"), std::string::npos) << r.err;
}

TEST(CliGradcheck, OpScopePassesAndReportsTable) {
    const fs::path dir = fresh_dir("cli_gradcheck");
    const auto r = run_cli("gradcheck --scope op", dir);
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("matmul"), std::string::npos);
    EXPECT_NE(r.out.find("PASS"), std::string::npos);
}
