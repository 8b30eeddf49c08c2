// Optimizer recurrence against a hand-rolled oracle, augmentation
// algebra (involutions, identity, draw-stream stability), checkpoint
// round trips with tamper detection, and the training loop's
// determinism, freezing, and descent contracts.

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "dosecast/run_config.hpp"
#include "dosecast/trainer.hpp"

using namespace dosecast;

namespace {

SegNetConfig tiny_seg() {
    SegNetConfig c;
    c.encoder = EncoderConfig::cubic(16, 8, 1, 16, 4, 2, 2.0);
    c.decoder.channels = {8, 6, 4, 4};
    return c;
}

DoseNetConfig tiny_dose() {
    DoseNetConfig c;
    c.encoder = EncoderConfig::cubic(16, 8, 10, 16, 4, 2, 2.0);
    c.decoder.channels = {8, 6, 4, 4};
    c.stage1_width = 2;
    return c;
}

std::string temp_path(const std::string& stem) {
    return testing::TempDir() + stem;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Subject small_subject(std::uint64_t seed, std::int64_t index = 0) {
    return generate(PhantomConfig::for_resolution(16, seed), index);
}

}  // namespace

// ------------------------------------------------------------------ AdamW

TEST(AdamW, ZeroGradientIsAFixedPointWithoutDecay) {
    auto p = Tensor<double>::from_data({3}, {0.5, -1.25, 2.0}).set_requires_grad(true);
    const auto before = p.data();
    NamedParams<double> ps = {{"p", p}};
    AdamWConfig cfg;
    cfg.lr = 0.1;
    AdamW<double> opt(cfg);
    for (int t = 0; t < 4; ++t) {
        p.zero_grad();
        opt.step(ps);
    }
    EXPECT_EQ(p.data(), before);
}

TEST(AdamW, DecayAloneShrinksExactly) {
    auto p = Tensor<double>::from_data({2}, {1.0, -3.0}).set_requires_grad(true);
    NamedParams<double> ps = {{"p", p}};
    AdamWConfig cfg;
    cfg.lr = 0.05;
    cfg.weight_decay = 0.2;
    AdamW<double> opt(cfg);
    double a = 1.0, b = -3.0;
    for (int t = 0; t < 5; ++t) {
        p.zero_grad();
        opt.step(ps);
        a = a - cfg.lr * (cfg.weight_decay * a);
        b = b - cfg.lr * (cfg.weight_decay * b);
    }
    EXPECT_EQ(p.data()[0], a);
    EXPECT_EQ(p.data()[1], b);
}

TEST(AdamW, MatchesScalarRecurrenceOracle) {
    const double lr = 0.01, wd = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    auto p = Tensor<double>::scalar(0.5).set_requires_grad(true);
    NamedParams<double> ps = {{"x", p}};
    AdamWConfig cfg;
    cfg.lr = lr;
    cfg.weight_decay = wd;
    AdamW<double> opt(cfg);

    const double grads[] = {0.3, -0.2, 0.1};
    double x = 0.5, m = 0.0, v = 0.0;
    for (int t = 1; t <= 3; ++t) {
        p.grad() = {grads[t - 1]};
        opt.step(ps);
        const double g = grads[t - 1];
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mhat = m / (1 - std::pow(b1, t));
        const double vhat = v / (1 - std::pow(b2, t));
        x = x - lr * (mhat / (std::sqrt(vhat) + eps) + wd * x);
        ASSERT_NEAR(p.item(), x, 1e-15) << "step " << t;
    }
    EXPECT_EQ(opt.step_count(), 3);
}

TEST(AdamW, RejectsMissingAndNonFiniteGradients) {
    auto p = Tensor<double>::scalar(1.0).set_requires_grad(true);
    NamedParams<double> ps = {{"w", p}};
    AdamW<double> opt(AdamWConfig{});
    EXPECT_THROW(opt.step(ps), TrainError);  // grad never populated

    p.grad() = {std::numeric_limits<double>::quiet_NaN()};
    EXPECT_THROW(opt.step(ps), TrainError);
}

TEST(AdamW, ConfigValidation) {
    AdamWConfig cfg;
    cfg.lr = 0.0;
    EXPECT_THROW(AdamW<double>{cfg}, ConfigError);
    cfg = {};
    cfg.beta1 = 1.0;
    EXPECT_THROW(AdamW<double>{cfg}, ConfigError);
    cfg = {};
    cfg.weight_decay = -0.1;
    EXPECT_THROW(AdamW<double>{cfg}, ConfigError);
}

// ------------------------------------------------------------- augmentation

TEST(Augment, AllProbabilitiesZeroIsIdentity) {
    const Subject s = small_subject(21);
    AugmentationConfig cfg;
    cfg.p_intensity = 0.0;
    cfg.p_flip = 0.0;
    cfg.p_rot90 = 0.0;
    Rng rng(5);
    const Subject a = augment(s, cfg, rng);
    EXPECT_EQ(a.ct.v, s.ct.v);
    EXPECT_EQ(a.dose.v, s.dose.v);
    EXPECT_EQ(a.ptv.v, s.ptv.v);
    for (int k = 0; k < kNumOars; ++k)
        EXPECT_EQ(a.oars[static_cast<std::size_t>(k)].v, s.oars[static_cast<std::size_t>(k)].v);
}

TEST(Augment, FlipIsAnInvolutionAndRotHasOrderFour) {
    const Subject s = small_subject(22);
    for (auto ax : {detail::Axis::Z, detail::Axis::Y, detail::Axis::X}) {
        const auto once = detail::flip_axis(s.ct, ax);
        EXPECT_NE(once.v, s.ct.v);
        EXPECT_EQ(detail::flip_axis(once, ax).v, s.ct.v);
    }
    auto r = s.dose;
    for (int q = 0; q < 4; ++q) r = detail::rot90_once(r);
    EXPECT_EQ(r.v, s.dose.v);

    Volume3 rect(2, 3, 4);
    EXPECT_THROW(detail::rot90_once(rect), ConfigError);
}

TEST(Augment, ForcedFlipsMoveEveryFieldTogether) {
    const Subject s = small_subject(23);
    AugmentationConfig cfg;
    cfg.p_intensity = 0.0;
    cfg.p_flip = 1.0;
    cfg.p_rot90 = 0.0;
    Rng rng(9);
    const Subject a = augment(s, cfg, rng);
    const std::int64_t D = s.ct.d, H = s.ct.h, W = s.ct.w;
    for (std::int64_t z = 0; z < D; ++z)
        for (std::int64_t y = 0; y < H; ++y)
            for (std::int64_t x = 0; x < W; ++x) {
                ASSERT_EQ(a.ct.at(z, y, x), s.ct.at(D - 1 - z, H - 1 - y, W - 1 - x));
                ASSERT_EQ(a.dose.at(z, y, x), s.dose.at(D - 1 - z, H - 1 - y, W - 1 - x));
                ASSERT_EQ(a.ptv.at(z, y, x), s.ptv.at(D - 1 - z, H - 1 - y, W - 1 - x));
                ASSERT_EQ(a.body.at(z, y, x), s.body.at(D - 1 - z, H - 1 - y, W - 1 - x));
            }
    // Spatial permutation preserves the dose-in-target law.
    for (std::size_t i = 0; i < a.ptv.v.size(); ++i)
        if (a.ptv.v[i]) ASSERT_EQ(a.dose.v[i], a.prescription);
}

TEST(Augment, IntensityShiftTouchesOnlyTheImage) {
    const Subject s = small_subject(24);
    AugmentationConfig cfg;
    cfg.p_intensity = 1.0;
    cfg.intensity_shift_range = 0.3;
    cfg.p_flip = 0.0;
    cfg.p_rot90 = 0.0;
    Rng rng(11);
    const Subject a = augment(s, cfg, rng);
    EXPECT_NE(a.ct.v, s.ct.v);
    EXPECT_EQ(a.dose.v, s.dose.v);
    EXPECT_EQ(a.ptv.v, s.ptv.v);
    for (double v : a.ct.v) {
        ASSERT_GE(v, 0.0);
        ASSERT_LE(v, 1.0);
    }
}

TEST(Augment, CropShrinksOrRejects) {
    const Subject s = small_subject(25);
    AugmentationConfig cfg;
    cfg.p_intensity = 0.0;
    cfg.p_flip = 0.0;
    cfg.p_rot90 = 0.0;
    cfg.crop = 8;
    Rng rng(3);
    const Subject a = augment(s, cfg, rng);
    EXPECT_EQ(a.ct.d, 8);
    EXPECT_EQ(a.ct.h, 8);
    EXPECT_EQ(a.ct.w, 8);
    EXPECT_EQ(a.ptv.d, 8);

    cfg.crop = 64;
    Rng rng2(3);
    EXPECT_THROW(augment(s, cfg, rng2), ConfigError);
}

TEST(Augment, DrawStreamIsSeedStable) {
    const Subject s = small_subject(26);
    AugmentationConfig cfg;  // all defaults active
    Rng a(77), b(77);
    for (int i = 0; i < 5; ++i) {
        const Subject x = augment(s, cfg, a);
        const Subject y = augment(s, cfg, b);
        ASSERT_EQ(x.ct.v, y.ct.v);
        ASSERT_EQ(x.dose.v, y.dose.v);
        ASSERT_EQ(x.ptv.v, y.ptv.v);
    }
}

// --------------------------------------------------------------- checkpoint

namespace {

Checkpoint sample_checkpoint(std::uint64_t seed) {
    Rng rng(seed);
    NamedParams<double> ps = {
        {"alpha.w", Tensor<double>::randn({2, 3}, rng)},
        {"alpha.b", Tensor<double>::randn({3}, rng)},
        {"beta.w", Tensor<double>::randn({4}, rng)},
    };
    Checkpoint ckpt;
    add_params(ckpt, ps, "model.");
    std::map<std::string, MomentPair> state;
    state["model.alpha.w"] = {{0.1, 0.2, 0.3, 0.4, 0.5, 0.6}, {1, 2, 3, 4, 5, 6}};
    add_optim_state(ckpt, state, "");
    ckpt.step = 17;
    ckpt.fingerprint = "f005ba11deadbeef";
    ckpt.sort_entries();
    return ckpt;
}

}  // namespace

TEST(CheckpointIo, RoundTripIsExactAndResaveIsByteIdentical) {
    const Checkpoint ckpt = sample_checkpoint(31);
    const auto p1 = temp_path("ckpt_roundtrip_1.ckpt");
    const auto p2 = temp_path("ckpt_roundtrip_2.ckpt");
    save_checkpoint(ckpt, p1);

    const Checkpoint back = load_checkpoint(p1);
    EXPECT_EQ(back.step, 17);
    EXPECT_EQ(back.fingerprint, "f005ba11deadbeef");
    ASSERT_EQ(back.entries.size(), ckpt.entries.size());
    for (std::size_t i = 0; i < ckpt.entries.size(); ++i) {
        EXPECT_EQ(back.entries[i].name, ckpt.entries[i].name);
        EXPECT_EQ(back.entries[i].shape, ckpt.entries[i].shape);
        EXPECT_EQ(back.entries[i].data, ckpt.entries[i].data);
    }

    save_checkpoint(back, p2);
    EXPECT_EQ(slurp(p1), slurp(p2));
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST(CheckpointIo, DetectsTamperedPayload) {
    const auto path = temp_path("ckpt_tamper.ckpt");
    save_checkpoint(sample_checkpoint(32), path);
    std::string bytes = slurp(path);
    ASSERT_FALSE(bytes.empty());
    bytes.back() = static_cast<char>(bytes.back() ^ 0x5A);
    spit(path, bytes);
    EXPECT_THROW(load_checkpoint(path), FormatError);
    std::remove(path.c_str());
}

TEST(CheckpointIo, RejectsMalformedFiles) {
    const auto path = temp_path("ckpt_malformed.ckpt");
    spit(path, "NOTCKPT\n{}\n");
    EXPECT_THROW(load_checkpoint(path), FormatError);
    spit(path, "CKPT1\nthis is not json\n");
    EXPECT_THROW(load_checkpoint(path), FormatError);
    spit(path, "CKPT1\n");
    EXPECT_THROW(load_checkpoint(path), FormatError);
    std::remove(path.c_str());
    EXPECT_THROW(load_checkpoint(path), FormatError);  // absent file
}

TEST(CheckpointIo, LoadParamsRestoresValuesAndListsOffenders) {
    Rng rng(33);
    NamedParams<double> src = {{"w", Tensor<double>::randn({2, 2}, rng)},
                               {"b", Tensor<double>::randn({2}, rng)}};
    Checkpoint ckpt;
    add_params(ckpt, src, "net.");

    NamedParams<double> dst = {{"w", Tensor<double>::zeros({2, 2})},
                               {"b", Tensor<double>::zeros({2})}};
    load_params(ckpt, dst, "net.");
    for (std::size_t i = 0; i < 4; ++i)
        EXPECT_EQ(dst[0].second.data()[i], static_cast<double>(static_cast<float>(src[0].second.data()[i])));

    NamedParams<double> bad = {{"w", Tensor<double>::zeros({3, 3})},
                               {"missing", Tensor<double>::zeros({1})}};
    try {
        load_params(ckpt, bad, "net.");
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("shape:net.w"), std::string::npos) << msg;
        EXPECT_NE(msg.find("missing:net.missing"), std::string::npos) << msg;
    }
}

// ------------------------------------------------------------------ trainer

TEST(Trainer, TraceShapeAndCheckpointContents) {
    Rng rng(41);
    auto seg = SegNet<double>::init(tiny_seg(), rng);
    const std::vector<Subject> data = {small_subject(41)};
    TrainConfig cfg;
    cfg.mode = TrainMode::Seg;
    cfg.steps = 2;
    cfg.batch_size = 1;
    cfg.fingerprint = "abc";
    const TrainResult r = train(&seg, nullptr, data, cfg);

    ASSERT_EQ(r.trace.size(), 3u);  // per-step rows plus the closing evaluation
    for (const auto& row : r.trace) EXPECT_TRUE(std::isfinite(row.total));
    EXPECT_EQ(r.trace.back().step, 2);
    EXPECT_EQ(r.checkpoint.step, 2);
    EXPECT_EQ(r.checkpoint.fingerprint, "abc");

    bool saw_model = false, saw_m = false, saw_v = false;
    for (const auto& e : r.checkpoint.entries) {
        saw_model = saw_model || e.name.rfind("seg.", 0) == 0;
        saw_m = saw_m || e.name.rfind("optim.m.seg.", 0) == 0;
        saw_v = saw_v || e.name.rfind("optim.v.seg.", 0) == 0;
    }
    EXPECT_TRUE(saw_model);
    EXPECT_TRUE(saw_m);
    EXPECT_TRUE(saw_v);
    for (std::size_t i = 1; i < r.checkpoint.entries.size(); ++i)
        EXPECT_LT(r.checkpoint.entries[i - 1].name, r.checkpoint.entries[i].name);
}

TEST(Trainer, DeterministicAcrossRuns) {
    const std::vector<Subject> data = {small_subject(42), small_subject(42, 1)};
    TrainConfig cfg;
    cfg.mode = TrainMode::DoseStage1;
    cfg.steps = 3;
    cfg.batch_size = 2;
    cfg.lr = 1e-3;
    cfg.augment_enabled = true;

    auto run = [&]() {
        Rng rng(7);
        auto dose = DoseNet<double>::init(tiny_dose(), rng);
        return train(nullptr, &dose, data, cfg);
    };
    const TrainResult a = run();
    const TrainResult b = run();
    ASSERT_EQ(a.trace.size(), b.trace.size());
    for (std::size_t i = 0; i < a.trace.size(); ++i) {
        EXPECT_EQ(a.trace[i].total, b.trace[i].total);
        EXPECT_EQ(a.trace[i].dose_term, b.trace[i].dose_term);
    }
    ASSERT_EQ(a.checkpoint.entries.size(), b.checkpoint.entries.size());
    for (std::size_t i = 0; i < a.checkpoint.entries.size(); ++i)
        EXPECT_EQ(a.checkpoint.entries[i].data, b.checkpoint.entries[i].data);
}

TEST(Trainer, FirstStageDescendsOnItsOwnLoss) {
    Rng rng(43);
    auto dose = DoseNet<double>::init(tiny_dose(), rng);
    const std::vector<Subject> data = {small_subject(43)};
    TrainConfig cfg;
    cfg.mode = TrainMode::DoseStage1;
    cfg.steps = 20;
    cfg.batch_size = 1;
    cfg.lr = 3e-2;
    cfg.weight_decay = 0.0;
    const TrainResult r = train(nullptr, &dose, data, cfg);
    EXPECT_LT(r.trace.back().total, r.trace.front().total);
}

TEST(Trainer, PyramidStageLeavesFirstStageFrozen) {
    Rng rng(44);
    auto dose = DoseNet<double>::init(tiny_dose(), rng);
    NamedParams<double> s1;
    dose.collect_stage1("", s1);
    std::vector<std::vector<double>> before;
    for (const auto& [name, p] : s1) before.push_back(p.data());

    const std::vector<Subject> data = {small_subject(44)};
    TrainConfig cfg;
    cfg.mode = TrainMode::DoseStage2;
    cfg.steps = 1;
    cfg.batch_size = 1;
    const TrainResult r = train(nullptr, &dose, data, cfg);

    for (std::size_t i = 0; i < s1.size(); ++i)
        EXPECT_EQ(s1[i].second.data(), before[i]) << "first-stage drifted: " << s1[i].first;

    bool has_s1 = false, has_s2 = false, has_s1_optim = false;
    for (const auto& e : r.checkpoint.entries) {
        has_s1 = has_s1 || e.name.rfind("dose.stage1.", 0) == 0;
        has_s2 = has_s2 || e.name.rfind("dose.stage2.", 0) == 0;
        has_s1_optim = has_s1_optim || e.name.rfind("optim.m.dose.stage1.", 0) == 0;
    }
    EXPECT_TRUE(has_s1);   // frozen weights still ship with the checkpoint
    EXPECT_TRUE(has_s2);
    EXPECT_FALSE(has_s1_optim);  // but they carry no optimizer state
}

TEST(Trainer, RejectsBadSetupsAndNonFiniteLoss) {
    const std::vector<Subject> data = {small_subject(45)};
    TrainConfig cfg;
    cfg.mode = TrainMode::Seg;
    cfg.steps = 1;
    cfg.batch_size = 1;
    EXPECT_THROW(train(nullptr, nullptr, data, cfg), ConfigError);

    Rng rng(45);
    auto seg = SegNet<double>::init(tiny_seg(), rng);
    EXPECT_THROW(train(&seg, nullptr, {}, cfg), ConfigError);

    auto dose = DoseNet<double>::init(tiny_dose(), rng);
    std::vector<Subject> poisoned = {small_subject(45)};
    poisoned[0].dose.v[0] = std::numeric_limits<double>::quiet_NaN();
    cfg.mode = TrainMode::DoseStage1;
    EXPECT_THROW(train(nullptr, &dose, poisoned, cfg), TrainError);
}
