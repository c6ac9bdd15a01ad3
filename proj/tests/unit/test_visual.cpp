// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "support/helpers.hpp"
#include "tavid/nn/grad_check.hpp"
#include "tavid/visual/train.hpp"

using namespace tavid;
using namespace tavid::visual;
using test::random_tensor;
using test::randomize_params;

namespace {

DenoiserConfig small(bool temporal = true) {
    DenoiserConfig c;
    c.latent_dim = 3;
    c.width = 8;
    c.heads = 2;
    c.depth = 1;
    c.motion_dim = 4;
    c.face_dim = 5;
    c.ref_channels = 2;
    c.ref_positions = 6;
    c.temporal = temporal;
    return c;
}

ConditioningSet random_cond(const DenoiserConfig& cfg, std::size_t F, Rng& rng) {
    ConditioningSet c;
    c.c_ref = random_tensor(cfg.ref_channels, cfg.ref_positions, rng);
    c.c_face = random_tensor(1, cfg.face_dim, rng);
    c.c_mot = nn::constant(random_tensor(F * cfg.tokens_per_frame, cfg.motion_dim, rng));
    c.motion_frames = random_tensor(cfg.motion_frames, cfg.latent_dim, rng);
    return c;
}

Tensor permute_rows(const Tensor& t, const std::vector<std::size_t>& perm, std::size_t group = 1) {
    Tensor out(t.rows(), t.cols());
    for (std::size_t i = 0; i < perm.size(); ++i)
        for (std::size_t g = 0; g < group; ++g)
            for (std::size_t j = 0; j < t.cols(); ++j) out(i * group + g, j) = t(perm[i] * group + g, j);
    return out;
}

/// eps_theta that knows the clean latent: returns exactly the noise that produced z_t from z0.
EpsFn oracle_for(const Tensor& z0, const NoiseSchedule& s) {
    return [z0, s](const nn::Var& z, std::size_t t, const ConditioningSet&) {
        Tensor e(z0.rows(), z0.cols());
        const double a = std::sqrt(s.alpha_bar(t)), b = std::sqrt(1.0 - s.alpha_bar(t));
        for (std::size_t i = 0; i < e.size(); ++i) e[i] = (z.value()[i] - a * z0[i]) / b;
        return nn::constant(e);
    };
}

}  // namespace

TEST(NoiseSchedule, LinearInvariants) {
    const auto s = NoiseSchedule::linear(100);
    ASSERT_EQ(s.steps(), 100u);
    for (std::size_t t = 0; t < s.steps(); ++t) {
        EXPECT_GT(s.beta(t), 0.0);
        EXPECT_LT(s.beta(t), 1.0);
        if (t > 0) {
            EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
        }
    }
    EXPECT_NEAR(s.alpha_bar(0), 1.0, 1e-3);
    EXPECT_LT(s.alpha_bar(99), 0.01);
    EXPECT_THROW(NoiseSchedule::from_betas({0.5, 1.0}), InputError);
}

TEST(AddNoise, ZeroNoiseScalesLatent) {
    Rng rng(1);
    const auto s = NoiseSchedule::linear(100);
    const Tensor z0 = random_tensor(4, 3, rng);
    const Tensor zt = add_noise(z0, 40, Tensor(4, 3), s);
    for (std::size_t i = 0; i < z0.size(); ++i) EXPECT_DOUBLE_EQ(zt[i], std::sqrt(s.alpha_bar(40)) * z0[i]);
}

TEST(AddNoise, RecoverZ0InvertsForEveryStep) {
    Rng rng(2);
    const auto s = NoiseSchedule::linear(100);
    for (std::size_t t = 0; t < s.steps(); ++t) {
        const Tensor z0 = random_tensor(3, 5, rng), eps = random_tensor(3, 5, rng);
        EXPECT_LT(nn::max_abs_diff(recover_z0(add_noise(z0, t, eps, s), t, eps, s), z0), 1e-10) << t;
    }
}

TEST(AddNoise, NearZeroStepKeepsLatent) {
    Rng rng(3);
    const auto s = NoiseSchedule::from_betas({1e-8, 0.01, 0.02});
    const Tensor z0 = random_tensor(4, 3, rng), eps = random_tensor(4, 3, rng);
    EXPECT_LT(nn::max_abs_diff(add_noise(z0, 0, eps, s), z0), 1e-3);
    EXPECT_THROW(add_noise(z0, 3, eps, s), InputError);
}

TEST(CfgCombine, Identities) {
    Rng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        const Tensor c = random_tensor(3, 4, rng, 10.0), u = random_tensor(3, 4, rng, 10.0);
        ASSERT_EQ(cfg_combine(c, u, 1.0), c);
        ASSERT_EQ(cfg_combine(c, u, 0.0), u);
        ASSERT_EQ(cfg_combine(c, c, rng.uniform(-5, 5)), c);
    }
    EXPECT_THROW(cfg_combine(Tensor(2, 2), Tensor(2, 3), 2.0), InputError);
    const Tensor g = cfg_combine(Tensor::row({2.0}), Tensor::row({1.0}), 3.0);
    EXPECT_DOUBLE_EQ(g[0], 4.0);
}

TEST(SampleWindow, WholeVideoWhenExact) {
    Rng rng(5);
    const auto w = sample_window(14, 14, rng);
    EXPECT_EQ(w.start, 0u);
    EXPECT_EQ(w.token_count, 28u);
    EXPECT_THROW(sample_window(13, 14, rng), InputError);
}

TEST(SampleWindow, UniformStarts) {
    Rng rng(6);
    std::vector<double> count(3, 0.0);
    for (int i = 0; i < 1000; ++i) {
        const auto w = sample_window(16, 14, rng);
        ASSERT_LE(w.start, 2u);
        ASSERT_EQ(w.token_count, 28u);
        ASSERT_EQ(w.token_begin, 2 * w.start);
        count[w.start] += 1.0;
    }
    for (double c : count) EXPECT_NEAR(c / 1000.0, 1.0 / 3.0, 0.05);
}

TEST(ConditionDropout, Extremes) {
    Rng rng(7);
    const DenoiserConfig cfg = small();
    const auto c = random_cond(cfg, 2, rng);
    const auto kept = condition_dropout(c, 0.0, rng);
    EXPECT_TRUE(kept.ref_present && kept.mot_present && kept.frames_present);
    const auto dropped = condition_dropout(c, 1.0, rng);
    EXPECT_FALSE(dropped.ref_present || dropped.mot_present || dropped.frames_present);
    EXPECT_THROW(condition_dropout(c, 1.5, rng), InputError);
}

TEST(ConditionDropout, RateMatchesProbability) {
    Rng rng(8);
    ConditioningSet c;
    double ref = 0, mot = 0, fr = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const auto d = condition_dropout(c, 0.05, rng);
        ref += !d.ref_present;
        mot += !d.mot_present;
        fr += !d.frames_present;
    }
    EXPECT_NEAR(ref / n, 0.05, 0.005);
    EXPECT_NEAR(mot / n, 0.05, 0.005);
    EXPECT_NEAR(fr / n, 0.05, 0.005);
}

TEST(PredictNoise, FrameEquivariantWithoutTemporalAttention) {
    Rng rng(9);
    const auto cfg = small(false);
    nn::ParamStore ps(1);
    VisualDenoiser den(ps, cfg);
    randomize_params(ps, 10);
    const std::size_t F = 5;
    const auto c = random_cond(cfg, F, rng);
    const Tensor z = random_tensor(F, cfg.latent_dim, rng);
    const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    auto pc = c;
    pc.c_mot = nn::constant(permute_rows(c.c_mot.value(), perm, 2));
    const Tensor base = den.predict(ps, nn::constant(z), 17, c).value();
    const Tensor moved = den.predict(ps, nn::constant(permute_rows(z, perm)), 17, pc).value();
    EXPECT_LT(nn::max_abs_diff(moved, permute_rows(base, perm)), 1e-12);
}

TEST(PredictNoise, TemporalAttentionMixesFrames) {
    Rng rng(11);
    const auto cfg = small(true);
    nn::ParamStore ps(2);
    VisualDenoiser den(ps, cfg);
    randomize_params(ps, 12);
    const std::size_t F = 5;
    const auto c = random_cond(cfg, F, rng);
    const Tensor z = random_tensor(F, cfg.latent_dim, rng);
    const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    auto pc = c;
    pc.c_mot = nn::constant(permute_rows(c.c_mot.value(), perm, 2));
    const Tensor base = den.predict(ps, nn::constant(z), 17, c).value();
    const Tensor moved = den.predict(ps, nn::constant(permute_rows(z, perm)), 17, pc).value();
    EXPECT_GT(nn::max_abs_diff(moved, permute_rows(base, perm)), 1e-6);
}

TEST(PredictNoise, ShapeErrors) {
    Rng rng(13);
    const auto cfg = small();
    nn::ParamStore ps(3);
    VisualDenoiser den(ps, cfg);
    auto c = random_cond(cfg, 4, rng);
    EXPECT_THROW(den.predict(ps, nn::constant(Tensor(3, cfg.latent_dim)), 0, c), InputError);  // c_mot covers 4 frames
    EXPECT_THROW(den.predict(ps, nn::constant(Tensor(4, cfg.latent_dim + 1)), 0, c), InputError);
    c.c_face = Tensor(1, 2);
    EXPECT_THROW(den.predict(ps, nn::constant(Tensor(4, cfg.latent_dim)), 0, c), InputError);
}

TEST(PredictNoise, NullConditionsRun) {
    Rng rng(14);
    const auto cfg = small();
    nn::ParamStore ps(3);
    VisualDenoiser den(ps, cfg);
    const auto c = random_cond(cfg, 4, rng).unconditional();
    const Tensor out = den.predict(ps, nn::constant(random_tensor(4, cfg.latent_dim, rng)), 3, c).value();
    EXPECT_EQ(out.rows(), 4u);
    EXPECT_TRUE(out.all_finite());
}

TEST(PredictNoise, GradientCheckWholeNetwork) {
    Rng rng(15);
    const auto cfg = small();
    nn::ParamStore ps(4);
    VisualDenoiser den(ps, cfg);
    randomize_params(ps, 16);
    const auto c = random_cond(cfg, 3, rng);
    const Tensor z = random_tensor(3, cfg.latent_dim, rng);
    auto inputs = nn::grad_check(
        [&](const std::vector<nn::Var>& v) {
            auto cc = c;
            cc.c_mot = v[1];
            return den.predict(ps, v[0], 9, cc);
        },
        {z, c.c_mot.value()});
    EXPECT_LT(inputs.max_rel_error, 1e-4) << inputs.worst;
    nn::GradCheckOptions opt;
    opt.max_coords = 4;
    auto params = nn::grad_check_params(ps, [&](nn::ParamStore& st) { return den.predict(st, nn::constant(z), 9, c); }, opt);
    EXPECT_LT(params.max_rel_error, 1e-4) << params.worst;
}

TEST(VisualLoss, OracleDenoiserGivesZero) {
    Rng data_rng(17);
    const auto s = NoiseSchedule::linear(50);
    std::vector<VisualExample> batch;
    for (int i = 0; i < 8; ++i) batch.push_back({random_tensor(4, 3, data_rng), {}});
    // Replays the loss's own draws: t first, then eps, per example.
    Rng rng(18), replay(18);
    std::vector<Tensor> eps_seq;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        replay.below(s.steps());
        Tensor e(4, 3);
        for (auto& v : e.values()) v = replay.normal();
        eps_seq.push_back(e);
    }
    std::size_t k = 0;
    const EpsFn oracle = [&](const nn::Var&, std::size_t, const ConditioningSet&) { return nn::constant(eps_seq[k++]); };
    EXPECT_EQ(visual_loss(batch, oracle, s, rng).value()[0], 0.0);
}

TEST(VisualLoss, ZeroPredictorMatchesLatentDimension) {
    Rng data_rng(19);
    const auto s = NoiseSchedule::linear(100);
    std::vector<VisualExample> batch;
    for (int i = 0; i < 10000; ++i) batch.push_back({random_tensor(1, 24, data_rng), {}});
    const EpsFn zero = [](const nn::Var& z, std::size_t, const ConditioningSet&) {
        return nn::constant(Tensor(z.rows(), z.cols()));
    };
    Rng rng(20);
    const double loss = visual_loss(batch, zero, s, rng).value()[0];
    EXPECT_NEAR(loss, 24.0, 0.05 * 24.0);
    Rng again(20);
    EXPECT_EQ(visual_loss(batch, zero, s, again).value()[0], loss);
}

TEST(SampleVideo, OracleRecoversPlantedLatent) {
    Rng rng(21);
    const auto cfg = small();
    const auto s = NoiseSchedule::linear(100);
    const Tensor z0 = random_tensor(6, cfg.latent_dim, rng);
    auto c = random_cond(cfg, 6, rng);
    for (Sampler sm : {Sampler::Ddpm, Sampler::Ddim}) {
        SampleOptions opt;
        opt.sampler = sm;
        opt.cfg_scale = 1.0;
        Rng srng(22);
        const Tensor out = sample_video(oracle_for(z0, s), c, 6, cfg, s, opt, srng);
        EXPECT_LT(nn::max_abs_diff(out, z0), 1e-6);
    }
}

TEST(SampleVideo, DeterministicAndScaleOneIsConditional) {
    Rng rng(23);
    const auto cfg = small();
    nn::ParamStore ps(5);
    VisualDenoiser den(ps, cfg);
    randomize_params(ps, 24, 0.2);
    const auto s = NoiseSchedule::linear(20);
    const auto c = random_cond(cfg, 5, rng);
    SampleOptions opt;
    opt.window = 3;  // exercises chunking and motion-frame hand-off
    Rng a(1), b(1);
    const Tensor va = sample_video(eps_fn(ps, den), c, 5, cfg, s, opt, a);
    EXPECT_EQ(va, sample_video(eps_fn(ps, den), c, 5, cfg, s, opt, b));
    EXPECT_TRUE(va.all_finite());

    // With scale 1 the unconditional branch must not influence the result at all.
    opt.cfg_scale = 1.0;
    const EpsFn real = eps_fn(ps, den);
    const EpsFn poisoned = [&](const nn::Var& z, std::size_t t, const ConditioningSet& cc) {
        if (!cc.mot_present) return nn::constant(Tensor(z.rows(), z.cols(), 1e6));
        return real(z, t, cc);
    };
    Rng c1(2), c2(2);
    EXPECT_EQ(sample_video(real, c, 5, cfg, s, opt, c1), sample_video(poisoned, c, 5, cfg, s, opt, c2));
}

TEST(SampleVideo, NonFiniteNamesStep) {
    const auto cfg = small();
    const auto s = NoiseSchedule::linear(10);
    Rng rng(25);
    const auto c = random_cond(cfg, 2, rng);
    const EpsFn bad = [](const nn::Var& z, std::size_t t, const ConditioningSet&) {
        return nn::constant(Tensor(z.rows(), z.cols(), t == 7 ? std::nan("") : 0.0));
    };
    SampleOptions opt;
    try {
        sample_video(bad, c, 2, cfg, s, opt, rng);
        FAIL() << "expected NumericalError";
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("step 7"), std::string::npos) << e.what();
    }
}

TEST(TrainVisual, MotionPhaseOnlyTouchesMotionPath) {
    data::CorpusConfig cc;
    cc.n_samples = 4;
    cc.frames = 16;
    const auto corpus = data::synth_corpus(3, cc);
    const data::SyntheticWorld world;
    nn::ParamStore ps(6);
    motion::MapperConfig mc;
    mc.width = 16;
    mc.heads = 2;
    mc.depth = 1;
    motion::MotionMapper mapper(ps, mc);
    VisualTrainConfig vc;
    vc.denoiser.width = 16;
    vc.denoiser.depth = 1;
    vc.base_steps = 2;
    vc.motion_steps = 3;
    vc.batch = 2;
    VisualDenoiser den(ps, vc.denoiser);

    nn::StepHooks stop;
    stop.stop_after = 2;
    train_visual(ps, mapper, den, corpus, world.codebook(), vc, 9, stop);
    ASSERT_EQ(ps.step, 2);
    std::map<std::string, Tensor> before;
    for (const auto& [n, p] : ps.all()) before[n] = p.value;
    train_visual(ps, mapper, den, corpus, world.codebook(), vc, 9);
    EXPECT_EQ(ps.step, 5);
    std::size_t changed = 0;
    for (const auto& [n, p] : ps.all()) {
        if (is_motion_param(n)) {
            changed += p.value != before[n];
        } else {
            EXPECT_EQ(p.value, before[n]) << n;
        }
    }
    EXPECT_GT(changed, 0u);
}
