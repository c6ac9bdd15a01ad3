// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "support/helpers.hpp"
#include "tavid/nn/grad_check.hpp"
#include "tavid/speaker/eval.hpp"

using namespace tavid;
using namespace tavid::speaker;
using test::random_tensor;

namespace {

SpeakerMapperConfig tiny_mapper() {
    SpeakerMapperConfig c;
    c.channels = 4;
    c.hidden = 8;
    c.res_blocks = 1;
    return c;
}

std::pair<Tensor, Tensor> random_inputs(std::size_t B, Rng& rng) {
    return {random_tensor(B, data::kFaceDim, rng), random_tensor(data::kRefChannels, B * 64, rng)};
}

}  // namespace

TEST(SpeakerMapper, OutputShape) {
    nn::ParamStore ps(1);
    const SpeakerMapper m(ps, SpeakerMapperConfig{});
    Rng rng(2);
    const auto [f, r] = random_inputs(3, rng);
    const Tensor out = m.forward(ps, f, r).value();
    EXPECT_EQ(out.rows(), 3u);
    EXPECT_EQ(out.cols(), data::kSpeakerDim);
}

TEST(SpeakerMapper, GradientMatchesFiniteDifferences) {
    nn::ParamStore ps(3);
    const SpeakerMapper m(ps, tiny_mapper());
    test::randomize_params(ps, 4);
    Rng rng(5);
    const auto [f, r] = random_inputs(2, rng);
    const Tensor target = random_tensor(2, data::kSpeakerDim, rng);
    nn::GradCheckOptions opt;
    opt.max_coords = 8;
    const auto res = nn::grad_check_params(ps, [&](nn::ParamStore& st) { return speaker_loss(m.forward(st, f, r), target); }, opt);
    EXPECT_LT(res.max_rel_error, 1e-4) << res.worst;
}

TEST(SpeakerMapper, DisabledInputsAreIgnored) {
    Rng rng(6);
    const auto [f, r] = random_inputs(2, rng);
    const auto [f2, r2] = random_inputs(2, rng);
    {
        auto cfg = tiny_mapper();
        cfg.use_ref = false;
        nn::ParamStore ps(7);
        const SpeakerMapper m(ps, cfg);
        test::randomize_params(ps, 8);
        EXPECT_EQ(m.forward(ps, f, r).value(), m.forward(ps, f, r2).value());
        EXPECT_NE(m.forward(ps, f, r).value(), m.forward(ps, f2, r).value());
    }
    {
        auto cfg = tiny_mapper();
        cfg.use_face = false;
        nn::ParamStore ps(7);
        const SpeakerMapper m(ps, cfg);
        test::randomize_params(ps, 8);
        EXPECT_EQ(m.forward(ps, f, r).value(), m.forward(ps, f2, r).value());
        EXPECT_NE(m.forward(ps, f, r).value(), m.forward(ps, f, r2).value());
    }
}

TEST(SpeakerMapper, BatchRowsAreIndependent) {
    nn::ParamStore ps(9);
    const SpeakerMapper m(ps, tiny_mapper());
    test::randomize_params(ps, 10);
    Rng rng(11);
    const auto [f, r] = random_inputs(3, rng);
    const Tensor batched = m.forward(ps, f, r).value();
    for (std::size_t b = 0; b < 3; ++b) {
        Tensor fb(1, data::kFaceDim), rb(data::kRefChannels, 64);
        for (std::size_t j = 0; j < data::kFaceDim; ++j) fb[j] = f(b, j);
        for (std::size_t c = 0; c < data::kRefChannels; ++c)
            for (std::size_t p = 0; p < 64; ++p) rb(c, p) = r(c, b * 64 + p);
        const Tensor single = m.map_speaker(ps, fb, rb).e;
        for (std::size_t j = 0; j < data::kSpeakerDim; ++j) EXPECT_NEAR(single[j], batched(b, j), 1e-12);
    }
}

TEST(SpeakerMapper, ShapeErrors) {
    nn::ParamStore ps(12);
    const SpeakerMapper m(ps, tiny_mapper());
    EXPECT_THROW(m.forward(ps, Tensor(1, 31), Tensor(data::kRefChannels, 64)), InputError);
    EXPECT_THROW(m.forward(ps, Tensor(1, data::kFaceDim), Tensor(data::kRefChannels, 63)), InputError);
    EXPECT_THROW(m.forward(ps, Tensor(2, data::kFaceDim), Tensor(data::kRefChannels, 64)), InputError);
}

TEST(SpeakerLoss, MatchesSumOfSquares) {
    Rng rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor p = random_tensor(4, 16, rng), t = random_tensor(4, 16, rng);
        double oracle = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) oracle += (t[i] - p[i]) * (t[i] - p[i]);
        EXPECT_NEAR(speaker_loss(nn::constant(p), t).value()[0], oracle, 1e-12);
    }
}

TEST(SpeakerLoss, ZeroOnlyWhenEqual) {
    Rng rng(14);
    const Tensor p = random_tensor(1, 16, rng);
    EXPECT_EQ(speaker_loss(nn::constant(p), p).value()[0], 0.0);
    Tensor q = p;
    q[5] += 1e-6;
    EXPECT_GT(speaker_loss(nn::constant(p), q).value()[0], 0.0);
    EXPECT_THROW(speaker_loss(nn::constant(p), Tensor(1, 15)), InputError);
}

TEST(Views, NoiselessViewIsIdentity) {
    const data::SyntheticWorld world(2024, 4);
    Rng rng(15);
    const auto& id = world.identities()[2];
    const IdentityView v = observe(id, 0.0, rng);
    EXPECT_EQ(v.face, id.face);
    EXPECT_EQ(v.ref, id.ref);
    const auto [faces, refs] = stack_views({observe(world.identities()[0], 0.0, rng), v});
    EXPECT_EQ(faces(1, 3), id.face[3]);
    EXPECT_EQ(refs(2, 64 + 10), id.ref(2, 10));
}

TEST(Retrieval, GroundTruthMapperIsPerfect) {
    Rng rng(16);
    std::vector<Tensor> gallery;
    for (int k = 0; k < 32; ++k) gallery.push_back(random_tensor(1, 16, rng));
    EXPECT_EQ(retrieval_eval(gallery, gallery).accuracy, 1.0);
    EXPECT_EQ(retrieval_eval(gallery, gallery, Distance::Cosine).accuracy, 1.0);
}

TEST(Retrieval, ConstantMapperIsChance) {
    Rng rng(17);
    std::vector<Tensor> gallery;
    for (int k = 0; k < 32; ++k) gallery.push_back(random_tensor(1, 16, rng));
    const std::vector<Tensor> constant(32, random_tensor(1, 16, rng));
    EXPECT_DOUBLE_EQ(retrieval_eval(constant, gallery).accuracy, 1.0 / 32.0);
}

TEST(Retrieval, TiesGoToLowestIndex) {
    const std::vector<Tensor> gallery{Tensor::from_rows({{1.0, 0.0}}), Tensor::from_rows({{-1.0, 0.0}})};
    const auto r = retrieval_eval({Tensor::from_rows({{0.0, 0.0}})}, {1}, gallery);
    EXPECT_EQ(r.rows[0].nearest, 0);
    EXPECT_FALSE(r.rows[0].correct);
}

TEST(Retrieval, Errors) {
    const std::vector<Tensor> one{Tensor(1, 4)};
    EXPECT_THROW(retrieval_eval(one, one), InputError);
    const std::vector<Tensor> two{Tensor(1, 4), Tensor(1, 4)};
    EXPECT_THROW(retrieval_eval(two, {0}, two), InputError);
}

TEST(Retrieval, PermutationPValue) {
    Rng rng(18);
    std::vector<Tensor> gallery;
    for (int k = 0; k < 32; ++k) gallery.push_back(random_tensor(1, 16, rng));
    const auto perfect = retrieval_eval(gallery, gallery);
    EXPECT_DOUBLE_EQ(permutation_p_value(perfect, 200, 1), 1.0 / 201.0);
    const std::vector<Tensor> constant(32, random_tensor(1, 16, rng));
    EXPECT_GT(permutation_p_value(retrieval_eval(constant, gallery), 200, 1), 0.5);
}

TEST(Retrieval, Csv) {
    const std::vector<Tensor> gallery{Tensor::from_rows({{1.0, 0.0}}), Tensor::from_rows({{-1.0, 0.0}})};
    const std::vector<Tensor> queries{Tensor::from_rows({{0.9, 0.0}}), Tensor::from_rows({{0.8, 0.0}})};
    EXPECT_EQ(retrieval_csv(retrieval_eval(queries, gallery)), "identity,predicted_nearest,correct\n0,0,1\n1,0,0\n");
}

TEST(Ablation, InputSwitches) {
    const SpeakerMapperConfig base;
    EXPECT_TRUE(ablate_inputs(base, InputVariant::Full).use_ref);
    EXPECT_FALSE(ablate_inputs(base, InputVariant::DropRef).use_ref);
    EXPECT_TRUE(ablate_inputs(base, InputVariant::DropRef).use_face);
    EXPECT_FALSE(ablate_inputs(base, InputVariant::DropFace).use_face);
    EXPECT_FALSE(ablate_inputs(base, InputVariant::DropBoth).use_face || ablate_inputs(base, InputVariant::DropBoth).use_ref);
}

TEST(Training, ShortRunIsDeterministicAndLearns) {
    const data::SyntheticWorld world(2024, 8);
    SpeakerTrainConfig cfg;
    cfg.mapper = tiny_mapper();
    cfg.steps = 150;
    cfg.batch = 16;
    cfg.lr = 1e-2;
    auto run = [&] {
        nn::ParamStore ps(derive_seed(3, "speaker.init"));
        const SpeakerMapper m(ps, cfg.mapper);
        std::vector<double> losses;
        nn::StepHooks hooks;
        hooks.on_step = [&](std::int64_t, double l) { losses.push_back(l); };
        train_speaker(ps, m, world.identities(), cfg, 3, hooks);
        return losses;
    };
    const auto a = run(), b = run();
    EXPECT_EQ(a, b);
    ASSERT_EQ(a.size(), 150u);
    EXPECT_LT(a.back(), 0.5 * a.front());
}
