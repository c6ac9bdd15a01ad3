// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "tavid/nn/checkpoint.hpp"
#include "tavid/nn/grad_check.hpp"
#include "tavid/nn/layers.hpp"

using namespace tavid;
using namespace tavid::nn;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, std::uint64_t seed, double s = 1.0) {
    Rng rng(seed);
    Tensor t(r, c);
    for (auto& v : t.values()) v = s * rng.normal();
    return t;
}

// Dense softmax(QK^T s)V with plain loops; shares nothing with the autograd path.
Tensor attention_oracle(const Tensor& q, const Tensor& k, const Tensor& v, double s) {
    Tensor out(q.rows(), v.cols());
    for (std::size_t i = 0; i < q.rows(); ++i) {
        std::vector<double> logit(k.rows());
        double mx = -1e300;
        for (std::size_t j = 0; j < k.rows(); ++j) {
            double d = 0.0;
            for (std::size_t c = 0; c < q.cols(); ++c) d += q(i, c) * k(j, c);
            logit[j] = d * s;
            mx = std::max(mx, logit[j]);
        }
        double z = 0.0;
        for (auto& l : logit) z += std::exp(l - mx);
        for (std::size_t j = 0; j < k.rows(); ++j) {
            const double p = std::exp(logit[j] - mx) / z;
            for (std::size_t c = 0; c < v.cols(); ++c) out(i, c) += p * v(j, c);
        }
    }
    return out;
}

constexpr double kGradTol = 1e-4;

}  // namespace

TEST(Linear, IdentityWeightsReproduceInput) {
    Tensor x = random_tensor(3, 4, 1);
    Tensor eye(4, 4);
    for (std::size_t i = 0; i < 4; ++i) eye(i, i) = 1.0;
    Var y = linear(constant(x), constant(eye), constant(Tensor(1, 4)));
    EXPECT_EQ(y.value(), x);
}

TEST(Linear, ShapeMismatchIsInputError) {
    EXPECT_THROW(linear(constant(Tensor(2, 3)), constant(Tensor(4, 2)), constant(Tensor(1, 2))), InputError);
}

TEST(LayerNorm, ConstantRowIsZeroBeforeAffineAndBiasAfter) {
    Var x = constant(Tensor(2, 5, 3.7));
    Var n = layer_norm(x);
    for (double v : n.value().values()) EXPECT_EQ(v, 0.0);
    Tensor bias = Tensor::row({1, 2, 3, 4, 5});
    Var y = layer_norm(x, constant(Tensor(1, 5, 2.0)), constant(bias));
    for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(y.value()(1, j), bias[j]);
}

TEST(LayerNorm, NormalizesRows) {
    Var n = layer_norm(constant(random_tensor(4, 16, 2, 3.0)));
    for (std::size_t i = 0; i < 4; ++i) {
        double m = 0, v = 0;
        for (double x : n.value().row_span(i)) m += x;
        m /= 16;
        for (double x : n.value().row_span(i)) v += (x - m) * (x - m);
        v /= 16;
        EXPECT_NEAR(m, 0.0, 1e-12);
        EXPECT_NEAR(v, 1.0, 1e-5);
    }
}

TEST(EmbedLookup, ReturnsTableRows) {
    Tensor table = random_tensor(5, 3, 3);
    const int idx[] = {2};
    Var r = embed_lookup(idx, constant(table));
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(r.value()(0, j), table(2, j));
    const int bad[] = {5};
    EXPECT_THROW(embed_lookup(bad, constant(table)), InputError);
}

TEST(Attention, SingleKeyReturnsItsValue) {
    Tensor v = Tensor::from_rows({{0.3, -1.2, 4.0}});
    Var out = attention(constant(random_tensor(6, 2, 4)), constant(random_tensor(1, 2, 5)), constant(v), 0.7);
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(out.value()(i, j), v(0, j));
}

TEST(Attention, IdenticalKeysAverageValues) {
    Tensor k = Tensor::from_rows({{1.0, 2.0}, {1.0, 2.0}});
    Tensor v = Tensor::from_rows({{1.0, 5.0}, {3.0, -1.0}});
    Var out = attention(constant(random_tensor(3, 2, 6)), constant(k), constant(v), 1.0);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_NEAR(out.value()(i, 0), 2.0, 1e-15);
        EXPECT_NEAR(out.value()(i, 1), 2.0, 1e-15);
    }
}

TEST(Attention, MatchesDenseOracle) {
    Tensor q = random_tensor(4, 8, 7), k = random_tensor(4, 8, 8), v = random_tensor(4, 8, 9);
    const double s = 1.0 / std::sqrt(8.0);
    Var out = attention(constant(q), constant(k), constant(v), s);
    EXPECT_LT(max_abs_diff(out.value(), attention_oracle(q, k, v, s)), 1e-12);
}

TEST(Attention, EmptyKeysRejected) {
    EXPECT_THROW(attention(constant(Tensor(2, 3)), constant(Tensor(0, 3)), constant(Tensor(0, 3)), 1.0), InputError);
}

TEST(Attention, RowsAreConvexCombinationsOfValues) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Tensor v = random_tensor(7, 5, 100 + seed);
        Var out = attention(constant(random_tensor(3, 4, seed, 3.0)), constant(random_tensor(7, 4, 50 + seed, 3.0)),
                            constant(v), 1.0);
        for (std::size_t c = 0; c < 5; ++c) {
            double lo = 1e300, hi = -1e300;
            for (std::size_t j = 0; j < 7; ++j) {
                lo = std::min(lo, v(j, c));
                hi = std::max(hi, v(j, c));
            }
            for (std::size_t i = 0; i < 3; ++i) {
                EXPECT_GE(out.value()(i, c), lo - 1e-12);
                EXPECT_LE(out.value()(i, c), hi + 1e-12);
            }
        }
    }
}

TEST(CrossEntropy, UniformLogitsGiveLogV) {
    Var l = cross_entropy(constant(Tensor(1, 4, 0.25)), 2);
    EXPECT_NEAR(l.value()[0], std::log(4.0), 1e-15);
    EXPECT_NEAR(std::log(4.0), 1.386294, 1e-6);
}

TEST(CrossEntropy, DominantTargetApproachesZero) {
    Tensor logits = Tensor::row({0.0, 0.0, 60.0});
    EXPECT_LT(cross_entropy(constant(logits), 2).value()[0], 1e-20);
}

TEST(CrossEntropy, MatchesLogSumExpOracle) {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor logits = random_tensor(1, 9, 200 + trial, 4.0);
        const int target = static_cast<int>(rng.below(9));
        double mx = -1e300;
        for (double v : logits.values()) mx = std::max(mx, v);
        double z = 0.0;
        for (double v : logits.values()) z += std::exp(v - mx);
        const double oracle = mx + std::log(z) - logits[static_cast<std::size_t>(target)];
        const double got = cross_entropy(constant(logits), target).value()[0];
        EXPECT_NEAR(got, oracle, 1e-12);
        EXPECT_GE(got, 0.0);
    }
    EXPECT_THROW(cross_entropy(constant(Tensor(1, 3)), 3), InputError);
}

TEST(Dsln, ZeroInitReducesToLayerNorm) {
    ParamStore ps(3);
    Dsln d(ps, "dsln", 6, 4);
    Tensor x = random_tensor(5, 6, 12);
    Var y = d(ps, constant(x), constant(random_tensor(1, 4, 13)));
    EXPECT_EQ(y.value(), layer_norm(constant(x)).value());
}

TEST(Dsln, ConstantInputGivesShift) {
    ParamStore ps(3);
    Dsln d(ps, "dsln", 3, 2);
    ps.at("dsln.shift.b").value = Tensor::row({0.5, 0.5, 0.5});
    ps.at("dsln.gain.w").value = random_tensor(2, 3, 14);
    Var y = d(ps, constant(Tensor(4, 3, -2.0)), constant(random_tensor(1, 2, 15)));
    for (double v : y.value().values()) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(Dsln, SpeakerSensitiveAfterOneStep) {
    ParamStore ps(3);
    Dsln d(ps, "dsln", 6, 4);
    Tensor x = random_tensor(5, 6, 16);
    Tensor e1 = random_tensor(1, 4, 17), e2 = random_tensor(1, 4, 18);
    // one training step toward an arbitrary target makes g and h nonzero
    Var loss = sum_squares(sub(d(ps, constant(x), constant(e1)), constant(random_tensor(5, 6, 19))));
    backward(loss);
    adam_step(ps, AdamConfig{.lr = 1e-2});
    const Tensor y1 = d(ps, constant(x), constant(e1)).value();
    const Tensor y2 = d(ps, constant(x), constant(e2)).value();
    EXPECT_GT(max_abs_diff(y1, y2), 1e-6);
}

TEST(GradCheck, LinearLayer) {
    auto r = grad_check([](const std::vector<Var>& v) { return linear(v[0], v[1], v[2]); },
                        {random_tensor(4, 3, 20), random_tensor(3, 2, 21), random_tensor(1, 2, 22)});
    EXPECT_LT(r.max_rel_error, kGradTol) << r.worst;
}

TEST(GradCheck, LayerNormWithAffine) {
    auto r = grad_check([](const std::vector<Var>& v) { return layer_norm(v[0], v[1], v[2]); },
                        {random_tensor(4, 7, 23), random_tensor(1, 7, 24), random_tensor(1, 7, 25)});
    EXPECT_LT(r.max_rel_error, kGradTol) << r.worst;
}

TEST(GradCheck, AttentionWithMask) {
    const Tensor mask = causal_mask(5);
    auto r = grad_check(
        [&](const std::vector<Var>& v) { return attention(v[0], v[1], v[2], 0.4, &mask); },
        {random_tensor(5, 4, 26), random_tensor(5, 4, 27), random_tensor(5, 3, 28)});
    EXPECT_LT(r.max_rel_error, kGradTol) << r.worst;
}

TEST(GradCheck, ElementwiseAndBroadcastOps) {
    auto r = grad_check(
        [](const std::vector<Var>& v) {
            Var a = mul_row(silu(v[0]), tanh(v[1]));
            Var b = add_row(sigmoid(a), v[1]);
            Var c = sub(mul(b, v[0]), scale(v[0], 0.3));
            Var d = add_col(c, v[2]);
            return concat_rows({avg_pool_rows(d, 2), repeat_rows(mean_rows(d), 3), broadcast_rows(v[1], 1)});
        },
        {random_tensor(4, 3, 29), random_tensor(1, 3, 30), random_tensor(4, 1, 31)});
    EXPECT_LT(r.max_rel_error, kGradTol) << r.worst;
}

TEST(GradCheck, ShapeOps) {
    auto r = grad_check(
        [](const std::vector<Var>& v) {
            Var t = transpose(v[0]);
            Var s = concat_cols({slice_cols(v[0], 1, 2), slice_rows(t, 0, 4)});
            return matmul_t(s, v[1]);
        },
        {random_tensor(4, 4, 32), random_tensor(2, 6, 33)});
    EXPECT_LT(r.max_rel_error, kGradTol) << r.worst;
}

TEST(GradCheck, LossOps) {
    const int targets[] = {0, 3, 1};
    Tensor bt = Tensor::from_rows({{1.0}, {0.0}, {1.0}});
    auto r = grad_check(
        [&](const std::vector<Var>& v) {
            return add(mean_all(cross_entropy_rows(v[0], targets)),
                       add(sum_all(bce_logits(v[1], bt)), sum_squares(v[1])));
        },
        {random_tensor(3, 4, 34), random_tensor(3, 1, 35)});
    EXPECT_LT(r.max_rel_error, kGradTol) << r.worst;
}

TEST(GradCheck, EmbedAndConvOps) {
    const int idx[] = {1, 0, 1, 2};
    const MapShape s{2, 3, 4, 2};
    auto r = grad_check(
        [&](const std::vector<Var>& v) {
            Var conv = matmul(v[1], im2col(v[0], s));
            Var pooled = global_avg_pool(conv, {3, 3, 4, 2});
            return add(sum_squares(pooled), sum_all(embed_lookup(idx, v[2])));
        },
        {random_tensor(2, 24, 36), random_tensor(3, 18, 37), random_tensor(3, 2, 38)});
    EXPECT_LT(r.max_rel_error, kGradTol) << r.worst;
}

TEST(GradCheck, DslnAndMultiHeadAttention) {
    ParamStore ps(9);
    Dsln d(ps, "d", 8, 3);
    MultiHeadAttention mha(ps, "mha", 8, 2);
    for (auto& [_, p] : ps.all())
        for (auto& v : p.value.values()) v += 0.1;  // move off the zero init
    Tensor x = random_tensor(5, 8, 39), e = random_tensor(1, 3, 40);
    auto r = grad_check_params(ps, [&](ParamStore& s) {
        Var h = d(s, constant(x), constant(e));
        return mha(s, h, h);
    });
    EXPECT_LT(r.max_rel_error, kGradTol) << r.worst;
}

TEST(GradCheck, FlagsAWrongGradientEvenAtLargeScale) {
    // The traced (leaf) path carries a 1% error in its derivative; the finite differences
    // see the true function. Large |L| must not let the scaled floor hide it.
    for (double mag : {1.0, 1e4}) {
        auto r = grad_check(
            [mag](const std::vector<Var>& v) {
                return v[0].requires_grad() ? scale(sum_squares(v[0]), 1.01 * mag)
                                            : scale(sum_squares(v[0]), mag);
            },
            {random_tensor(3, 2, 41)});
        EXPECT_GT(r.max_rel_error, 1e-3) << mag;
    }
}

TEST(Params, SeededInitIsReproducible) {
    ParamStore a(77), b(77), c(78);
    for (auto* s : {&a, &b, &c}) {
        s->create("w1", 4, 5);
        s->create("w2", 3, 3, Init::Normal, 0.1);
    }
    EXPECT_EQ(a.at("w1").value, b.at("w1").value);
    EXPECT_EQ(a.at("w2").value, b.at("w2").value);
    EXPECT_NE(a.at("w1").value, c.at("w1").value);
    const double bound = 1.0 / 2.0;
    for (double v : a.at("w1").value.values()) EXPECT_LE(std::abs(v), bound);
    EXPECT_THROW(a.create("w1", 2, 2), InputError);
}

TEST(Checkpoint, RoundTripReproducesForwardBitExactly) {
    ParamStore ps(5);
    MultiHeadAttention mha(ps, "mha", 8, 4);
    Tensor x = random_tensor(6, 8, 41);
    const Tensor before = mha(ps, constant(x), constant(x)).value();
    auto path = std::filesystem::temp_directory_path() / "tavid_ckpt_test.bin";
    auto ck = checkpoint_from(ps, true);
    ck.meta = "rng=abc";
    save_checkpoint(path, ck);

    ParamStore other(999);
    MultiHeadAttention mha2(other, "mha", 8, 4);
    auto loaded = load_checkpoint(path);
    EXPECT_EQ(loaded.meta, "rng=abc");
    EXPECT_EQ(loaded.seed, 5u);
    restore_params(other, loaded);
    EXPECT_EQ(mha2(other, constant(x), constant(x)).value(), before);
    std::filesystem::remove(path);
}

TEST(Checkpoint, TruncatedFileIsFormatError) {
    ParamStore ps(5);
    ps.create("w", 3, 3);
    auto path = std::filesystem::temp_directory_path() / "tavid_ckpt_trunc.bin";
    save_checkpoint(path, checkpoint_from(ps));
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 20);
    EXPECT_THROW(load_checkpoint(path), FormatError);
    std::filesystem::remove(path);
}

TEST(Adam, FreezeFilterLeavesOtherParamsUntouched) {
    ParamStore ps(1);
    ps.create("a", 2, 2);
    ps.create("b", 2, 2);
    const Tensor b0 = ps.at("b").value;
    Var loss = add(sum_squares(ps.var("a")), sum_squares(ps.var("b")));
    backward(loss);
    adam_step(ps, {}, [](const std::string& n) { return n == "a"; });
    EXPECT_EQ(ps.at("b").value, b0);
    EXPECT_EQ(ps.at("b").grad, Tensor(2, 2));
}
