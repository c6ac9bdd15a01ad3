// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "tavid/data/corpus_io.hpp"

using namespace tavid;
using namespace tavid::data;

namespace {

Codebook two_point_codebook() {
    Codebook cb;
    cb.centroids = Tensor::from_rows({{0.0, 0.0}, {1.0, 1.0}});
    cb.prosody_begin = 1;
    cb.prosody_end = 2;
    return cb;
}

double pearson_plain(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i] / n;
        my += y[i] / n;
    }
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

std::filesystem::path tmp_file(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

}  // namespace

TEST(Quantize, NearestCentroid) {
    const auto cb = two_point_codebook();
    EXPECT_EQ(quantize(Tensor::row({0.1, 0.2}), cb), std::vector<int>{0});
    EXPECT_EQ(quantize(Tensor::row({1.0, 1.0}), cb), std::vector<int>{1});
}

TEST(Quantize, TieGoesToLowestIndex) {
    EXPECT_EQ(quantize(Tensor::row({0.5, 0.5}), two_point_codebook()), std::vector<int>{0});
}

TEST(Quantize, DimensionMismatchIsInputError) {
    EXPECT_THROW(quantize(Tensor::row({0.5, 0.5, 0.1}), two_point_codebook()), InputError);
}

TEST(Dequantize, LooksUpRows) {
    const auto cb = two_point_codebook();
    EXPECT_EQ(dequantize({0}, cb), Tensor::from_rows({{0.0, 0.0}}));
    EXPECT_EQ(dequantize({1, 1, 0}, cb), Tensor::from_rows({{1, 1}, {1, 1}, {0, 0}}));
    EXPECT_THROW(dequantize({2}, cb), InputError);
}

TEST(Dequantize, QuantizeInvertsOnCentroids) {
    const SyntheticWorld world;
    std::vector<int> all(static_cast<std::size_t>(world.codebook().size()));
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    EXPECT_EQ(quantize(dequantize(all, world.codebook()), world.codebook()), all);
}

TEST(Codebook, CentroidsPairwiseDistinctAndProsodyInRange) {
    const SyntheticWorld world;
    const auto& c = world.codebook().centroids;
    ASSERT_EQ(c.rows(), 256u);
    ASSERT_EQ(c.cols(), 16u);
    for (std::size_t a = 0; a < c.rows(); ++a)
        for (std::size_t b = a + 1; b < c.rows(); ++b) {
            double d = 0;
            for (std::size_t j = 0; j < c.cols(); ++j) d += (c(a, j) - c(b, j)) * (c(a, j) - c(b, j));
            ASSERT_GT(d, 1e-6) << a << " vs " << b;
        }
    EXPECT_LT(world.codebook().prosody_end, c.cols() + 1);
    EXPECT_EQ(world.codebook().prosody(speech_token(3, 7)), 1.0);
}

TEST(PadSingleRole, FillsOtherRoleWithSilence) {
    auto a = pad_single_role({5, 7}, 1, 0);
    EXPECT_EQ(a.s1, (std::vector<int>{5, 7}));
    EXPECT_EQ(a.s2, (std::vector<int>{0, 0}));
    auto b = pad_single_role({3}, 2, 0);
    EXPECT_EQ(b.s1, std::vector<int>{0});
    EXPECT_EQ(b.s2, std::vector<int>{3});
    EXPECT_THROW(pad_single_role({}, 1, 0), InputError);
    EXPECT_THROW(pad_single_role({1}, 3, 0), InputError);
}

TEST(PadSingleRole, AlwaysEqualLengths) {
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<int> idx(1 + rng.below(40));
        for (auto& v : idx) v = static_cast<int>(rng.below(256));
        const auto ts = pad_single_role(idx, 1 + static_cast<int>(rng.below(2)), 0);
        EXPECT_EQ(ts.s1.size(), ts.s2.size());
    }
}

TEST(ActiveSpeakerMask, Examples) {
    TokenStreams ts;
    ts.s1 = {5, 0};
    ts.s2 = {0, 9};
    EXPECT_EQ(active_speaker_mask(ts), (std::vector<ActiveState>{ActiveState::S1, ActiveState::S2}));
    ts.s1 = {5};
    ts.s2 = {9};
    EXPECT_EQ(active_speaker_mask(ts), std::vector<ActiveState>{ActiveState::Both});
    ts.s1 = {0};
    ts.s2 = {0};
    EXPECT_EQ(active_speaker_mask(ts), std::vector<ActiveState>{ActiveState::None});
}

TEST(DialogueScript, RejectsInvalidTurns) {
    DialogueScript s;
    s.turns = {{1, "hi", 0, 5}, {2, "yo", 3, 8}};
    EXPECT_NO_THROW(s.validate());
    s.turns = {{1, "hi", 0, 5}, {1, "yo", 3, 8}};
    EXPECT_THROW(s.validate(), InputError);
    s.turns = {{3, "hi", 0, 5}};
    EXPECT_THROW(s.validate(), InputError);
    s.turns = {{1, "hi", 5, 5}};
    EXPECT_THROW(s.validate(), InputError);
    s.turns = {{1, "hi", 5, 6}, {2, "x", 2, 4}};
    EXPECT_THROW(s.validate(), InputError);
}

TEST(SynthCorpus, SameSeedIsBitIdentical) {
    CorpusConfig cfg;
    cfg.n_samples = 6;
    EXPECT_EQ(synth_corpus(42, cfg), synth_corpus(42, cfg));
    EXPECT_NE(synth_corpus(42, cfg), synth_corpus(43, cfg));
}

TEST(SynthCorpus, MaskMatchesTurnSchedule) {
    CorpusConfig cfg;
    cfg.n_samples = 40;
    for (const auto& s : synth_corpus(7, cfg)) {
        s.script.validate();
        s.tokens.validate();
        const auto sched = schedule_from_script(s.script, s.frames());
        const auto mask = active_speaker_mask(s.tokens);
        ASSERT_EQ(mask.size(), 2 * sched.size());
        for (std::size_t t = 0; t < mask.size(); ++t) ASSERT_EQ(mask[t], sched[t / 2]) << "sample " << s.id;
        EXPECT_EQ(s.mel.rows(), s.tokens.length());
        EXPECT_EQ(s.motion1.rows() * 2, s.tokens.length());
        EXPECT_NE(s.identity1.id, s.identity2.id);
    }
}

TEST(SynthCorpus, TextHasOneCharacterPerToken) {
    CorpusConfig cfg;
    cfg.n_samples = 10;
    for (const auto& s : synth_corpus(8, cfg))
        for (const auto& t : s.script.turns) {
            EXPECT_EQ(t.text.size(), 2u * static_cast<std::size_t>(t.end_frame - t.start_frame));
            for (char c : t.text) EXPECT_GE(char_class(c), 0);
        }
}

TEST(SynthCorpus, OverlapFractionMatchesProbability) {
    CorpusConfig cfg;
    cfg.n_samples = 1;
    cfg.frames = 10000;
    for (double p : {0.1, 0.3}) {
        cfg.overlap_prob = p;
        const auto s = synth_corpus(11, cfg).at(0);
        const auto sched = schedule_from_script(s.script, s.frames());
        double both = 0;
        for (auto st : sched) both += st == ActiveState::Both;
        EXPECT_NEAR(both / static_cast<double>(sched.size()), p, 0.05);
    }
}

TEST(SynthCorpus, SpeakingMotionTracksProsody) {
    CorpusConfig cfg;
    cfg.n_samples = 30;
    const SyntheticWorld world(cfg.world_seed, cfg.n_identities);
    for (const auto& s : synth_corpus(9, cfg)) {
        const auto sched = schedule_from_script(s.script, s.frames());
        for (int role = 1; role <= 2; ++role) {
            std::vector<double> mouth, prosody;
            for (std::size_t f = 0; f < s.frames(); ++f) {
                if (!is_active(sched[f], role)) continue;
                const auto& st = s.tokens.stream(role);
                prosody.push_back(0.5 * (world.codebook().prosody(st[2 * f]) + world.codebook().prosody(st[2 * f + 1])));
                mouth.push_back(s.motion(role)(f, kMouthDim));
            }
            ASSERT_GE(mouth.size(), 2u);
            EXPECT_GE(pearson_plain(mouth, prosody), 0.5) << "sample " << s.id << " role " << role;
        }
    }
}

TEST(SynthCorpus, InvalidConfigRejected) {
    CorpusConfig cfg;
    cfg.overlap_prob = 0.6;
    cfg.silence_prob = 0.5;
    EXPECT_THROW(synth_corpus(1, cfg), InputError);
    cfg = {};
    cfg.n_identities = 1;
    EXPECT_THROW(synth_corpus(1, cfg), InputError);
}

TEST(CorpusIo, RoundTripIsExact) {
    CorpusConfig cfg;
    cfg.n_samples = 5;
    const auto corpus = synth_corpus(21, cfg);
    const auto path = tmp_file("tavid_corpus_rt.jsonl");
    save_corpus(corpus, path);
    EXPECT_EQ(load_corpus(path), corpus);
    std::filesystem::remove(path);
}

TEST(CorpusIo, EmptyCorpusRoundTrips) {
    const auto path = tmp_file("tavid_corpus_empty.jsonl");
    save_corpus({}, path);
    EXPECT_TRUE(load_corpus(path).empty());
    std::filesystem::remove(path);
}

TEST(CorpusIo, TruncatedFileIsFormatError) {
    CorpusConfig cfg;
    cfg.n_samples = 3;
    const auto path = tmp_file("tavid_corpus_trunc.jsonl");
    save_corpus(synth_corpus(22, cfg), path);
    const auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size / 2);
    try {
        load_corpus(path);
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_GE(e.line(), 2u);
    }
    // Truncation exactly at a record boundary is caught by the header count.
    save_corpus(synth_corpus(22, cfg), path);
    std::ifstream in(path);
    std::string l1, l2;
    std::getline(in, l1);
    std::getline(in, l2);
    in.close();
    std::ofstream(path, std::ios::trunc) << l1 << '\n' << l2 << '\n';
    EXPECT_THROW(load_corpus(path), FormatError);
    std::filesystem::remove(path);
}
