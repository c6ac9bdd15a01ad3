// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "tavid/data/script.hpp"
#include "tavid/data/world.hpp"

namespace tavid::data {

struct CorpusConfig {
    std::uint64_t world_seed = 2024;
    std::size_t n_samples = 64;
    std::size_t n_identities = 32;
    std::size_t frames = 24;  ///< video frames per sample; tokens and mel frames = 2x
    double overlap_prob = 0.1;
    double silence_prob = 0.1;
    std::size_t min_segment = 3;
    std::size_t max_segment = 10;
    int listener_lag = 4;  ///< frames between partner prosody and listener response

    void validate() const {
        require(n_identities >= 2, "CorpusConfig: need at least two identities");
        require(min_segment >= 1 && min_segment <= max_segment, "CorpusConfig: bad segment length range");
        require(frames >= 2 * min_segment, "CorpusConfig: frames too short for two segments");
        require(overlap_prob >= 0.0 && silence_prob >= 0.0 && overlap_prob + silence_prob < 1.0,
                "CorpusConfig: overlap_prob + silence_prob must lie in [0, 1)");
        require(listener_lag >= 0, "CorpusConfig: negative listener lag");
    }
};

struct Sample {
    int id = 0;
    DialogueScript script;
    TokenStreams tokens;
    Tensor motion1;  ///< frames x kMotionDim
    Tensor motion2;
    Tensor mel;  ///< tokens x kMelBins
    SyntheticIdentity identity1;
    SyntheticIdentity identity2;

    std::size_t frames() const { return motion1.rows(); }
    const Tensor& motion(int role) const { return role == 1 ? motion1 : motion2; }
    const SyntheticIdentity& identity(int role) const { return role == 1 ? identity1 : identity2; }

    bool operator==(const Sample&) const = default;
};

/// Per-frame activity implied by a script's turns.
inline std::vector<ActiveState> schedule_from_script(const DialogueScript& s, std::size_t frames) {
    std::vector<bool> a1(frames, false), a2(frames, false);
    for (const auto& t : s.turns)
        for (int f = t.start_frame; f < t.end_frame && f < static_cast<int>(frames); ++f)
            (t.speaker == 1 ? a1 : a2)[static_cast<std::size_t>(f)] = true;
    std::vector<ActiveState> out(frames);
    for (std::size_t f = 0; f < frames; ++f) out[f] = make_state(a1[f], a2[f]);
    return out;
}

namespace detail {

inline constexpr std::size_t kMinActiveFrames = 3;

inline std::vector<ActiveState> draw_schedule(const CorpusConfig& cfg, Rng& rng) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
        std::vector<ActiveState> sched;
        sched.reserve(cfg.frames);
        int last_single = rng.bernoulli(0.5) ? 1 : 2;
        std::size_t seen1 = 0, seen2 = 0;
        while (sched.size() < cfg.frames) {
            const auto len = cfg.min_segment + rng.below(cfg.max_segment - cfg.min_segment + 1);
            const double r = rng.uniform();
            ActiveState st;
            if (r < cfg.overlap_prob) {
                st = ActiveState::Both;
            } else if (r < cfg.overlap_prob + cfg.silence_prob) {
                st = ActiveState::None;
            } else {
                last_single = 3 - last_single;
                st = last_single == 1 ? ActiveState::S1 : ActiveState::S2;
            }
            for (std::size_t k = 0; k < len && sched.size() < cfg.frames; ++k) {
                sched.push_back(st);
                seen1 += is_active(st, 1);
                seen2 += is_active(st, 2);
            }
        }
        if (seen1 >= kMinActiveFrames && seen2 >= kMinActiveFrames) return sched;
    }
    throw InputError("synth_corpus: could not draw a schedule in which both speakers talk");
}

/// Words of 2-6 letters separated by single spaces, ending in punctuation; exactly `len` chars.
inline std::string draw_text(std::size_t len, Rng& rng) {
    static constexpr std::string_view letters = "abcdefghijklmnopqrstuvwxyz";
    static constexpr std::string_view punct = ",.?!";
    std::string s;
    std::size_t word = 0, target = 2 + rng.below(5);
    while (s.size() + 1 < len) {
        if (word >= target && s.size() + 2 < len) {
            s.push_back(' ');
            word = 0;
            target = 2 + rng.below(5);
        } else {
            s.push_back(letters[rng.below(letters.size())]);
            ++word;
        }
    }
    s.push_back(punct[rng.below(punct.size())]);
    return s;
}

}  // namespace detail

/// Generates one sample; a pure function of (world, cfg, seed, id).
inline Sample synth_sample(const SyntheticWorld& world, const CorpusConfig& cfg, std::uint64_t seed, int id) {
    Rng rng(derive_seed(seed, "sample", static_cast<std::uint64_t>(id)));
    Sample s;
    s.id = id;
    const auto n_ids = std::min(cfg.n_identities, world.identities().size());
    const auto i1 = static_cast<int>(rng.below(n_ids));
    auto i2 = static_cast<int>(rng.below(n_ids - 1));
    if (i2 >= i1) ++i2;
    s.identity1 = world.identity(i1);
    s.identity2 = world.identity(i2);

    const std::size_t F = cfg.frames, T = F * kTokensPerFrame;
    const auto sched = detail::draw_schedule(cfg, rng);

    // Turns: maximal runs of activity per speaker.
    for (std::size_t f = 0; f < F; ++f)
        for (int role = 1; role <= 2; ++role) {
            if (!is_active(sched[f], role) || (f > 0 && is_active(sched[f - 1], role))) continue;
            std::size_t e = f;
            while (e < F && is_active(sched[e], role)) ++e;
            s.script.turns.push_back({role, "", static_cast<int>(f), static_cast<int>(e)});
        }
    std::stable_sort(s.script.turns.begin(), s.script.turns.end(),
                     [](const Turn& a, const Turn& b) { return a.start_frame < b.start_frame; });

    // Tokens: one character per token, with a smooth per-turn prosody contour.
    s.tokens.s1.assign(T, kSilenceToken);
    s.tokens.s2.assign(T, kSilenceToken);
    for (auto& turn : s.script.turns) {
        const std::size_t n = kTokensPerFrame * static_cast<std::size_t>(turn.end_frame - turn.start_frame);
        turn.text = detail::draw_text(n, rng);
        const double period = rng.uniform(8.0, 24.0), phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double offset = rng.uniform(-0.3, 0.3);
        Tensor feats(n, kTokenDim);
        for (std::size_t k = 0; k < n; ++k) {
            double p = offset + 0.7 * std::sin(2.0 * std::numbers::pi * static_cast<double>(k) / period + phase) +
                       0.15 * rng.normal();
            p = std::clamp(p, -1.0, 1.0);
            Tensor f = world.token_feature(char_class(turn.text[k]), p);
            for (std::size_t j = 0; j < kTokenDim; ++j) feats(k, j) = f[j] + 0.05 * rng.normal();
        }
        const auto toks = quantize(feats, world.codebook());
        auto& stream = turn.speaker == 1 ? s.tokens.s1 : s.tokens.s2;
        std::copy(toks.begin(), toks.end(), stream.begin() + kTokensPerFrame * static_cast<std::size_t>(turn.start_frame));
    }

    // Per-frame prosody and linguistic summary of each stream.
    const Codebook& cb = world.codebook();
    auto frame_prosody = [&](const std::vector<int>& st, std::size_t f) {
        double p = 0.0;
        for (std::size_t k = 0; k < kTokensPerFrame; ++k) {
            const int t = st[f * kTokensPerFrame + k];
            if (t != kSilenceToken) p += cb.prosody(t);
        }
        return p / static_cast<double>(kTokensPerFrame);
    };

    for (int role = 1; role <= 2; ++role) {
        const auto& own = s.tokens.stream(role);
        const auto& other = s.tokens.stream(3 - role);
        const Tensor& u = world.latent(s.identity(role).id);
        Tensor m(F, kMotionDim);
        std::size_t listen_start = 0;
        for (std::size_t f = 0; f < F; ++f) {
            const bool speaking = is_active(sched[f], role);
            if (!speaking && (f == 0 || is_active(sched[f - 1], role))) listen_start = f;
            double ling[kLatentDim] = {};
            for (std::size_t k = 0; k < kTokensPerFrame; ++k) {
                const int t = own[f * kTokensPerFrame + k];
                if (t == kSilenceToken) continue;
                for (std::size_t j = 0; j < kLatentDim; ++j)
                    ling[j] += cb.centroids(static_cast<std::size_t>(t), j) / kTokensPerFrame;
            }
            const double p_own = frame_prosody(own, f);
            const int lagged = static_cast<int>(f) - cfg.listener_lag;
            const double p_partner = lagged >= 0 ? frame_prosody(other, static_cast<std::size_t>(lagged)) : 0.0;
            for (std::size_t d = 0; d < kMotionDim; ++d) {
                double v = 0.0;
                for (std::size_t k = 0; k < kLatentDim; ++k)
                    v += world.motion_identity()(d, k) * u[k] + world.ling_to_motion()(d, k) * ling[k];
                if (speaking) {
                    v += p_own * world.speak_direction()[d];
                } else {
                    v += 0.5 * p_partner * world.listen_direction()[d];
                    // Nods restart whenever the role stops talking.
                    if (d == 0) v += 0.3 * std::sin(2.0 * std::numbers::pi * static_cast<double>(f - listen_start) / 12.0);
                }
                m(f, d) = v + 0.02 * rng.normal();
            }
        }
        (role == 1 ? s.motion1 : s.motion2) = std::move(m);
    }

    s.mel = Tensor(T, kMelBins);
    for (std::size_t t = 0; t < T; ++t)
        for (int role = 1; role <= 2; ++role) {
            const int tok = s.tokens.stream(role)[t];
            if (tok != kSilenceToken) world.render_mel(tok, s.identity(role).speaker, s.mel.row_span(t));
        }
    return s;
}

inline std::vector<Sample> synth_corpus(std::uint64_t seed, const CorpusConfig& cfg) {
    cfg.validate();
    const SyntheticWorld world(cfg.world_seed, cfg.n_identities);
    std::vector<Sample> out;
    out.reserve(cfg.n_samples);
    for (std::size_t i = 0; i < cfg.n_samples; ++i) out.push_back(synth_sample(world, cfg, seed, static_cast<int>(i)));
    return out;
}

}  // namespace tavid::data
