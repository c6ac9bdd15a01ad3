// SPDX-License-Identifier: Apache-2.0
#pragma once

// Two-phase visual training on the synthetic corpus.
//
// Phase 1 fits the backbone (everything outside the motion path) with c_mot and motion
// frames replaced by their nulls; it stands in for the pretrained portrait animator.
// Phase 2 freezes that backbone and updates only the motion mapper, motion attention and
// temporal attention.

#include <vector>

#include "tavid/data/corpus.hpp"
#include "tavid/motion/train.hpp"
#include "tavid/nn/loop.hpp"
#include "tavid/visual/denoiser.hpp"

namespace tavid::visual {

struct VisualTrainConfig {
    DenoiserConfig denoiser;
    std::size_t window = 14;           ///< frames per training window
    std::int64_t base_steps = 300;     ///< phase 1
    std::int64_t motion_steps = 300;   ///< phase 2
    std::size_t batch = 4;
    double lr = 1e-3;
    double cond_dropout = 0.05;
    std::size_t diffusion_steps = 100;
    bool prosody = true;
};

/// Conditioning for one role of a sample over a window. `c_mot` holds every token row of
/// the sample; the window's rows are sliced out.
inline ConditioningSet window_conditioning(const data::Sample& s, int role, const Window& w, const Var& c_mot,
                                           const DenoiserConfig& cfg) {
    ConditioningSet c;
    c.c_ref = s.identity(role).ref;
    c.c_face = s.identity(role).face;
    if (c_mot) {
        c.c_mot = nn::slice_rows(c_mot, w.token_begin, w.token_count);
    } else {
        c.mot_present = false;
    }
    const std::size_t k = std::min(cfg.motion_frames, w.start);
    c.motion_frames = Tensor(k, cfg.latent_dim);
    const Tensor& m = s.motion(role);
    for (std::size_t r = 0; r < k; ++r)
        for (std::size_t j = 0; j < cfg.latent_dim; ++j) c.motion_frames(r, j) = m(w.start - k + r, j);
    c.frames_present = k > 0;
    return c;
}

inline Tensor window_latent(const data::Sample& s, int role, const Window& w) {
    return nn::slice_rows(nn::constant(s.motion(role)), w.start, w.frames).value();
}

/// c_mot for `role` as the first stream of the mapper.
inline Var motion_features(ParamStore& store, const motion::MotionMapper& mapper, const data::Sample& s, int role,
                           const data::Codebook& cb, bool prosody) {
    return mapper.forward(store, nn::constant(motion::stream_features(s.tokens.stream(role), cb, prosody)),
                          nn::constant(motion::stream_features(s.tokens.stream(3 - role), cb, prosody)));
}

inline bool in_motion_phase(std::int64_t step, const VisualTrainConfig& cfg) { return step >= cfg.base_steps; }

/// Trains in `store`, which must already hold the mapper and denoiser parameters.
inline void train_visual(ParamStore& store, const motion::MotionMapper& mapper, const VisualDenoiser& den,
                         const std::vector<data::Sample>& corpus, const data::Codebook& cb,
                         const VisualTrainConfig& cfg, std::uint64_t seed, const nn::StepHooks& hooks = {}) {
    if (corpus.empty()) throw InputError("train_visual: empty corpus");
    const NoiseSchedule sched = NoiseSchedule::linear(cfg.diffusion_steps);
    nn::AdamConfig adam;
    adam.lr = cfg.lr;
    const auto total = cfg.base_steps + cfg.motion_steps;

    auto step_fn = [&](std::int64_t step, Rng& rng) {
        const bool motion_phase = in_motion_phase(step, cfg);
        std::vector<VisualExample> batch;
        for (std::size_t b = 0; b < cfg.batch; ++b) {
            const auto& s = corpus[rng.below(corpus.size())];
            const int role = 1 + static_cast<int>(rng.below(2));
            const Window w = sample_window(s.frames(), cfg.window, rng, cfg.denoiser.tokens_per_frame);
            const Var c_mot = motion_phase ? motion_features(store, mapper, s, role, cb, cfg.prosody) : Var();
            ConditioningSet c = window_conditioning(s, role, w, c_mot, cfg.denoiser);
            if (!motion_phase) c.frames_present = false;
            batch.push_back({window_latent(s, role, w), condition_dropout(c, cfg.cond_dropout, rng)});
        }
        const Var loss = visual_loss(batch, eps_fn(store, den), sched, rng);
        nn::backward(loss);
        return loss.value()[0];
    };

    // Phases differ in their trainable set, so run them as two loops over one step counter.
    if (store.step < cfg.base_steps)
        nn::run_steps(store, cfg.base_steps, step_fn, seed, "visual.step", adam,
                      [](const std::string& n) { return !is_motion_param(n); }, hooks);
    if (hooks.stop_after >= 0 && store.step >= hooks.stop_after) return;
    nn::run_steps(store, total, step_fn, seed, "visual.step", adam, is_motion_param, hooks);
}

}  // namespace tavid::visual
