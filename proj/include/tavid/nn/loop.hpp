// SPDX-License-Identifier: Apache-2.0
#pragma once

// Step-indexed training loop. Each step draws its randomness from a generator seeded by
// (seed, step), so a run restored from a checkpoint at step k continues exactly as the
// uninterrupted run would: parameters, Adam moments and the step counter are the whole state.

#include <cstdint>
#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>

#include "tavid/nn/params.hpp"

namespace tavid::nn {

struct StepHooks {
    std::function<void(std::int64_t step, double loss)> on_step;
    std::function<void(std::int64_t step)> on_checkpoint;
    std::int64_t checkpoint_every = 0;  ///< 0 disables periodic checkpoints
    std::int64_t stop_after = -1;       ///< stop once store.step reaches this (simulated interruption)
};

/// Learning rate as a function of the step; empty means the constant AdamConfig::lr.
using LrSchedule = std::function<double(std::int64_t step)>;

/// Cosine decay from `lr` at step 0 to `lr * floor` at `total`.
inline LrSchedule cosine_schedule(double lr, std::int64_t total, double floor = 0.05) {
    return [=](std::int64_t step) {
        const double x = total > 0 ? std::min(1.0, static_cast<double>(step) / static_cast<double>(total)) : 1.0;
        return lr * (floor + (1.0 - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * x)));
    };
}

/// Runs steps store.step .. total-1. `step_fn` accumulates gradients and returns the loss.
inline void run_steps(ParamStore& store, std::int64_t total, const std::function<double(std::int64_t, Rng&)>& step_fn,
                      std::uint64_t seed, std::string_view stream, AdamConfig adam,
                      const ParamFilter& trainable = {}, const StepHooks& hooks = {}, const LrSchedule& lr_at = {}) {
    while (store.step < total) {
        if (hooks.stop_after >= 0 && store.step >= hooks.stop_after) return;
        const std::int64_t step = store.step;
        Rng rng(derive_seed(seed, stream, static_cast<std::uint64_t>(step)));
        const double loss = step_fn(step, rng);
        if (!std::isfinite(loss)) throw NumericalError("non-finite loss at step " + std::to_string(step));
        if (lr_at) adam.lr = lr_at(step);
        adam_step(store, adam, trainable);
        if (hooks.on_step) hooks.on_step(step, loss);
        if (hooks.on_checkpoint && hooks.checkpoint_every > 0 && store.step % hooks.checkpoint_every == 0)
            hooks.on_checkpoint(store.step);
    }
}

}  // namespace tavid::nn
