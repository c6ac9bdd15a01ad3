// SPDX-License-Identifier: Apache-2.0
#pragma once

// Gaussian diffusion pieces that do not depend on the network: schedule, forward
// noising, guidance arithmetic, window sampling and condition dropout.

#include <cmath>
#include <vector>

#include "tavid/core/rng.hpp"
#include "tavid/nn/tensor.hpp"

namespace tavid::visual {

using nn::Tensor;

class NoiseSchedule {
public:
    NoiseSchedule() : NoiseSchedule(linear()) {}

    static NoiseSchedule from_betas(std::vector<double> betas) {
        require(!betas.empty(), "NoiseSchedule: no steps");
        NoiseSchedule s(0);
        double prod = 1.0;
        for (double b : betas) {
            require(b > 0.0 && b < 1.0, "NoiseSchedule: beta outside (0, 1)");
            prod *= 1.0 - b;
            s.alpha_bar_.push_back(prod);
        }
        s.beta_ = std::move(betas);
        return s;
    }

    static NoiseSchedule linear(std::size_t steps = 100, double beta_first = 1e-4, double beta_last = 0.1) {
        require(steps >= 1, "NoiseSchedule: no steps");
        std::vector<double> b(steps);
        for (std::size_t i = 0; i < steps; ++i)
            b[i] = steps == 1 ? beta_first
                              : beta_first + (beta_last - beta_first) * static_cast<double>(i) / double(steps - 1);
        return from_betas(std::move(b));
    }

    std::size_t steps() const { return beta_.size(); }
    double beta(std::size_t t) const { return beta_.at(t); }
    double alpha(std::size_t t) const { return 1.0 - beta_.at(t); }
    double alpha_bar(std::size_t t) const { return alpha_bar_.at(t); }
    /// alpha_bar one step earlier; 1 before the first step.
    double alpha_bar_prev(std::size_t t) const { return t == 0 ? 1.0 : alpha_bar_.at(t - 1); }

    void check_step(std::size_t t) const {
        if (t >= steps()) throw InputError("diffusion step " + std::to_string(t) + " outside [0, " +
                                           std::to_string(steps()) + ")");
    }

private:
    explicit NoiseSchedule(int) {}
    std::vector<double> beta_, alpha_bar_;
};

/// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps.
inline Tensor add_noise(const Tensor& z0, std::size_t t, const Tensor& eps, const NoiseSchedule& s) {
    s.check_step(t);
    require(z0.same_shape(eps), "add_noise: z0 and eps differ in shape");
    const double a = std::sqrt(s.alpha_bar(t)), b = std::sqrt(1.0 - s.alpha_bar(t));
    Tensor out(z0.rows(), z0.cols());
    for (std::size_t i = 0; i < z0.size(); ++i) out[i] = a * z0[i] + b * eps[i];
    return out;
}

/// Inverse of add_noise for known eps.
inline Tensor recover_z0(const Tensor& zt, std::size_t t, const Tensor& eps, const NoiseSchedule& s) {
    s.check_step(t);
    require(zt.same_shape(eps), "recover_z0: z_t and eps differ in shape");
    const double a = std::sqrt(s.alpha_bar(t)), b = std::sqrt(1.0 - s.alpha_bar(t));
    Tensor out(zt.rows(), zt.cols());
    for (std::size_t i = 0; i < zt.size(); ++i) out[i] = (zt[i] - b * eps[i]) / a;
    return out;
}

/// uncond + s (cond - uncond). This form is exact for s = 0 and for cond == uncond; s = 1
/// returns cond itself, which the rounding of uncond + (cond - uncond) would not.
inline Tensor cfg_combine(const Tensor& cond, const Tensor& uncond, double scale) {
    if (!cond.same_shape(uncond)) throw InputError("cfg_combine: shape mismatch " + cond.shape_str() + " vs " +
                                                   uncond.shape_str());
    if (scale == 1.0) return cond;
    Tensor out(cond.rows(), cond.cols());
    for (std::size_t i = 0; i < cond.size(); ++i) out[i] = uncond[i] + scale * (cond[i] - uncond[i]);
    return out;
}

struct Window {
    std::size_t start = 0;        ///< first video frame
    std::size_t frames = 0;
    std::size_t token_begin = 0;  ///< first aligned c_mot row
    std::size_t token_count = 0;
};

/// Uniformly placed window of `frames` consecutive frames in a video of `total` frames.
inline Window sample_window(std::size_t total, std::size_t frames, Rng& rng, std::size_t tokens_per_frame = 2) {
    require(frames >= 1, "sample_window: empty window");
    if (total < frames)
        throw InputError("sample_window: video has " + std::to_string(total) + " frames, window needs " +
                         std::to_string(frames));
    Window w;
    w.start = rng.below(total - frames + 1);
    w.frames = frames;
    w.token_begin = w.start * tokens_per_frame;
    w.token_count = frames * tokens_per_frame;
    return w;
}

}  // namespace tavid::visual
