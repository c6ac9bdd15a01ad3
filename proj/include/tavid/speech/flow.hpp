// SPDX-License-Identifier: Apache-2.0
#pragma once

// Flow matching with straight-line paths y_t = (1 - t) y0 + t y1, the regression loss on
// the vector field, and Euler integration from t = 0 to 1.

#include <cmath>
#include <functional>
#include <string>

#include "tavid/nn/layers.hpp"
#include "tavid/nn/loop.hpp"

namespace tavid::speech {

using nn::ParamStore;
using nn::Tensor;
using nn::Var;

/// Differentiable field, used for training; conditioning is bound by the caller.
using FieldVar = std::function<Var(const Var& y_t, double t)>;
/// Value-only field, used for sampling.
using FieldFn = std::function<Tensor(const Tensor& y_t, double t)>;

inline Tensor flow_interpolate(const Tensor& y0, const Tensor& y1, double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw InputError("flow_interpolate: t = " + std::to_string(t) + " outside [0, 1]");
    if (!y0.same_shape(y1))
        throw InputError("flow_interpolate: shapes differ " + y0.shape_str() + " vs " + y1.shape_str());
    Tensor out(y0.rows(), y0.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - t) * y0[i] + t * y1[i];
    return out;
}

/// ||(y1 - y0) - v(y_t, t)||^2 divided by the number of rows (frames).
inline Var flow_loss(const FieldVar& v, const Tensor& y0, const Tensor& y1, double t) {
    const Tensor yt = flow_interpolate(y0, y1, t);
    Tensor target(y1.rows(), y1.cols());
    for (std::size_t i = 0; i < target.size(); ++i) target[i] = y1[i] - y0[i];
    const Var pred = v(nn::constant(yt), t);
    if (!pred.value().same_shape(target))
        throw InputError("flow_loss: field returned " + pred.value().shape_str() + ", expected " + target.shape_str());
    return nn::scale(nn::sum_squares(nn::sub(pred, nn::constant(target))), 1.0 / static_cast<double>(y1.rows()));
}

/// Euler steps y += dt v(y, k dt), k = 0 .. steps-1.
inline Tensor ode_integrate(const FieldFn& v, Tensor y, std::size_t steps) {
    require(steps >= 1, "ode_integrate: steps must be at least 1");
    const double dt = 1.0 / static_cast<double>(steps);
    for (std::size_t k = 0; k < steps; ++k) {
        const Tensor d = v(y, static_cast<double>(k) * dt);
        if (!d.same_shape(y)) throw InputError("ode_integrate: field changed the state shape");
        for (std::size_t i = 0; i < y.size(); ++i) {
            y[i] += dt * d[i];
            if (!std::isfinite(y[i])) throw NumericalError("ode_integrate: non-finite state at step " + std::to_string(k));
        }
    }
    return y;
}

inline Tensor standard_normal(std::size_t rows, std::size_t cols, Rng& rng) {
    Tensor out(rows, cols);
    for (auto& v : out.values()) v = rng.normal();
    return out;
}

// ---------------------------------------------------------------------------
// One-dimensional toy: N(0, 1) -> N(mean, std^2), field network on (y, t).

struct FlowToyConfig {
    double target_mean = 2.0;
    double target_std = 0.5;
    std::size_t hidden = 64;
    std::int64_t steps = 2000;
    std::size_t batch = 256;
    double lr = 5e-3;
};

class FlowToy {
public:
    FlowToy(ParamStore& store, const FlowToyConfig& cfg)
        : fc1_(store, "flow.fc1", 2, cfg.hidden), fc2_(store, "flow.fc2", cfg.hidden, cfg.hidden),
          out_(store, "flow.out", cfg.hidden, 1) {}

    /// y is n x 1; t is shared by all rows.
    Var field(ParamStore& store, const Var& y, double t) const {
        return field_rows(store, nn::concat_cols({y, nn::constant(Tensor(y.rows(), 1, t))}));
    }

    /// Rows of (y, t) pairs, each with its own time.
    Var field_rows(ParamStore& store, const Var& yt) const {
        return out_(store, nn::silu(fc2_(store, nn::silu(fc1_(store, yt)))));
    }

private:
    nn::Linear fc1_, fc2_, out_;
};

/// Each row of a batch gets its own t, so the loss averages over rows of single-row paths.
inline void train_flow_toy(ParamStore& store, const FlowToy& model, const FlowToyConfig& cfg, std::uint64_t seed) {
    nn::AdamConfig adam;
    adam.lr = cfg.lr;
    auto step_fn = [&](std::int64_t, Rng& rng) {
        const std::size_t B = cfg.batch;
        Tensor yt(B, 1), target(B, 1), t(B, 1);
        for (std::size_t i = 0; i < B; ++i) {
            const double y0 = rng.normal(), y1 = cfg.target_mean + cfg.target_std * rng.normal();
            t[i] = rng.uniform();
            yt[i] = (1.0 - t[i]) * y0 + t[i] * y1;
            target[i] = y1 - y0;
        }
        Tensor in(B, 2);
        for (std::size_t i = 0; i < B; ++i) {
            in(i, 0) = yt[i];
            in(i, 1) = t[i];
        }
        const Var pred = model.field_rows(store, nn::constant(in));
        const Var loss = nn::scale(nn::sum_squares(nn::sub(pred, nn::constant(target))), 1.0 / static_cast<double>(B));
        nn::backward(loss);
        return loss.value()[0];
    };
    nn::run_steps(store, cfg.steps, step_fn, seed, "flow.step", adam, {}, {}, nn::cosine_schedule(cfg.lr, cfg.steps));
}

}  // namespace tavid::speech
