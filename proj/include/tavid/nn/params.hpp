// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "tavid/core/rng.hpp"
#include "tavid/nn/autograd.hpp"

namespace tavid::nn {

enum class Init { Uniform, Zeros, Ones, Normal };

struct Param {
    Tensor value;
    Tensor grad;
    Tensor adam_m;
    Tensor adam_v;
};

/// Named parameters with seeded initialization. Names are unique; shapes fixed once created.
class ParamStore {
public:
    explicit ParamStore(std::uint64_t seed = 0) : seed_(seed), rng_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }

    /// Creates the parameter, or returns the existing one after checking its shape.
    /// Uniform draws from +-1/sqrt(fan_in) with fan_in = rows.
    Param& create(const std::string& name, std::size_t rows, std::size_t cols, Init init = Init::Uniform,
                  double scale = 1.0) {
        if (auto it = params_.find(name); it != params_.end()) {
            require(it->second.value.rows() == rows && it->second.value.cols() == cols,
                    "ParamStore: parameter '" + name + "' re-created with a different shape");
            return it->second;
        }
        Param p;
        p.value = Tensor(rows, cols);
        switch (init) {
            case Init::Uniform: {
                const double bound = scale / std::sqrt(static_cast<double>(rows));
                for (auto& v : p.value.values()) v = rng_.uniform(-bound, bound);
                break;
            }
            case Init::Normal:
                for (auto& v : p.value.values()) v = scale * rng_.normal();
                break;
            case Init::Ones:
                p.value.fill(1.0);
                break;
            case Init::Zeros:
                break;
        }
        p.grad = Tensor(rows, cols);
        p.adam_m = Tensor(rows, cols);
        p.adam_v = Tensor(rows, cols);
        return params_.emplace(name, std::move(p)).first->second;
    }

    bool contains(const std::string& name) const { return params_.count(name) != 0; }

    Param& at(const std::string& name) {
        auto it = params_.find(name);
        require(it != params_.end(), "ParamStore: unknown parameter '" + name + "'");
        return it->second;
    }
    const Param& at(const std::string& name) const {
        auto it = params_.find(name);
        require(it != params_.end(), "ParamStore: unknown parameter '" + name + "'");
        return it->second;
    }

    /// Differentiable leaf bound to the parameter's gradient accumulator.
    Var var(const std::string& name) {
        Param& p = at(name);
        return leaf(p.value, &p.grad);
    }

    /// Same value, no gradient.
    Var frozen(const std::string& name) const { return constant(at(name).value); }

    void zero_grad() {
        for (auto& [_, p] : params_) p.grad.fill(0.0);
    }

    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& [_, p] : params_) n += p.value.size();
        return n;
    }

    std::map<std::string, Param>& all() { return params_; }
    const std::map<std::string, Param>& all() const { return params_; }

    std::int64_t step = 0;

private:
    std::uint64_t seed_;
    Rng rng_;
    std::map<std::string, Param> params_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 1.0;  ///< global gradient-norm clip; <= 0 disables
};

using ParamFilter = std::function<bool(const std::string&)>;

inline double grad_norm(const ParamStore& store, const ParamFilter& trainable = {}) {
    double s = 0.0;
    for (const auto& [name, p] : store.all()) {
        if (trainable && !trainable(name)) continue;
        for (double g : p.grad.values()) s += g * g;
    }
    return std::sqrt(s);
}

/// One Adam update over the parameters accepted by `trainable` (all when empty).
/// Gradients are cleared afterwards.
inline void adam_step(ParamStore& store, const AdamConfig& cfg, const ParamFilter& trainable = {}) {
    store.step += 1;
    const double norm = grad_norm(store, trainable);
    if (!std::isfinite(norm)) throw NumericalError("adam_step: non-finite gradient norm at step " +
                                                   std::to_string(store.step));
    const double clip = (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) ? cfg.clip_norm / norm : 1.0;
    const double t = static_cast<double>(store.step);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (auto& [name, p] : store.all()) {
        if (trainable && !trainable(name)) continue;
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double g = p.grad[i] * clip;
            p.adam_m[i] = cfg.beta1 * p.adam_m[i] + (1.0 - cfg.beta1) * g;
            p.adam_v[i] = cfg.beta2 * p.adam_v[i] + (1.0 - cfg.beta2) * g * g;
            p.value[i] -= cfg.lr * (p.adam_m[i] / bc1) / (std::sqrt(p.adam_v[i] / bc2) + cfg.eps);
        }
    }
    store.zero_grad();
}

}  // namespace tavid::nn
