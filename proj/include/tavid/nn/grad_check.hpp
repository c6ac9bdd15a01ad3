// SPDX-License-Identifier: Apache-2.0
#pragma once

// Finite-difference verification of analytic gradients.
//
// Relative error per coordinate is |a - n| / max(|a|, |n|, floor * max(1, |L|)), where a is
// the analytic and n the central-difference derivative and L the checked scalar at the
// base point. The floor keeps coordinates whose true derivative is zero (e.g. attention
// key biases) from reporting central-difference roundoff, which grows with |L|.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tavid/core/rng.hpp"
#include "tavid/nn/params.hpp"

namespace tavid::nn {

struct GradCheckOptions {
    double eps = 1e-5;
    double floor = 1e-6;  ///< scaled by max(1, |L|)
    std::size_t max_coords = 0;  ///< per tensor; 0 checks every coordinate
    std::uint64_t seed = 1234;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst;  ///< which input/parameter and coordinate
    std::size_t checked = 0;
};

namespace detail {

inline double rel_error(double a, double n, double floor) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

/// Reduces any output to a scalar via a fixed random projection.
inline Var project(const Var& out, const Tensor& direction) {
    if (out.value().size() == 1) return out;
    return sum_all(mul(out, constant(direction)));
}

inline Tensor direction_for(const Tensor& shape_of, std::uint64_t seed) {
    Rng rng(seed);
    Tensor d(shape_of.rows(), shape_of.cols());
    for (auto& v : d.values()) v = rng.normal();
    return d;
}

inline std::vector<std::size_t> pick_coords(std::size_t n, std::size_t max_coords, Rng& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    if (max_coords == 0 || max_coords >= n) return idx;
    for (std::size_t i = 0; i < max_coords; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
    idx.resize(max_coords);
    return idx;
}

}  // namespace detail

using GradFn = std::function<Var(const std::vector<Var>&)>;

/// Checks d op / d inputs. Non-scalar outputs are contracted with a seeded random tensor.
inline GradCheckResult grad_check(const GradFn& op, const std::vector<Tensor>& inputs,
                                  const GradCheckOptions& opt = {}) {
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(leaf(t));
    Var out = op(vars);
    const Tensor dir = detail::direction_for(out.value(), opt.seed);
    Var loss = detail::project(out, dir);
    backward(loss);
    const double floor = opt.floor * std::max(1.0, std::abs(loss.value()[0]));

    auto eval = [&](const std::vector<Tensor>& xs) {
        std::vector<Var> cs;
        for (const auto& t : xs) cs.push_back(constant(t));
        return detail::project(op(cs), dir).value()[0];
    };

    GradCheckResult res;
    Rng rng(opt.seed + 1);
    std::vector<Tensor> work = inputs;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const Tensor analytic = vars[k].grad().size() ? vars[k].grad() : Tensor(inputs[k].rows(), inputs[k].cols());
        if (!analytic.all_finite()) throw NumericalError("grad_check: non-finite analytic gradient for input " +
                                                         std::to_string(k));
        for (std::size_t i : detail::pick_coords(inputs[k].size(), opt.max_coords, rng)) {
            const double x0 = work[k][i];
            work[k][i] = x0 + opt.eps;
            const double fp = eval(work);
            work[k][i] = x0 - opt.eps;
            const double fm = eval(work);
            work[k][i] = x0;
            const double num = (fp - fm) / (2.0 * opt.eps);
            if (!std::isfinite(num)) throw NumericalError("grad_check: non-finite numeric gradient");
            const double e = detail::rel_error(analytic[i], num, floor);
            ++res.checked;
            if (e > res.max_rel_error) {
                res.max_rel_error = e;
                res.worst = "input " + std::to_string(k) + "[" + std::to_string(i) + "]";
            }
        }
    }
    return res;
}

/// Checks d loss / d parameters for a model whose loss is a function of its ParamStore.
inline GradCheckResult grad_check_params(ParamStore& store, const std::function<Var(ParamStore&)>& loss_fn,
                                         const GradCheckOptions& opt = {}) {
    store.zero_grad();
    Var out = loss_fn(store);
    const Tensor dir = detail::direction_for(out.value(), opt.seed);
    const Var loss = detail::project(out, dir);
    backward(loss);
    const double floor = opt.floor * std::max(1.0, std::abs(loss.value()[0]));
    std::map<std::string, Tensor> analytic;
    for (auto& [name, p] : store.all()) analytic[name] = p.grad;
    store.zero_grad();

    GradCheckResult res;
    Rng rng(opt.seed + 1);
    for (auto& [name, p] : store.all()) {
        if (!analytic[name].all_finite()) throw NumericalError("grad_check: non-finite gradient for " + name);
        for (std::size_t i : detail::pick_coords(p.value.size(), opt.max_coords, rng)) {
            const double x0 = p.value[i];
            p.value[i] = x0 + opt.eps;
            const double fp = detail::project(loss_fn(store), dir).value()[0];
            p.value[i] = x0 - opt.eps;
            const double fm = detail::project(loss_fn(store), dir).value()[0];
            p.value[i] = x0;
            const double num = (fp - fm) / (2.0 * opt.eps);
            if (!std::isfinite(num)) throw NumericalError("grad_check: non-finite numeric gradient for " + name);
            const double e = detail::rel_error(analytic[name][i], num, floor);
            ++res.checked;
            if (e > res.max_rel_error) {
                res.max_rel_error = e;
                res.worst = name + "[" + std::to_string(i) + "]";
            }
        }
    }
    store.zero_grad();
    return res;
}

}  // namespace tavid::nn
