// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tavid/nn/params.hpp"

namespace tavid::test {

/// Overwrites every parameter with N(0, scale^2) draws so zero-initialized modulation
/// paths become active ("generic weights").
inline void randomize_params(nn::ParamStore& store, std::uint64_t seed, double scale = 0.3) {
    Rng rng(seed);
    for (auto& [_, p] : store.all())
        for (auto& v : p.value.values()) v = scale * rng.normal();
}

inline nn::Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
    nn::Tensor t(r, c);
    for (auto& v : t.values()) v = scale * rng.normal();
    return t;
}

}  // namespace tavid::test
