// SPDX-License-Identifier: Apache-2.0
#pragma once

// Supervised motion regression used to compare mapper strategies before the mapper is
// plugged into the visual denoiser. Every sample contributes two examples: (s1, s2) ->
// motion1 and the swapped (s2, s1) -> motion2, so the target always belongs to the
// first stream. A linear head maps frame-pooled c_mot to the motion track.

#include <algorithm>
#include <cmath>
#include <vector>

#include "tavid/data/corpus.hpp"
#include "tavid/motion/mapper.hpp"

namespace tavid::motion {

struct MapperTrainConfig {
    MapperConfig mapper;
    std::size_t epochs = 30;
    std::size_t batch = 8;
    double lr = 2e-3;
    double val_fraction = 0.25;
    bool prosody = true;  ///< false zeroes the prosody channel of the token features
};

/// Token-stream features for the mapper: centroid lookup, optionally prosody-free.
inline Tensor stream_features(const std::vector<int>& stream, const data::Codebook& cb, bool prosody = true) {
    return prosody ? data::dequantize(stream, cb) : data::dequantize_without_prosody(stream, cb);
}

class MotionRegressor {
public:
    MotionRegressor() = default;
    MotionRegressor(ParamStore& store, const MapperConfig& cfg, const std::string& prefix = "mapper")
        : mapper_(store, cfg, prefix), head_(store, prefix + ".motion_head", cfg.motion_dim, data::kMotionDim) {}

    const MotionMapper& mapper() const { return mapper_; }

    /// Predicted motion for the first stream, one row per video frame.
    Var predict(ParamStore& store, const Tensor& own, const Tensor& partner) const {
        const Var c = mapper_.forward(store, nn::constant(own), nn::constant(partner));
        return head_(store, nn::avg_pool_rows(c, data::kTokensPerFrame));
    }

private:
    MotionMapper mapper_;
    nn::Linear head_;
};

struct MotionExample {
    Tensor own, partner, target;
};

inline std::vector<MotionExample> motion_examples(const std::vector<data::Sample>& samples, const data::Codebook& cb,
                                                  bool prosody) {
    std::vector<MotionExample> out;
    out.reserve(2 * samples.size());
    for (const auto& s : samples) {
        const Tensor f1 = stream_features(s.tokens.s1, cb, prosody);
        const Tensor f2 = stream_features(s.tokens.s2, cb, prosody);
        out.push_back({f1, f2, s.motion1});
        out.push_back({f2, f1, s.motion2});
    }
    return out;
}

/// Lowest MSE any swap-invariant predictor can reach: it must emit one track for both
/// roles of a sample, and the best such track is the mean of the two targets.
inline double symmetric_predictor_floor(const std::vector<data::Sample>& samples) {
    double sse = 0.0, n = 0.0;
    for (const auto& s : samples) {
        for (std::size_t i = 0; i < s.motion1.size(); ++i) {
            const double d = s.motion1[i] - s.motion2[i];
            sse += d * d / 2.0;
        }
        n += 2.0 * static_cast<double>(s.motion1.size());
    }
    require(n > 0, "symmetric_predictor_floor: empty sample set");
    return sse / n;
}

inline double motion_mse(ParamStore& store, const MotionRegressor& model, const std::vector<MotionExample>& ex) {
    require(!ex.empty(), "motion_mse: no examples");
    double sse = 0.0, n = 0.0;
    for (const auto& e : ex) {
        const Tensor p = model.predict(store, e.own, e.partner).value();
        for (std::size_t i = 0; i < p.size(); ++i) sse += (p[i] - e.target[i]) * (p[i] - e.target[i]);
        n += static_cast<double>(p.size());
    }
    return sse / n;
}

struct MapperTrainResult {
    ParamStore store;
    MotionRegressor model;
    std::vector<double> train_loss;  ///< mean training MSE per epoch
    std::vector<double> val_mse;     ///< validation MSE after each epoch
    double symmetric_floor = 0.0;    ///< on the validation split
};

/// Splits off the last val_fraction of samples (at least one) for validation.
inline std::size_t mapper_train_count(std::size_t n, double val_fraction) {
    const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(val_fraction * double(n))));
    require(n > n_val, "train_mapper: corpus too small for a train/validation split");
    return n - n_val;
}

inline MapperTrainResult train_mapper(const std::vector<data::Sample>& corpus, const data::Codebook& cb,
                                      const MapperTrainConfig& cfg, std::uint64_t seed) {
    if (corpus.empty()) throw InputError("train_mapper: empty corpus");
    require(cfg.batch >= 1, "train_mapper: batch must be >= 1");
    const std::size_t n_train = mapper_train_count(corpus.size(), cfg.val_fraction);
    const std::vector<data::Sample> train_s(corpus.begin(), corpus.begin() + static_cast<std::ptrdiff_t>(n_train));
    const std::vector<data::Sample> val_s(corpus.begin() + static_cast<std::ptrdiff_t>(n_train), corpus.end());
    const auto train = motion_examples(train_s, cb, cfg.prosody);
    const auto val = motion_examples(val_s, cb, cfg.prosody);

    MapperTrainResult r{ParamStore(derive_seed(seed, "mapper.init")), {}, {}, {}, symmetric_predictor_floor(val_s)};
    r.model = MotionRegressor(r.store, cfg.mapper);
    Rng rng(derive_seed(seed, "mapper.shuffle"));
    nn::AdamConfig adam;
    adam.lr = cfg.lr;

    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch) {
            const std::size_t b1 = std::min(order.size(), b0 + cfg.batch);
            for (std::size_t k = b0; k < b1; ++k) {
                const auto& e = train[order[k]];
                const Var diff = nn::sub(r.model.predict(r.store, e.own, e.partner), nn::constant(e.target));
                const Var loss = nn::scale(nn::sum_squares(diff), 1.0 / static_cast<double>(e.target.size()));
                epoch_loss += loss.value()[0];
                nn::backward(nn::scale(loss, 1.0 / static_cast<double>(b1 - b0)));
            }
            nn::adam_step(r.store, adam);
        }
        r.train_loss.push_back(epoch_loss / static_cast<double>(train.size()));
        r.val_mse.push_back(motion_mse(r.store, r.model, val));
    }
    return r;
}

}  // namespace tavid::motion
