// SPDX-License-Identifier: Apache-2.0
#pragma once

// Speaker mapper f(c_face, c_ref) -> e_spk.
//
// c_ref (C x H*W) passes through two 3x3 convolutions and two residual blocks, is pooled to
// a vector, concatenated with c_face and mapped by three linear layers. Inputs switched off
// by the config are replaced with zeros at train and test time.

#include <cmath>
#include <string>
#include <vector>

#include "tavid/data/world.hpp"
#include "tavid/nn/layers.hpp"
#include "tavid/nn/loop.hpp"

namespace tavid::speaker {

using nn::ParamStore;
using nn::Tensor;
using nn::Var;

enum class Source { Audio, Face };

struct SpeakerEmbedding {
    Tensor e;  ///< 1 x d_spk
    Source source = Source::Face;
};

struct SpeakerMapperConfig {
    std::size_t face_dim = data::kFaceDim;
    std::size_t ref_channels = data::kRefChannels;
    std::size_t ref_height = data::kRefHeight;
    std::size_t ref_width = data::kRefWidth;
    std::size_t spk_dim = data::kSpeakerDim;
    std::size_t channels = 8;
    std::size_t hidden = 64;
    std::size_t res_blocks = 2;
    bool use_face = true;
    bool use_ref = true;
};

/// 3x3 same-padding convolution on the C x (B*H*W) layout.
class Conv3x3 {
public:
    Conv3x3() = default;
    Conv3x3(ParamStore& store, std::string name, std::size_t in, std::size_t out, nn::Init init = nn::Init::Uniform)
        : name_(std::move(name)) {
        // out x (in*9); the scale turns the store's rows-as-fan-in bound into 1/sqrt(in*9).
        store.create(name_ + ".w", out, in * 9, init, std::sqrt(static_cast<double>(out) / static_cast<double>(in * 9)));
        store.create(name_ + ".b", out, 1, nn::Init::Zeros);
    }
    Var operator()(ParamStore& store, const Var& x, nn::MapShape s) const {
        return nn::add_col(nn::matmul(store.var(name_ + ".w"), nn::im2col(x, s, 3)), store.var(name_ + ".b"));
    }

private:
    std::string name_;
};

class SpeakerMapper {
public:
    SpeakerMapper() = default;
    SpeakerMapper(ParamStore& store, SpeakerMapperConfig cfg, std::string prefix = "speaker")
        : cfg_(cfg), p_(std::move(prefix)) {
        const std::size_t c = cfg.channels;
        conv1_ = Conv3x3(store, p_ + ".conv1", cfg.ref_channels, c);
        conv2_ = Conv3x3(store, p_ + ".conv2", c, c);
        for (std::size_t r = 0; r < cfg.res_blocks; ++r) {
            const std::string n = p_ + ".res" + std::to_string(r);
            res_.push_back({Conv3x3(store, n + ".a", c, c), Conv3x3(store, n + ".b", c, c, nn::Init::Zeros)});
        }
        fc1_ = nn::Linear(store, p_ + ".fc1", c + cfg.face_dim, cfg.hidden);
        fc2_ = nn::Linear(store, p_ + ".fc2", cfg.hidden, cfg.hidden);
        fc3_ = nn::Linear(store, p_ + ".fc3", cfg.hidden, cfg.spk_dim);
    }

    const SpeakerMapperConfig& config() const { return cfg_; }

    /// Batched forward: faces B x face_dim, refs C x (B*H*W). Returns B x d_spk.
    Var forward(ParamStore& store, const Tensor& faces, const Tensor& refs) const {
        const std::size_t B = faces.rows();
        const nn::MapShape in{cfg_.ref_channels, cfg_.ref_height, cfg_.ref_width, B};
        if (B == 0 || faces.cols() != cfg_.face_dim)
            throw InputError("map_speaker: c_face must be B x " + std::to_string(cfg_.face_dim) + ", got " +
                             faces.shape_str());
        if (refs.rows() != in.channels || refs.cols() != B * in.pixels())
            throw InputError("map_speaker: c_ref must be " + std::to_string(in.channels) + " x " +
                             std::to_string(B * in.pixels()) + ", got " + refs.shape_str());
        const Tensor f = cfg_.use_face ? faces : Tensor(faces.rows(), faces.cols());
        const Tensor r = cfg_.use_ref ? refs : Tensor(refs.rows(), refs.cols());
        const nn::MapShape mid{cfg_.channels, cfg_.ref_height, cfg_.ref_width, B};
        Var h = nn::silu(conv1_(store, nn::constant(r), in));
        h = nn::silu(conv2_(store, h, mid));
        for (const auto& blk : res_) h = nn::add(h, blk.b(store, nn::silu(blk.a(store, h, mid)), mid));
        const Var pooled = nn::global_avg_pool(h, mid);
        Var z = nn::silu(fc1_(store, nn::concat_cols({pooled, nn::constant(f)})));
        z = nn::silu(fc2_(store, z));
        return fc3_(store, z);
    }

    /// One identity: c_face 1 x face_dim, c_ref C x H*W.
    SpeakerEmbedding map_speaker(ParamStore& store, const Tensor& c_face, const Tensor& c_ref) const {
        return {forward(store, c_face, c_ref).value(), Source::Face};
    }

private:
    struct ResBlock {
        Conv3x3 a, b;
    };
    SpeakerMapperConfig cfg_;
    std::string p_;
    Conv3x3 conv1_, conv2_;
    std::vector<ResBlock> res_;
    nn::Linear fc1_, fc2_, fc3_;
};

/// Sum of squares of (target - predicted), summed over rows for a batch.
inline Var speaker_loss(const Var& predicted, const Tensor& target) {
    if (!predicted.value().same_shape(target))
        throw InputError("speaker_loss: predicted " + predicted.value().shape_str() + " vs target " + target.shape_str());
    return nn::sum_squares(nn::sub(nn::constant(target), predicted));
}

// ---------------------------------------------------------------------------
// Views and training

/// A noisy observation of an identity's visual features, standing in for a new photo.
struct IdentityView {
    Tensor face;  ///< 1 x face_dim
    Tensor ref;   ///< C x H*W
};

inline IdentityView observe(const data::SyntheticIdentity& id, double noise, Rng& rng) {
    IdentityView v{id.face, id.ref};
    for (auto& x : v.face.values()) x += noise * rng.normal();
    for (auto& x : v.ref.values()) x += noise * rng.normal();
    return v;
}

/// Stacks views into the batched layout of SpeakerMapper::forward.
inline std::pair<Tensor, Tensor> stack_views(const std::vector<IdentityView>& views) {
    require(!views.empty(), "stack_views: no views");
    const std::size_t B = views.size(), F = views[0].face.cols(), C = views[0].ref.rows(), P = views[0].ref.cols();
    Tensor faces(B, F), refs(C, B * P);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t j = 0; j < F; ++j) faces(b, j) = views[b].face[j];
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t p = 0; p < P; ++p) refs(c, b * P + p) = views[b].ref(c, p);
    }
    return {faces, refs};
}

struct SpeakerTrainConfig {
    SpeakerMapperConfig mapper;
    std::int64_t steps = 1000;
    std::size_t batch = 64;
    double lr = 2e-3;
    double view_noise = 0.3;
};

/// Mean per-example loss over batches of (identity, fresh view) draws.
inline void train_speaker(ParamStore& store, const SpeakerMapper& model,
                          const std::vector<data::SyntheticIdentity>& identities, const SpeakerTrainConfig& cfg,
                          std::uint64_t seed, const nn::StepHooks& hooks = {}) {
    if (identities.empty()) throw InputError("train_speaker: no identities");
    nn::AdamConfig adam;
    adam.lr = cfg.lr;
    auto step_fn = [&](std::int64_t, Rng& rng) {
        std::vector<IdentityView> views;
        Tensor target(cfg.batch, cfg.mapper.spk_dim);
        for (std::size_t b = 0; b < cfg.batch; ++b) {
            const auto& id = identities[rng.below(identities.size())];
            views.push_back(observe(id, cfg.view_noise, rng));
            for (std::size_t j = 0; j < target.cols(); ++j) target(b, j) = id.speaker[j];
        }
        const auto [faces, refs] = stack_views(views);
        const Var loss = nn::scale(speaker_loss(model.forward(store, faces, refs), target), 1.0 / double(cfg.batch));
        nn::backward(loss);
        return loss.value()[0];
    };
    nn::run_steps(store, cfg.steps, step_fn, seed, "speaker.step", adam, {}, hooks,
                  nn::cosine_schedule(cfg.lr, cfg.steps));
}

}  // namespace tavid::speaker
