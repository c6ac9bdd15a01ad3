// SPDX-License-Identifier: Apache-2.0
#pragma once

// Toy video denoiser eps_theta(z_t, t, C) over per-frame motion latents.
//
// Each block, per frame:
//   reference attention  - cross-attention to the 64 spatial tokens of c_ref
//   motion attention     - cross-attention to the two c_mot rows aligned with the frame
//   temporal attention   - self-attention across frames, prefixed by the K motion frames
//   face modulation      - c_face enters through a modulated norm ahead of the MLP
// Only the temporal path mixes frames.

#include <functional>
#include <string>
#include <vector>

#include "tavid/nn/layers.hpp"
#include "tavid/visual/diffusion.hpp"

namespace tavid::visual {

using nn::ParamStore;
using nn::Var;

struct DenoiserConfig {
    std::size_t latent_dim = 24;
    std::size_t width = 48;
    std::size_t heads = 4;
    std::size_t depth = 2;
    std::size_t motion_dim = 32;
    std::size_t face_dim = 32;
    std::size_t ref_channels = 4;
    std::size_t ref_positions = 64;
    std::size_t motion_frames = 2;  ///< K
    std::size_t tokens_per_frame = 2;
    bool temporal = true;
};

struct ConditioningSet {
    Tensor c_ref;          ///< ref_channels x ref_positions
    Tensor c_face;         ///< 1 x face_dim
    Var c_mot;             ///< (tokens_per_frame * F) x motion_dim
    Tensor motion_frames;  ///< K x latent_dim; empty when there is no history
    bool ref_present = true;
    bool mot_present = true;
    bool frames_present = true;

    /// The unconditional branch for guidance: every droppable element replaced by its null.
    ConditioningSet unconditional() const {
        ConditioningSet u = *this;
        u.ref_present = u.mot_present = u.frames_present = false;
        return u;
    }
};

/// Each of {c_ref, c_mot, motion_frames} is independently swapped for its null embedding with probability p.
inline ConditioningSet condition_dropout(const ConditioningSet& c, double p, Rng& rng) {
    require(p >= 0.0 && p <= 1.0, "condition_dropout: probability outside [0, 1]");
    ConditioningSet out = c;
    if (rng.bernoulli(p)) out.ref_present = false;
    if (rng.bernoulli(p)) out.mot_present = false;
    if (rng.bernoulli(p)) out.frames_present = false;
    return out;
}

/// Parameters updated in the motion stage of visual training: the motion mapper, motion
/// attention and temporal attention. Everything else stands in for the pretrained backbone.
inline bool is_motion_param(const std::string& name) {
    return name.rfind("mapper.", 0) == 0 || name.find("mot_") != std::string::npos ||
           name.find("temp_") != std::string::npos || name.find("frames_") != std::string::npos;
}

class VisualDenoiser {
public:
    VisualDenoiser() = default;
    VisualDenoiser(ParamStore& store, DenoiserConfig cfg, std::string prefix = "visual")
        : cfg_(cfg), p_(std::move(prefix)) {
        const std::size_t w = cfg.width;
        in_ = nn::Linear(store, p_ + ".in", cfg.latent_dim, w);
        time1_ = nn::Linear(store, p_ + ".time1", w, w);
        time2_ = nn::Linear(store, p_ + ".time2", w, w);
        ref_in_ = nn::Linear(store, p_ + ".ref_in", cfg.ref_channels, w);
        mot_in_ = nn::Linear(store, p_ + ".mot_in", cfg.motion_dim, w);
        frames_in_ = nn::Linear(store, p_ + ".frames_in", cfg.latent_dim, w);
        store.create(p_ + ".ref_null", 1, w, nn::Init::Normal, 0.1);
        store.create(p_ + ".mot_null", 1, w, nn::Init::Normal, 0.1);
        store.create(p_ + ".frames_null", 1, w, nn::Init::Normal, 0.1);
        for (std::size_t b = 0; b < cfg.depth; ++b) {
            const std::string n = p_ + ".b" + std::to_string(b);
            Block blk;
            blk.ref_norm = nn::LayerNorm(store, n + ".ref_norm", w);
            blk.ref_attn = nn::MultiHeadAttention(store, n + ".ref_attn", w, cfg.heads);
            blk.mot_norm = nn::LayerNorm(store, n + ".mot_norm", w);
            blk.mot_attn = nn::MultiHeadAttention(store, n + ".mot_attn", w, cfg.heads, 0, nn::Init::Zeros);
            blk.temp_norm = nn::LayerNorm(store, n + ".temp_norm", w);
            blk.temp_attn = nn::MultiHeadAttention(store, n + ".temp_attn", w, cfg.heads, 0, nn::Init::Zeros);
            blk.face = nn::Dsln(store, n + ".face", w, cfg.face_dim);
            blk.mlp = nn::Mlp(store, n + ".mlp", w, 2 * w, w);
            blocks_.push_back(std::move(blk));
        }
        out_norm_ = nn::LayerNorm(store, p_ + ".out_norm", w);
        out_ = nn::Linear(store, p_ + ".out", w, cfg.latent_dim);
    }

    const DenoiserConfig& config() const { return cfg_; }

    Var predict(ParamStore& store, const Var& z_t, std::size_t t, const ConditioningSet& c) const {
        const std::size_t F = z_t.rows(), w = cfg_.width;
        check(z_t, c);
        Var h = in_(store, z_t);
        const std::vector<double> tpos{static_cast<double>(t)};
        const Var temb = time2_(store, nn::silu(time1_(store, nn::constant(nn::sinusoidal_encoding(tpos, w)))));
        h = nn::add_row(h, temb);

        // Spatial tokens: one row per position, channels as features.
        const Var ref_keys = c.ref_present ? nn::add_const(ref_in_(store, nn::transpose(nn::constant(c.c_ref))),
                                                           nn::sinusoidal_encoding(cfg_.ref_positions, w))
                                           : store.var(p_ + ".ref_null");
        const Var mot_keys = c.mot_present ? mot_in_(store, c.c_mot) : store.var(p_ + ".mot_null");
        const Tensor mot_mask = c.mot_present ? frame_mask(F) : Tensor();
        Var frame_keys;
        std::size_t history = 0;
        if (cfg_.temporal) {
            if (c.frames_present && c.motion_frames.rows() > 0) {
                history = c.motion_frames.rows();
                frame_keys = nn::add_const(frames_in_(store, nn::constant(c.motion_frames)),
                                           nn::sinusoidal_encoding(history, w));
            } else {
                history = 1;
                frame_keys = store.var(p_ + ".frames_null");
            }
        }
        const Tensor frame_pe = cfg_.temporal ? nn::sinusoidal_encoding(positions(history, F), w) : Tensor();

        for (const auto& blk : blocks_) {
            h = nn::add(h, blk.ref_attn(store, blk.ref_norm(store, h), ref_keys));
            h = nn::add(h, blk.mot_attn(store, blk.mot_norm(store, h), mot_keys, c.mot_present ? &mot_mask : nullptr));
            if (cfg_.temporal) {
                const Var x = nn::add_const(blk.temp_norm(store, h), frame_pe);
                const Var ctx = nn::concat_rows({frame_keys, x});
                h = nn::add(h, blk.temp_attn(store, x, ctx));
            }
            h = nn::add(h, blk.mlp(store, blk.face(store, h, nn::constant(c.c_face))));
        }
        return out_(store, out_norm_(store, h));
    }

private:
    struct Block {
        nn::LayerNorm ref_norm, mot_norm, temp_norm;
        nn::MultiHeadAttention ref_attn, mot_attn, temp_attn;
        nn::Dsln face;
        nn::Mlp mlp;
    };

    /// Frame i may only attend to its own tokens [tpf*i, tpf*(i+1)).
    Tensor frame_mask(std::size_t F) const {
        const std::size_t tpf = cfg_.tokens_per_frame;
        Tensor m(F, F * tpf, -std::numeric_limits<double>::infinity());
        for (std::size_t i = 0; i < F; ++i)
            for (std::size_t k = 0; k < tpf; ++k) m(i, i * tpf + k) = 0.0;
        return m;
    }

    static std::vector<double> positions(std::size_t history, std::size_t F) {
        std::vector<double> p(F);
        for (std::size_t i = 0; i < F; ++i) p[i] = static_cast<double>(history + i);
        return p;
    }

    void check(const Var& z_t, const ConditioningSet& c) const {
        const std::size_t F = z_t.rows();
        if (F == 0 || z_t.cols() != cfg_.latent_dim)
            throw InputError("predict_noise: latent must be F x " + std::to_string(cfg_.latent_dim) + ", got " +
                             z_t.value().shape_str());
        if (c.c_face.rows() != 1 || c.c_face.cols() != cfg_.face_dim)
            throw InputError("predict_noise: c_face must be 1 x " + std::to_string(cfg_.face_dim));
        if (c.ref_present && (c.c_ref.rows() != cfg_.ref_channels || c.c_ref.cols() != cfg_.ref_positions))
            throw InputError("predict_noise: c_ref shape " + c.c_ref.shape_str() + " does not match config");
        if (c.mot_present) {
            if (!c.c_mot) throw InputError("predict_noise: c_mot marked present but missing");
            if (c.c_mot.rows() != F * cfg_.tokens_per_frame || c.c_mot.cols() != cfg_.motion_dim)
                throw InputError("predict_noise: c_mot is " + c.c_mot.value().shape_str() + ", window needs " +
                                 std::to_string(F * cfg_.tokens_per_frame) + " x " + std::to_string(cfg_.motion_dim));
        }
        if (c.frames_present && c.motion_frames.rows() > 0 && c.motion_frames.cols() != cfg_.latent_dim)
            throw InputError("predict_noise: motion frames have the wrong width");
    }

    DenoiserConfig cfg_;
    std::string p_;
    nn::Linear in_, time1_, time2_, ref_in_, mot_in_, frames_in_, out_;
    nn::LayerNorm out_norm_;
    std::vector<Block> blocks_;
};

/// eps prediction as a function of (z_t, t, C); lets tests plug in oracle denoisers.
using EpsFn = std::function<Var(const Var& z_t, std::size_t t, const ConditioningSet& c)>;

inline EpsFn eps_fn(ParamStore& store, const VisualDenoiser& model) {
    return [&store, &model](const Var& z, std::size_t t, const ConditioningSet& c) { return model.predict(store, z, t, c); };
}

struct VisualExample {
    Tensor z0;  ///< F x latent_dim
    ConditioningSet cond;
};

/// Mean over the batch of ||eps - eps_theta(z_t, t, C)||^2 / F, with t and eps drawn from rng.
inline Var visual_loss(const std::vector<VisualExample>& batch, const EpsFn& eps_theta, const NoiseSchedule& s,
                       Rng& rng) {
    require(!batch.empty(), "visual_loss: empty batch");
    Var total;
    for (const auto& ex : batch) {
        const std::size_t t = rng.below(s.steps());
        Tensor eps(ex.z0.rows(), ex.z0.cols());
        for (auto& v : eps.values()) v = rng.normal();
        const Tensor zt = add_noise(ex.z0, t, eps, s);
        const Var pred = eps_theta(nn::constant(zt), t, ex.cond);
        const Var term = nn::scale(nn::sum_squares(nn::sub(pred, nn::constant(eps))), 1.0 / double(ex.z0.rows()));
        total = total ? nn::add(total, term) : term;
    }
    return nn::scale(total, 1.0 / static_cast<double>(batch.size()));
}

enum class Sampler { Ddpm, Ddim };

struct SampleOptions {
    Sampler sampler = Sampler::Ddpm;
    double cfg_scale = 2.0;
    std::size_t window = 14;  ///< frames generated per chunk
};

/// One reverse trajectory for a chunk. Final step returns the predicted z0.
inline Tensor sample_chunk(const EpsFn& eps_theta, const ConditioningSet& c, std::size_t frames, std::size_t latent_dim,
                           const NoiseSchedule& s, const SampleOptions& opt, Rng& rng) {
    Tensor z(frames, latent_dim);
    for (auto& v : z.values()) v = rng.normal();
    const ConditioningSet uncond = c.unconditional();
    for (std::size_t step = s.steps(); step-- > 0;) {
        const Var zv = nn::constant(z);
        Tensor eps = eps_theta(zv, step, c).value();
        if (opt.cfg_scale != 1.0) eps = cfg_combine(eps, eps_theta(zv, step, uncond).value(), opt.cfg_scale);
        const Tensor z0 = recover_z0(z, step, eps, s);
        if (step == 0) {
            z = z0;
        } else if (opt.sampler == Sampler::Ddim) {
            const double ap = s.alpha_bar_prev(step);
            for (std::size_t i = 0; i < z.size(); ++i) z[i] = std::sqrt(ap) * z0[i] + std::sqrt(1.0 - ap) * eps[i];
        } else {
            // Posterior q(z_{t-1} | z_t, z0).
            const double ab = s.alpha_bar(step), ap = s.alpha_bar_prev(step), beta = s.beta(step);
            const double c0 = std::sqrt(ap) * beta / (1.0 - ab);
            const double ct = std::sqrt(s.alpha(step)) * (1.0 - ap) / (1.0 - ab);
            const double sigma = std::sqrt(beta * (1.0 - ap) / (1.0 - ab));
            for (std::size_t i = 0; i < z.size(); ++i) z[i] = c0 * z0[i] + ct * z[i] + sigma * rng.normal();
        }
        if (!z.all_finite()) throw NumericalError("sample_video: non-finite latent at diffusion step " + std::to_string(step));
    }
    return z;
}

/// Generates F frames chunk by chunk; each chunk after the first is conditioned on the
/// last K frames of its predecessor. `full` carries c_mot for all F frames.
inline Tensor sample_video(const EpsFn& eps_theta, const ConditioningSet& full, std::size_t F,
                           const DenoiserConfig& cfg, const NoiseSchedule& s, const SampleOptions& opt, Rng& rng) {
    require(F >= 1, "sample_video: no frames requested");
    require(opt.window >= 1, "sample_video: empty window");
    if (full.mot_present && full.c_mot.rows() != F * cfg.tokens_per_frame)
        throw InputError("sample_video: c_mot has " + std::to_string(full.c_mot.rows()) + " rows, " +
                         std::to_string(F) + " frames need " + std::to_string(F * cfg.tokens_per_frame));
    Tensor video(F, cfg.latent_dim);
    for (std::size_t start = 0; start < F; start += opt.window) {
        const std::size_t n = std::min(opt.window, F - start);
        ConditioningSet c = full;
        if (full.mot_present)
            c.c_mot = nn::constant(nn::slice_rows(full.c_mot, start * cfg.tokens_per_frame, n * cfg.tokens_per_frame).value());
        const std::size_t k = std::min(cfg.motion_frames, start);
        c.motion_frames = Tensor(k, cfg.latent_dim);
        for (std::size_t r = 0; r < k; ++r)
            for (std::size_t j = 0; j < cfg.latent_dim; ++j) c.motion_frames(r, j) = video(start - k + r, j);
        c.frames_present = full.frames_present && k > 0;
        const Tensor chunk = sample_chunk(eps_theta, c, n, cfg.latent_dim, s, opt, rng);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < cfg.latent_dim; ++j) video(start + r, j) = chunk(r, j);
    }
    return video;
}

}  // namespace tavid::visual
