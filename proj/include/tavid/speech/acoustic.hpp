// SPDX-License-Identifier: Apache-2.0
#pragma once

// Acoustic vector field v_t(y_t | S, e_spk) producing the mixed mel-spectrogram.
//
// Each stream's tokens go through a lookup embedding and a speaker-conditioned norm driven
// by that stream's speaker embedding; the two are summed with the projected state and a
// time embedding, then refined by residual MLP blocks. Every mel frame depends only on its
// own tokens, as in the synthetic renderer.

#include <string>
#include <vector>

#include "tavid/data/corpus.hpp"
#include "tavid/speech/flow.hpp"
#include "tavid/visual/diffusion.hpp"

namespace tavid::speech {

struct AcousticConfig {
    int vocab = data::kDefaultVocab;
    std::size_t mel_bins = data::kMelBins;
    std::size_t spk_dim = data::kSpeakerDim;
    std::size_t width = 96;
    std::size_t blocks = 3;
};

/// Speaker embedding per stream; both are 1 x spk_dim.
struct SpeakerPair {
    Tensor e1, e2;
    const Tensor& of(int role) const { return role == 1 ? e1 : e2; }
};

class AcousticModel {
public:
    AcousticModel() = default;
    AcousticModel(ParamStore& store, AcousticConfig cfg, std::string prefix = "acoustic")
        : cfg_(cfg), p_(std::move(prefix)) {
        const std::size_t w = cfg.width;
        store.create(p_ + ".tok_emb", static_cast<std::size_t>(cfg.vocab), w, nn::Init::Normal, 1.0);
        store.create(p_ + ".null_tok", 1, w, nn::Init::Normal, 1.0);
        tok_proj_ = nn::Linear(store, p_ + ".tok_proj", w, w);
        spk_norm_ = nn::Dsln(store, p_ + ".spk_norm", w, cfg.spk_dim);
        y_in_ = nn::Linear(store, p_ + ".y_in", cfg.mel_bins, w);
        time1_ = nn::Linear(store, p_ + ".time1", w, w);
        time2_ = nn::Linear(store, p_ + ".time2", w, w);
        for (std::size_t b = 0; b < cfg.blocks; ++b) {
            const std::string n = p_ + ".b" + std::to_string(b);
            blocks_.push_back({nn::LayerNorm(store, n + ".norm", w), nn::Mlp(store, n + ".mlp", w, 2 * w, w)});
        }
        out_norm_ = nn::LayerNorm(store, p_ + ".out_norm", w);
        out_ = nn::Linear(store, p_ + ".out", w, cfg.mel_bins);
    }

    const AcousticConfig& config() const { return cfg_; }

    /// `drop_cond` replaces tokens and speaker embeddings by the null condition.
    Var field(ParamStore& store, const Var& y_t, double t, const data::TokenStreams& S, const SpeakerPair& spk,
              bool drop_cond = false) const {
        const std::size_t T = y_t.rows();
        if (y_t.cols() != cfg_.mel_bins)
            throw InputError("acoustic: mel has " + std::to_string(y_t.cols()) + " bins, model expects " +
                             std::to_string(cfg_.mel_bins));
        if (S.s1.size() != T || S.s2.size() != T)
            throw InputError("acoustic: " + std::to_string(T) + " mel frames but token streams of length " +
                             std::to_string(S.s1.size()) + " and " + std::to_string(S.s2.size()));
        Var h = y_in_(store, y_t);
        const std::vector<double> tpos{1000.0 * t};
        h = nn::add_row(h, time2_(store, nn::silu(time1_(store, nn::constant(nn::sinusoidal_encoding(tpos, cfg_.width))))));
        if (drop_cond) {
            h = nn::add_row(h, store.var(p_ + ".null_tok"));
        } else {
            for (int role = 1; role <= 2; ++role) {
                const Tensor& e = spk.of(role);
                if (e.rows() != 1 || e.cols() != cfg_.spk_dim)
                    throw InputError("acoustic: speaker embedding must be 1 x " + std::to_string(cfg_.spk_dim));
                const Var u = tok_proj_(store, nn::embed_lookup(S.stream(role), store.var(p_ + ".tok_emb")));
                h = nn::add(h, spk_norm_(store, u, nn::constant(e)));
            }
        }
        for (const auto& b : blocks_) h = nn::add(h, b.mlp(store, b.norm(store, h)));
        return out_(store, out_norm_(store, h));
    }

private:
    struct Block {
        nn::LayerNorm norm;
        nn::Mlp mlp;
    };

    AcousticConfig cfg_;
    std::string p_;
    nn::Linear tok_proj_, y_in_, time1_, time2_, out_;
    nn::Dsln spk_norm_;
    std::vector<Block> blocks_;
    nn::LayerNorm out_norm_;
};

/// ||(y1 - y0) - v_t(y_t | S, e_spk)||^2 per frame for one draw of (y0, t).
inline Var acoustic_loss(ParamStore& store, const AcousticModel& model, const Tensor& y0, const Tensor& y1, double t,
                         const data::TokenStreams& S, const SpeakerPair& spk, bool drop_cond = false) {
    if (S.length() != y1.rows())
        throw InputError("acoustic_loss: " + std::to_string(y1.rows()) + " mel frames but " +
                         std::to_string(S.length()) + " tokens");
    return flow_loss([&](const Var& y, double tt) { return model.field(store, y, tt, S, spk, drop_cond); }, y0, y1, t);
}

/// Guided value-only field for sampling.
inline FieldFn acoustic_field(ParamStore& store, const AcousticModel& model, const data::TokenStreams& S,
                              const SpeakerPair& spk, double cfg_scale) {
    return [&store, &model, S, spk, cfg_scale](const Tensor& y, double t) {
        const Tensor c = model.field(store, nn::constant(y), t, S, spk).value();
        if (cfg_scale == 1.0) return c;
        return visual::cfg_combine(c, model.field(store, nn::constant(y), t, S, spk, true).value(), cfg_scale);
    };
}

/// Euler integration from a standard-normal y0 drawn from `seed`.
inline Tensor ode_sample(ParamStore& store, const AcousticModel& model, const data::TokenStreams& S,
                         const SpeakerPair& spk, std::size_t steps, std::uint64_t seed, double cfg_scale = 1.0) {
    S.validate();
    Rng rng(derive_seed(seed, "acoustic.prior"));
    Tensor y0 = standard_normal(S.length(), model.config().mel_bins, rng);
    return ode_integrate(acoustic_field(store, model, S, spk, cfg_scale), std::move(y0), steps);
}

struct AcousticTrainConfig {
    AcousticConfig model;
    std::int64_t steps = 1500;
    std::size_t batch = 4;
    double lr = 2e-3;
    double cond_dropout = 0.3;
};

inline SpeakerPair audio_speakers(const data::Sample& s) { return {s.identity1.speaker, s.identity2.speaker}; }

/// Trains on the corpus mel targets with the ground-truth (audio-side) speaker embeddings.
inline void train_acoustic(ParamStore& store, const AcousticModel& model, const std::vector<data::Sample>& corpus,
                           const AcousticTrainConfig& cfg, std::uint64_t seed, const nn::StepHooks& hooks = {}) {
    if (corpus.empty()) throw InputError("train_acoustic: empty corpus");
    nn::AdamConfig adam;
    adam.lr = cfg.lr;
    auto step_fn = [&](std::int64_t, Rng& rng) {
        Var total;
        for (std::size_t b = 0; b < cfg.batch; ++b) {
            const auto& s = corpus[rng.below(corpus.size())];
            const Tensor y0 = standard_normal(s.mel.rows(), s.mel.cols(), rng);
            const double t = rng.uniform();
            const bool drop = rng.bernoulli(cfg.cond_dropout);
            const Var l = acoustic_loss(store, model, y0, s.mel, t, s.tokens, audio_speakers(s), drop);
            total = total ? nn::add(total, l) : l;
        }
        const Var loss = nn::scale(total, 1.0 / static_cast<double>(cfg.batch));
        nn::backward(loss);
        return loss.value()[0];
    };
    nn::run_steps(store, cfg.steps, step_fn, seed, "acoustic.step", adam, {}, hooks,
                  nn::cosine_schedule(cfg.lr, cfg.steps));
}

}  // namespace tavid::speech
