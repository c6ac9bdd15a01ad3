// SPDX-License-Identifier: Apache-2.0
#pragma once

// The fixed, seeded "physics" behind the synthetic dyadic corpus: codebook, identity
// population, and the linear maps that render tokens into mel frames and motion.
// Everything here is a pure function of the world seed so that independently generated
// corpora (train, test, inference scripts) share one codebook and one identity gallery.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <vector>

#include "tavid/core/rng.hpp"
#include "tavid/data/tokens.hpp"

namespace tavid::data {

inline constexpr std::size_t kLatentDim = 8;
inline constexpr std::size_t kFaceDim = 32;
inline constexpr std::size_t kSpeakerDim = 16;
inline constexpr std::size_t kRefHeight = 8;
inline constexpr std::size_t kRefWidth = 8;
inline constexpr std::size_t kRefChannels = 4;
inline constexpr std::size_t kMotionDim = 24;
inline constexpr std::size_t kPoseDims = 6;  ///< dims [0, 6) pose, [6, 24) expression
inline constexpr std::size_t kMouthDim = 6;
inline constexpr std::size_t kMelBins = 80;

/// Characters that carry linguistic content; index = linguistic class.
inline constexpr std::string_view kAlphabet = "abcdefghijklmnopqrstuvwxyz ,.?!";
inline constexpr int kLinguisticClasses = static_cast<int>(kAlphabet.size());
inline constexpr int kProsodyLevels = 8;
inline constexpr int kSilenceToken = 0;

inline int speech_token(int ling_class, int level) { return 1 + ling_class * kProsodyLevels + level; }
inline double level_value(int level) { return -1.0 + 2.0 * level / (kProsodyLevels - 1); }
inline int char_class(char c) {
    const auto p = kAlphabet.find(c);
    return p == std::string_view::npos ? -1 : static_cast<int>(p);
}

struct SyntheticIdentity {
    int id = 0;
    Tensor face;     ///< 1 x kFaceDim
    Tensor ref;      ///< kRefChannels x (kRefHeight * kRefWidth), channel-major
    Tensor speaker;  ///< 1 x kSpeakerDim, the audio-derived embedding target

    bool operator==(const SyntheticIdentity&) const = default;
};

class SyntheticWorld {
public:
    explicit SyntheticWorld(std::uint64_t seed = 2024, std::size_t n_identities = 32) : seed_(seed) {
        Rng rng(derive_seed(seed, "world"));
        build_codebook(rng);
        speaker_map_ = gaussian(kSpeakerDim, kLatentDim, 1.5 / std::sqrt(double(kLatentDim)), rng);
        face_map_ = gaussian(kFaceDim, kLatentDim, 1.0 / std::sqrt(double(kLatentDim)), rng);
        ref_map_ = gaussian(kRefChannels, kLatentDim, 1.0 / std::sqrt(double(kLatentDim)), rng);
        motion_identity_ = gaussian(kMotionDim, kLatentDim, 0.04, rng);
        ling_to_motion_ = gaussian(kMotionDim, kLatentDim, 0.15, rng);
        speak_dir_ = Tensor(1, kMotionDim);
        listen_dir_ = Tensor(1, kMotionDim);
        for (std::size_t d = 0; d < kMotionDim; ++d) {
            speak_dir_[d] = d < kPoseDims ? 0.15 * rng.normal() : 0.3 * rng.normal();
            listen_dir_[d] = d < kPoseDims ? 0.3 * rng.normal() : 0.1 * rng.normal();
        }
        speak_dir_[kMouthDim] = 1.0;
        listen_dir_[0] = 1.0;  // head pitch: nodding
        for (std::size_t k = 0; k < kLatentDim; ++k) ling_to_motion_(kMouthDim, k) = 0.0;
        mel_render_ = gaussian(kMelBins, kTokenDim, 0.5 / std::sqrt(double(kTokenDim)), rng);
        mel_color_ = gaussian(kMelBins, kSpeakerDim, 1.0 / std::sqrt(double(kSpeakerDim)), rng);

        Rng id_rng(derive_seed(seed, "identities"));
        for (std::size_t i = 0; i < n_identities; ++i) identities_.push_back(make_identity(static_cast<int>(i), id_rng));
    }

    std::uint64_t seed() const { return seed_; }
    const Codebook& codebook() const { return codebook_; }
    const std::vector<SyntheticIdentity>& identities() const { return identities_; }
    const SyntheticIdentity& identity(int id) const { return identities_.at(static_cast<std::size_t>(id)); }
    const Tensor& linguistic_vector(int cls) const { return ling_vectors_[static_cast<std::size_t>(cls)]; }

    /// Continuous token feature for a character at a prosody value in [-1, 1], before noise.
    Tensor token_feature(int ling_class, double prosody) const {
        Tensor f(1, kTokenDim);
        const Tensor& l = linguistic_vector(ling_class);
        for (std::size_t j = 0; j < kProsodyBegin; ++j) f[j] = l[j];
        for (std::size_t j = kProsodyBegin; j < kProsodyEnd; ++j) f[j] = prosody;
        return f;
    }

    /// Mel contribution of one active speaker at one token: (R c) * (1 + 0.5 tanh(C e)).
    void render_mel(int token, const Tensor& speaker, std::span<double> out) const {
        auto c = codebook_.centroids.row_span(static_cast<std::size_t>(token));
        for (std::size_t b = 0; b < kMelBins; ++b) {
            double base = 0.0, color = 0.0;
            for (std::size_t j = 0; j < kTokenDim; ++j) base += mel_render_(b, j) * c[j];
            for (std::size_t j = 0; j < kSpeakerDim; ++j) color += mel_color_(b, j) * speaker[j];
            out[b] += base * (1.0 + 0.5 * std::tanh(color));
        }
    }

    const Tensor& speak_direction() const { return speak_dir_; }
    const Tensor& listen_direction() const { return listen_dir_; }
    const Tensor& ling_to_motion() const { return ling_to_motion_; }
    const Tensor& motion_identity() const { return motion_identity_; }
    const Tensor& latent(int id) const { return latents_.at(static_cast<std::size_t>(id)); }

    /// e_spk = tanh(A u).
    Tensor speaker_embedding(const Tensor& u) const {
        Tensor e(1, kSpeakerDim);
        for (std::size_t i = 0; i < kSpeakerDim; ++i) {
            double s = 0.0;
            for (std::size_t k = 0; k < kLatentDim; ++k) s += speaker_map_(i, k) * u[k];
            e[i] = std::tanh(s);
        }
        return e;
    }

private:
    static Tensor gaussian(std::size_t r, std::size_t c, double s, Rng& rng) {
        Tensor t(r, c);
        for (auto& v : t.values()) v = s * rng.normal();
        return t;
    }

    void build_codebook(Rng& rng) {
        // Linguistic vectors have a fixed norm of 2 so no speech token sits near the silence centroid.
        for (int c = 0; c < kLinguisticClasses; ++c) {
            Tensor v(1, kProsodyBegin);
            double n = 0.0;
            for (auto& x : v.values()) {
                x = rng.normal();
                n += x * x;
            }
            for (auto& x : v.values()) x *= 2.0 / std::sqrt(n);
            ling_vectors_.push_back(v);
        }
        codebook_.centroids = Tensor(kDefaultVocab, kTokenDim);
        for (int c = 0; c < kLinguisticClasses; ++c)
            for (int l = 0; l < kProsodyLevels; ++l) {
                const auto row = static_cast<std::size_t>(speech_token(c, l));
                for (std::size_t j = 0; j < kProsodyBegin; ++j) codebook_.centroids(row, j) = ling_vectors_[c][j];
                for (std::size_t j = kProsodyBegin; j < kProsodyEnd; ++j) codebook_.centroids(row, j) = level_value(l);
            }
        // Spare indices never produced by the generator: far away, pairwise distinct.
        for (int k = speech_token(kLinguisticClasses - 1, kProsodyLevels - 1) + 1; k < kDefaultVocab; ++k) {
            const auto row = static_cast<std::size_t>(k);
            const std::size_t axis = static_cast<std::size_t>(k) % kTokenDim;
            codebook_.centroids(row, axis) = 10.0 + static_cast<double>(k);
        }
    }

    SyntheticIdentity make_identity(int id, Rng& rng) {
        Tensor u(1, kLatentDim);
        for (auto& v : u.values()) v = rng.normal();
        latents_.push_back(u);
        SyntheticIdentity s;
        s.id = id;
        s.speaker = speaker_embedding(u);
        s.face = Tensor(1, kFaceDim);
        for (std::size_t i = 0; i < kFaceDim; ++i) {
            double v = 0.0;
            for (std::size_t k = 0; k < kLatentDim; ++k) v += face_map_(i, k) * u[k];
            s.face[i] = v + 0.1 * rng.normal();
        }
        // Reference features: the 4-dim projection P u spread over fixed spatial patterns.
        // It sees only half of the latent, so it is informative but weaker than the face.
        double z[kRefChannels];
        for (std::size_t c = 0; c < kRefChannels; ++c) {
            z[c] = 0.0;
            for (std::size_t k = 0; k < kLatentDim; ++k) z[c] += ref_map_(c, k) * u[k];
        }
        s.ref = Tensor(kRefChannels, kRefHeight * kRefWidth);
        for (std::size_t c = 0; c < kRefChannels; ++c)
            for (std::size_t h = 0; h < kRefHeight; ++h)
                for (std::size_t w = 0; w < kRefWidth; ++w) {
                    const double phase = std::numbers::pi * (static_cast<double>(h) + 0.5) / kRefHeight;
                    const double pattern = std::sin(phase * static_cast<double>(c + 1)) *
                                           std::cos(std::numbers::pi * static_cast<double>(w) / kRefWidth);
                    s.ref(c, h * kRefWidth + w) =
                        z[c] * pattern + 0.5 * z[(c + 1) % kRefChannels] * (static_cast<double>(w) / kRefWidth);
                }
        return s;
    }

    std::uint64_t seed_;
    Codebook codebook_;
    std::vector<Tensor> ling_vectors_;
    std::vector<Tensor> latents_;
    std::vector<SyntheticIdentity> identities_;
    Tensor speaker_map_, face_map_, ref_map_, motion_identity_, ling_to_motion_;
    Tensor speak_dir_, listen_dir_, mel_render_, mel_color_;
};

}  // namespace tavid::data
