// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "tavid/nn/tensor.hpp"

namespace tavid::data {

using nn::Tensor;

inline constexpr int kDefaultVocab = 256;
inline constexpr std::size_t kTokenDim = 16;
inline constexpr std::size_t kProsodyBegin = 8;  ///< prosody channel is [8, 16)
inline constexpr std::size_t kProsodyEnd = 16;
inline constexpr double kTokenRateHz = 50.0;
inline constexpr double kVideoFps = 25.0;
inline constexpr std::size_t kTokensPerFrame = 2;

/// Two aligned per-participant token sequences.
struct TokenStreams {
    std::vector<int> s1;
    std::vector<int> s2;
    int vocab_size = kDefaultVocab;
    int silence_index = 0;
    double rate_hz = kTokenRateHz;

    std::size_t length() const { return s1.size(); }
    const std::vector<int>& stream(int role) const { return role == 1 ? s1 : s2; }

    void validate() const {
        require(s1.size() == s2.size(), "TokenStreams: streams differ in length");
        require(silence_index >= 0 && silence_index < vocab_size, "TokenStreams: silence index out of range");
        for (const auto* s : {&s1, &s2})
            for (int t : *s) require(t >= 0 && t < vocab_size, "TokenStreams: token " + std::to_string(t) + " out of range");
    }

    bool operator==(const TokenStreams&) const = default;
};

/// Nearest-centroid quantizer. The last `d_tok - prosody_begin` feature dims carry prosody.
struct Codebook {
    Tensor centroids;  ///< V x d_tok
    std::size_t prosody_begin = kProsodyBegin;
    std::size_t prosody_end = kProsodyEnd;

    int size() const { return static_cast<int>(centroids.rows()); }
    std::size_t dim() const { return centroids.cols(); }

    /// Mean of the centroid's prosody dims; the scalar prosody level of a token.
    double prosody(int index) const {
        double s = 0.0;
        for (std::size_t j = prosody_begin; j < prosody_end; ++j) s += centroids(static_cast<std::size_t>(index), j);
        return s / static_cast<double>(prosody_end - prosody_begin);
    }
};

/// Index of the nearest centroid (squared Euclidean) for every row; ties go to the lowest index.
inline std::vector<int> quantize(const Tensor& features, const Codebook& cb) {
    require(features.rows() >= 1, "quantize: no feature rows");
    require(features.cols() == cb.dim(), "quantize: feature dim " + std::to_string(features.cols()) +
                                             " does not match codebook dim " + std::to_string(cb.dim()));
    std::vector<int> out(features.rows());
    for (std::size_t i = 0; i < features.rows(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        int arg = 0;
        for (int k = 0; k < cb.size(); ++k) {
            double d = 0.0;
            for (std::size_t j = 0; j < cb.dim(); ++j) {
                const double diff = features(i, j) - cb.centroids(static_cast<std::size_t>(k), j);
                d += diff * diff;
            }
            if (d < best) {
                best = d;
                arg = k;
            }
        }
        out[i] = arg;
    }
    return out;
}

inline Tensor dequantize(const std::vector<int>& indices, const Codebook& cb) {
    Tensor out(indices.size(), cb.dim());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        require(indices[i] >= 0 && indices[i] < cb.size(),
                "dequantize: index " + std::to_string(indices[i]) + " out of range");
        auto src = cb.centroids.row_span(static_cast<std::size_t>(indices[i]));
        std::copy(src.begin(), src.end(), out.row_span(i).begin());
    }
    return out;
}

/// Dequantized features with the prosody channel zeroed (prosody-free token ablation).
inline Tensor dequantize_without_prosody(const std::vector<int>& indices, const Codebook& cb) {
    Tensor out = dequantize(indices, cb);
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = cb.prosody_begin; j < cb.prosody_end; ++j) out(i, j) = 0.0;
    return out;
}

/// Lifts a single-speaker utterance into dual streams by filling the other role with silence.
inline TokenStreams pad_single_role(const std::vector<int>& indices, int role, int silence_index,
                                    int vocab_size = kDefaultVocab) {
    require(!indices.empty(), "pad_single_role: empty token sequence");
    require(role == 1 || role == 2, "pad_single_role: role must be 1 or 2");
    TokenStreams ts;
    ts.vocab_size = vocab_size;
    ts.silence_index = silence_index;
    std::vector<int> silence(indices.size(), silence_index);
    ts.s1 = role == 1 ? indices : silence;
    ts.s2 = role == 1 ? silence : indices;
    ts.validate();
    return ts;
}

enum class ActiveState { S1, S2, Both, None };

inline const char* to_string(ActiveState s) {
    switch (s) {
        case ActiveState::S1: return "S1";
        case ActiveState::S2: return "S2";
        case ActiveState::Both: return "BOTH";
        case ActiveState::None: return "NONE";
    }
    return "?";
}

inline ActiveState make_state(bool a1, bool a2) {
    if (a1 && a2) return ActiveState::Both;
    if (a1) return ActiveState::S1;
    if (a2) return ActiveState::S2;
    return ActiveState::None;
}

inline bool is_active(ActiveState s, int role) {
    return s == ActiveState::Both || (role == 1 ? s == ActiveState::S1 : s == ActiveState::S2);
}

inline std::vector<ActiveState> active_speaker_mask(const TokenStreams& ts) {
    ts.validate();
    std::vector<ActiveState> out(ts.length());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = make_state(ts.s1[i] != ts.silence_index, ts.s2[i] != ts.silence_index);
    return out;
}

}  // namespace tavid::data
