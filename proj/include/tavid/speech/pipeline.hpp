// SPDX-License-Identifier: Apache-2.0
#pragma once

// Script -> dual token streams -> mixed mel -> waveform.

#include "tavid/speech/acoustic.hpp"
#include "tavid/speech/t2s.hpp"
#include "tavid/speech/vocoder.hpp"

namespace tavid::speech {

struct AcousticSampling {
    std::size_t steps = 32;
    double cfg_scale = 2.0;
};

struct SpeechModels {
    ParamStore* t2s_store = nullptr;
    const T2SModel* t2s = nullptr;
    ParamStore* acoustic_store = nullptr;
    const AcousticModel* acoustic = nullptr;
};

struct SpeechOutput {
    data::TokenStreams streams;
    Tensor mel;
    std::vector<double> wave;
    bool truncated = false;

    /// Video frames covered by the speech: two tokens per frame, a trailing odd token dropped.
    std::size_t video_frames() const { return streams.length() / data::kTokensPerFrame; }
};

/// `spk` carries the per-stream speaker embeddings; at inference these are face-derived.
inline SpeechOutput end_to_end_speech(const data::DialogueScript& script, const SpeakerPair& spk, const SpeechModels& m,
                                      const SamplingConfig& t2s_sampling, const AcousticSampling& ac,
                                      std::uint64_t acoustic_seed) {
    require(m.t2s && m.t2s_store && m.acoustic && m.acoustic_store, "end_to_end_speech: models not loaded");
    SpeechOutput out;
    const DecodeResult d = decode_semantic(*m.t2s_store, *m.t2s, tokenize_text(script), t2s_sampling);
    out.streams = d.streams;
    out.truncated = d.truncated;
    out.mel = ode_sample(*m.acoustic_store, *m.acoustic, out.streams, spk, ac.steps, acoustic_seed, ac.cfg_scale);
    out.wave = toy_vocoder(out.mel);
    return out;
}

}  // namespace tavid::speech
