// SPDX-License-Identifier: Apache-2.0
#pragma once

// Deterministic sinusoidal-bank vocoder and a 16-bit PCM WAV writer.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "tavid/nn/tensor.hpp"

namespace tavid::speech {

inline constexpr std::size_t kHopSize = 320;
inline constexpr int kSampleRate = 16000;

/// Centre frequency of mel bin b, evenly spaced on the mel scale between 80 Hz and 7.6 kHz.
inline double mel_bin_hz(std::size_t b, std::size_t bins) {
    auto to_mel = [](double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); };
    const double lo = to_mel(80.0), hi = to_mel(7600.0);
    const double m = lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins > 1 ? bins - 1 : 1);
    return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0);
}

/// Each bin drives one sinusoid whose amplitude is the bin value, held for a hop. Phase runs
/// continuously across frames. Output is scaled by 1/bins and is not clipped.
inline std::vector<double> toy_vocoder(const nn::Tensor& mel) {
    const std::size_t T = mel.rows(), B = mel.cols();
    std::vector<double> wave(T * kHopSize, 0.0);
    if (B == 0) return wave;
    std::vector<double> omega(B);
    for (std::size_t b = 0; b < B; ++b) omega[b] = 2.0 * std::numbers::pi * mel_bin_hz(b, B) / kSampleRate;
    const double norm = 1.0 / static_cast<double>(B);
    for (std::size_t f = 0; f < T; ++f)
        for (std::size_t b = 0; b < B; ++b) {
            const double a = mel(f, b) * norm;
            if (a == 0.0) continue;
            for (std::size_t k = 0; k < kHopSize; ++k) {
                const std::size_t n = f * kHopSize + k;
                wave[n] += a * std::sin(omega[b] * static_cast<double>(n));
            }
        }
    return wave;
}

/// Samples are clipped to [-1, 1] and quantized to 16-bit.
inline std::vector<std::int16_t> to_pcm16(const std::vector<double>& wave) {
    std::vector<std::int16_t> out(wave.size());
    for (std::size_t i = 0; i < wave.size(); ++i)
        out[i] = static_cast<std::int16_t>(std::lround(std::clamp(wave[i], -1.0, 1.0) * 32767.0));
    return out;
}

namespace detail {
inline void put_u32(std::string& s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::string& s, std::uint16_t v) {
    s.push_back(static_cast<char>(v & 0xff));
    s.push_back(static_cast<char>(v >> 8));
}
}  // namespace detail

/// Mono 16-bit PCM RIFF/WAVE bytes.
inline std::string wav_bytes(const std::vector<double>& wave, int sample_rate = kSampleRate) {
    const auto pcm = to_pcm16(wave);
    const auto data_len = static_cast<std::uint32_t>(pcm.size() * 2);
    std::string s;
    s.reserve(44 + data_len);
    s += "RIFF";
    detail::put_u32(s, 36 + data_len);
    s += "WAVEfmt ";
    detail::put_u32(s, 16);
    detail::put_u16(s, 1);  // PCM
    detail::put_u16(s, 1);  // mono
    detail::put_u32(s, static_cast<std::uint32_t>(sample_rate));
    detail::put_u32(s, static_cast<std::uint32_t>(sample_rate) * 2);
    detail::put_u16(s, 2);
    detail::put_u16(s, 16);
    s += "data";
    detail::put_u32(s, data_len);
    for (std::int16_t v : pcm) detail::put_u16(s, static_cast<std::uint16_t>(v));
    return s;
}

inline void write_wav(const std::filesystem::path& path, const std::vector<double>& wave, int sample_rate = kSampleRate) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw InputError("write_wav: cannot open " + path.string());
    const std::string bytes = wav_bytes(wave, sample_rate);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw InputError("write_wav: write failed for " + path.string());
}

}  // namespace tavid::speech
