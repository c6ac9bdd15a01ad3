// SPDX-License-Identifier: Apache-2.0
#pragma once

// Binary checkpoint container.
//
//   magic "TAVIDCKP" | u32 version | u64 seed | u64 config_hash | i64 step | u64 tensor_count
//   per tensor: u32 name_len | name bytes | u64 rows | u64 cols | rows*cols f64
//   u64 meta_len | meta bytes (free-form text, e.g. RNG state)
//
// All integers and doubles are little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "tavid/nn/params.hpp"

namespace tavid::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    std::uint64_t seed = 0;
    std::uint64_t config_hash = 0;
    std::int64_t step = 0;
    std::map<std::string, Tensor> tensors;
    std::string meta;
};

namespace detail {

template <class T>
void put_le(std::ostream& os, T v) {
    std::uint64_t bits = 0;
    if constexpr (std::is_same_v<T, double>) {
        bits = std::bit_cast<std::uint64_t>(v);
    } else {
        bits = static_cast<std::uint64_t>(v);
    }
    char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
    os.write(buf, sizeof(T));
}

template <class T>
T get_le(std::istream& is, std::size_t record) {
    unsigned char buf[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw FormatError("checkpoint truncated", record);
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    if constexpr (std::is_same_v<T, double>) {
        return std::bit_cast<double>(bits);
    } else {
        return static_cast<T>(bits);
    }
}

}  // namespace detail

/// Writes to a temporary file and renames, so readers never see a partial checkpoint.
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + tmp);
        os.write("TAVIDCKP", 8);
        detail::put_le<std::uint32_t>(os, kCheckpointVersion);
        detail::put_le<std::uint64_t>(os, ck.seed);
        detail::put_le<std::uint64_t>(os, ck.config_hash);
        detail::put_le<std::int64_t>(os, ck.step);
        detail::put_le<std::uint64_t>(os, ck.tensors.size());
        for (const auto& [name, t] : ck.tensors) {
            detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
            os.write(name.data(), static_cast<std::streamsize>(name.size()));
            detail::put_le<std::uint64_t>(os, t.rows());
            detail::put_le<std::uint64_t>(os, t.cols());
            for (double v : t.values()) detail::put_le<double>(os, v);
        }
        detail::put_le<std::uint64_t>(os, ck.meta.size());
        os.write(ck.meta.data(), static_cast<std::streamsize>(ck.meta.size()));
        if (!os) throw std::runtime_error("failed writing checkpoint: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

/// Errors report the 1-based record index (0 = header) at which parsing failed.
inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, "TAVIDCKP", 8) != 0) throw FormatError("bad checkpoint magic", 0);
    const auto version = detail::get_le<std::uint32_t>(is, 0);
    if (version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version), 0);
    Checkpoint ck;
    ck.seed = detail::get_le<std::uint64_t>(is, 0);
    ck.config_hash = detail::get_le<std::uint64_t>(is, 0);
    ck.step = detail::get_le<std::int64_t>(is, 0);
    const auto count = detail::get_le<std::uint64_t>(is, 0);
    for (std::uint64_t k = 0; k < count; ++k) {
        const std::size_t rec = static_cast<std::size_t>(k + 1);
        const auto len = detail::get_le<std::uint32_t>(is, rec);
        if (len > (1u << 16)) throw FormatError("implausible tensor name length", rec);
        std::string name(len, '\0');
        if (!is.read(name.data(), len)) throw FormatError("checkpoint truncated", rec);
        const auto rows = detail::get_le<std::uint64_t>(is, rec);
        const auto cols = detail::get_le<std::uint64_t>(is, rec);
        if (rows * cols > (1ull << 32)) throw FormatError("implausible tensor size", rec);
        Tensor t(rows, cols);
        for (auto& v : t.values()) v = detail::get_le<double>(is, rec);
        ck.tensors.emplace(std::move(name), std::move(t));
    }
    const auto meta_len = detail::get_le<std::uint64_t>(is, count + 1);
    ck.meta.resize(meta_len);
    if (meta_len && !is.read(ck.meta.data(), static_cast<std::streamsize>(meta_len)))
        throw FormatError("checkpoint truncated", count + 1);
    return ck;
}

inline constexpr const char* kAdamMPrefix = "__adam_m/";
inline constexpr const char* kAdamVPrefix = "__adam_v/";

inline Checkpoint checkpoint_from(const ParamStore& store, bool with_optimizer = false) {
    Checkpoint ck;
    ck.seed = store.seed();
    ck.step = store.step;
    for (const auto& [name, p] : store.all()) {
        ck.tensors[name] = p.value;
        if (with_optimizer) {
            ck.tensors[kAdamMPrefix + name] = p.adam_m;
            ck.tensors[kAdamVPrefix + name] = p.adam_v;
        }
    }
    return ck;
}

/// Overwrites values of every parameter in `store` from `ck`; all must be present with matching shapes.
inline void restore_params(ParamStore& store, const Checkpoint& ck) {
    for (auto& [name, p] : store.all()) {
        auto it = ck.tensors.find(name);
        if (it == ck.tensors.end()) throw FormatError("checkpoint lacks parameter '" + name + "'", 0);
        if (!it->second.same_shape(p.value)) throw FormatError("checkpoint shape mismatch for '" + name + "'", 0);
        p.value = it->second;
        if (auto m = ck.tensors.find(kAdamMPrefix + name); m != ck.tensors.end()) p.adam_m = m->second;
        if (auto v = ck.tensors.find(kAdamVPrefix + name); v != ck.tensors.end()) p.adam_v = v->second;
    }
    store.step = ck.step;
}

}  // namespace tavid::nn
