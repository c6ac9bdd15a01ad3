// SPDX-License-Identifier: Apache-2.0
#pragma once

// Run manifest: config hash, code version, per-stage records and metric tables. Every write
// replaces the file through a rename so readers never see a partial manifest.

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "tavid/core/error.hpp"

namespace tavid::harness {

namespace fs = std::filesystem;

/// Writes `text` to `path` via a sibling temporary file and rename.
inline void write_atomic(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot write " + tmp.string());
        os << text;
        if (!os) throw std::runtime_error("failed writing " + tmp.string());
    }
    fs::rename(tmp, path);
}

inline std::string read_text(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + path.string());
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

class Manifest {
public:
    explicit Manifest(fs::path path) : path_(std::move(path)) {
        if (fs::exists(path_)) {
            try {
                doc_ = nlohmann::json::parse(read_text(path_));
            } catch (const nlohmann::json::exception& e) {
                throw FormatError(std::string("manifest is not valid JSON: ") + e.what(), 0);
            }
        }
        if (!doc_.is_object()) doc_ = nlohmann::json::object();
        if (!doc_.contains("stages")) doc_["stages"] = nlohmann::json::object();
        if (!doc_.contains("tables")) doc_["tables"] = nlohmann::json::object();
    }

    const nlohmann::json& doc() const { return doc_; }
    bool has_stage(const std::string& name) const { return doc_["stages"].contains(name); }

    /// Records a finished stage and writes the manifest.
    void record_stage(const std::string& name, const nlohmann::json& record, std::uint64_t config_hash,
                      const std::string& code_version, std::uint64_t seed) {
        doc_["config_hash"] = hex(config_hash);
        doc_["code_version"] = code_version;
        doc_["seed"] = seed;
        doc_["stages"][name] = record;
        write_atomic(path_, doc_.dump(2) + "\n");
    }

    void record_table(const std::string& name, const std::string& file) {
        doc_["tables"][name] = file;
        write_atomic(path_, doc_.dump(2) + "\n");
    }

    static std::string hex(std::uint64_t v) {
        static constexpr char digits[] = "0123456789abcdef";
        std::string s(16, '0');
        for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
        return s;
    }

private:
    fs::path path_;
    nlohmann::json doc_;
};

}  // namespace tavid::harness
