// SPDX-License-Identifier: Apache-2.0
#pragma once

// Line-delimited JSON corpus files.
//
// Line 1 is a header {"format":"tavid-corpus","version":1,"count":N,...}; each following
// line is one sample {id, turns[], s1[], s2[], motion1[][], motion2[][], mel[][],
// identity1{}, identity2{}}. Doubles are written in shortest round-trip form, so
// load(save(x)) == x bit for bit.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tavid/data/corpus.hpp"

namespace tavid::data {

using json = nlohmann::json;

inline constexpr const char* kCorpusFormat = "tavid-corpus";
inline constexpr int kCorpusVersion = 1;

inline json tensor_to_json(const Tensor& t) {
    json rows = json::array();
    for (std::size_t i = 0; i < t.rows(); ++i) {
        auto r = t.row_span(i);
        rows.push_back(std::vector<double>(r.begin(), r.end()));
    }
    return rows;
}

inline Tensor tensor_from_json(const json& j, std::size_t expect_cols = 0) {
    if (!j.is_array()) throw InputError("expected a matrix");
    const std::size_t R = j.size();
    const std::size_t C = R ? j[0].size() : expect_cols;
    if (expect_cols && C != expect_cols) throw InputError("matrix has " + std::to_string(C) + " columns, expected " +
                                                          std::to_string(expect_cols));
    Tensor t(R, C);
    for (std::size_t i = 0; i < R; ++i) {
        if (!j[i].is_array() || j[i].size() != C) throw InputError("ragged matrix row " + std::to_string(i));
        for (std::size_t k = 0; k < C; ++k) t(i, k) = j[i][k].get<double>();
    }
    return t;
}

inline json identity_to_json(const SyntheticIdentity& id) {
    return {{"id", id.id},
            {"face", tensor_to_json(id.face)[0]},
            {"ref", tensor_to_json(id.ref)},
            {"speaker", tensor_to_json(id.speaker)[0]}};
}

inline SyntheticIdentity identity_from_json(const json& j) {
    SyntheticIdentity id;
    id.id = j.at("id").get<int>();
    id.face = Tensor::row(j.at("face").get<std::vector<double>>());
    id.ref = tensor_from_json(j.at("ref"));
    id.speaker = Tensor::row(j.at("speaker").get<std::vector<double>>());
    return id;
}

inline json script_to_json(const DialogueScript& s) {
    json turns = json::array();
    for (const auto& t : s.turns)
        turns.push_back({{"speaker", t.speaker}, {"text", t.text}, {"start", t.start_frame}, {"end", t.end_frame}});
    return turns;
}

inline DialogueScript script_from_json(const json& j) {
    DialogueScript s;
    for (const auto& t : j)
        s.turns.push_back({t.at("speaker").get<int>(), t.at("text").get<std::string>(), t.at("start").get<int>(),
                           t.at("end").get<int>()});
    s.validate();
    return s;
}

inline json sample_to_json(const Sample& s) {
    return {{"id", s.id},
            {"turns", script_to_json(s.script)},
            {"s1", s.tokens.s1},
            {"s2", s.tokens.s2},
            {"motion1", tensor_to_json(s.motion1)},
            {"motion2", tensor_to_json(s.motion2)},
            {"mel", tensor_to_json(s.mel)},
            {"identity1", identity_to_json(s.identity1)},
            {"identity2", identity_to_json(s.identity2)}};
}

inline Sample sample_from_json(const json& j, int vocab_size, int silence_index) {
    Sample s;
    s.id = j.at("id").get<int>();
    s.script = script_from_json(j.at("turns"));
    s.tokens.s1 = j.at("s1").get<std::vector<int>>();
    s.tokens.s2 = j.at("s2").get<std::vector<int>>();
    s.tokens.vocab_size = vocab_size;
    s.tokens.silence_index = silence_index;
    s.tokens.validate();
    s.motion1 = tensor_from_json(j.at("motion1"), kMotionDim);
    s.motion2 = tensor_from_json(j.at("motion2"), kMotionDim);
    require(s.motion1.rows() == s.motion2.rows(), "motion tracks differ in length");
    s.mel = tensor_from_json(j.at("mel"), kMelBins);
    s.identity1 = identity_from_json(j.at("identity1"));
    s.identity2 = identity_from_json(j.at("identity2"));
    return s;
}

inline void save_corpus(const std::vector<Sample>& samples, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::trunc);
        if (!os) throw std::runtime_error("cannot write corpus: " + tmp);
        const int vocab = samples.empty() ? kDefaultVocab : samples[0].tokens.vocab_size;
        const int sil = samples.empty() ? kSilenceToken : samples[0].tokens.silence_index;
        os << json{{"format", kCorpusFormat},
                   {"version", kCorpusVersion},
                   {"count", samples.size()},
                   {"vocab_size", vocab},
                   {"silence_index", sil}}
                  .dump()
           << '\n';
        for (const auto& s : samples) os << sample_to_json(s).dump() << '\n';
        if (!os) throw std::runtime_error("failed writing corpus: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

inline std::vector<Sample> load_corpus(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open corpus: " + path.string());
    std::string line;
    std::size_t lineno = 0;
    auto parse = [&](std::size_t n) {
        try {
            return json::parse(line);
        } catch (const json::exception& e) {
            throw FormatError(std::string("malformed record: ") + e.what(), n);
        }
    };
    if (!std::getline(is, line)) throw FormatError("empty file, missing header", 1);
    ++lineno;
    const json header = parse(lineno);
    if (!header.is_object() || header.value("format", "") != kCorpusFormat)
        throw FormatError("not a tavid corpus header", lineno);
    if (header.value("version", 0) != kCorpusVersion) throw FormatError("unsupported corpus version", lineno);
    const auto count = header.at("count").get<std::size_t>();
    const int vocab = header.value("vocab_size", kDefaultVocab);
    const int sil = header.value("silence_index", kSilenceToken);

    std::vector<Sample> out;
    out.reserve(count);
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        const json j = parse(lineno);
        try {
            out.push_back(sample_from_json(j, vocab, sil));
        } catch (const json::exception& e) {
            throw FormatError(std::string("bad sample: ") + e.what(), lineno);
        } catch (const InputError& e) {
            throw FormatError(std::string("bad sample: ") + e.what(), lineno);
        }
    }
    if (out.size() != count)
        throw FormatError("header declares " + std::to_string(count) + " samples, found " +
                              std::to_string(out.size()) + " (truncated file?)",
                          lineno + 1);
    return out;
}

}  // namespace tavid::data
