// SPDX-License-Identifier: Apache-2.0
#pragma once

// Character-level text tokens for dialogue scripts.
//
// Layout: a speaker separator opens the script and marks every change of speaker; each turn
// is then <start f> <end f> followed by its characters. Frame markers carry their frame
// number in the id, so timing survives the round trip.

#include <string>
#include <vector>

#include "tavid/data/script.hpp"
#include "tavid/data/tokens.hpp"
#include "tavid/data/world.hpp"

namespace tavid::speech {

inline constexpr int kCharCount = data::kLinguisticClasses;
inline constexpr int kSep1 = kCharCount;
inline constexpr int kSep2 = kCharCount + 1;
inline constexpr int kFrameMarkerBase = kCharCount + 2;
inline constexpr int kMaxScriptFrames = 4096;

/// Marker kinds used by the encoder's embedding table; ids above kFrameMarkerBase fold onto these.
inline constexpr int kStartKind = kFrameMarkerBase;
inline constexpr int kEndKind = kFrameMarkerBase + 1;
inline constexpr int kTextKinds = kFrameMarkerBase + 2;

inline int start_marker(int frame) { return kFrameMarkerBase + 2 * frame; }
inline int end_marker(int frame) { return kFrameMarkerBase + 2 * frame + 1; }
inline bool is_separator(int id) { return id == kSep1 || id == kSep2; }
inline bool is_frame_marker(int id) { return id >= kFrameMarkerBase; }

struct TextTokens {
    std::vector<int> ids;

    void validate() const {
        for (int id : ids)
            require(id >= 0 && id < kFrameMarkerBase + 2 * kMaxScriptFrames,
                    "TextTokens: id " + std::to_string(id) + " out of range");
    }
    bool operator==(const TextTokens&) const = default;
};

inline TextTokens tokenize_text(const data::DialogueScript& script) {
    if (script.turns.empty()) throw InputError("tokenize_text: empty script");
    script.validate();
    TextTokens out;
    int speaker = 0;
    for (std::size_t i = 0; i < script.turns.size(); ++i) {
        const auto& t = script.turns[i];
        if (t.text.empty()) throw InputError("tokenize_text: turn " + std::to_string(i) + " has empty text");
        if (t.end_frame > kMaxScriptFrames)
            throw InputError("tokenize_text: turn " + std::to_string(i) + " ends after frame " +
                             std::to_string(kMaxScriptFrames));
        std::string unknown;
        for (char c : t.text)
            if (data::char_class(c) < 0 && unknown.find(c) == std::string::npos) unknown.push_back(c);
        if (!unknown.empty())
            throw InputError("tokenize_text: turn " + std::to_string(i) + " has unknown characters \"" + unknown + "\"");
        if (t.speaker != speaker) {
            out.ids.push_back(t.speaker == 1 ? kSep1 : kSep2);
            speaker = t.speaker;
        }
        out.ids.push_back(start_marker(t.start_frame));
        out.ids.push_back(end_marker(t.end_frame));
        for (char c : t.text) out.ids.push_back(data::char_class(c));
    }
    return out;
}

inline data::DialogueScript detokenize(const TextTokens& x) {
    x.validate();
    data::DialogueScript s;
    int speaker = 0;
    std::size_t i = 0;
    while (i < x.ids.size()) {
        const int id = x.ids[i];
        if (is_separator(id)) {
            speaker = id == kSep1 ? 1 : 2;
            ++i;
            continue;
        }
        if (speaker == 0) throw FormatError("detokenize: text before the first speaker separator", i);
        if (!is_frame_marker(id) || (id - kFrameMarkerBase) % 2 != 0 || i + 1 >= x.ids.size() ||
            !is_frame_marker(x.ids[i + 1]) || (x.ids[i + 1] - kFrameMarkerBase) % 2 != 1)
            throw FormatError("detokenize: turn does not open with start and end markers", i);
        data::Turn t;
        t.speaker = speaker;
        t.start_frame = (id - kFrameMarkerBase) / 2;
        t.end_frame = (x.ids[i + 1] - kFrameMarkerBase) / 2;
        i += 2;
        while (i < x.ids.size() && x.ids[i] < kCharCount) t.text.push_back(data::kAlphabet[static_cast<std::size_t>(x.ids[i++])]);
        s.turns.push_back(std::move(t));
    }
    return s;
}

/// Per-id encoder inputs: embedding row, speaker (0 for none) and the token-rate time the id refers to.
struct TextLayout {
    std::vector<int> kind;
    std::vector<int> speaker;
    std::vector<double> time;
};

inline TextLayout text_layout(const TextTokens& x, std::size_t tokens_per_frame = data::kTokensPerFrame) {
    TextLayout L;
    int speaker = 0;
    double cursor = 0.0;
    const double tpf = static_cast<double>(tokens_per_frame);
    for (int id : x.ids) {
        int kind = id;
        double t = cursor;
        if (is_separator(id)) {
            speaker = id == kSep1 ? 1 : 2;
        } else if (is_frame_marker(id)) {
            const int rel = id - kFrameMarkerBase;
            t = tpf * (rel / 2);
            kind = rel % 2 == 0 ? kStartKind : kEndKind;
            if (kind == kStartKind) cursor = t;
        } else {
            cursor += 1.0;
        }
        L.kind.push_back(kind);
        L.speaker.push_back(speaker);
        L.time.push_back(t);
    }
    return L;
}

}  // namespace tavid::speech
