// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "tavid/core/error.hpp"

namespace tavid::data {

/// One utterance. Frames are video frames (25 fps); end_frame is exclusive.
struct Turn {
    int speaker = 1;
    std::string text;
    int start_frame = 0;
    int end_frame = 1;

    bool operator==(const Turn&) const = default;
};

/// Turns ordered by start frame. Different speakers may overlap; one speaker's turns may not.
struct DialogueScript {
    std::vector<Turn> turns;

    void validate() const {
        int last_start = -1;
        int last_end[3] = {0, 0, 0};
        for (std::size_t i = 0; i < turns.size(); ++i) {
            const Turn& t = turns[i];
            const std::string where = "DialogueScript turn " + std::to_string(i) + ": ";
            require(t.speaker == 1 || t.speaker == 2, where + "speaker must be 1 or 2");
            require(t.start_frame >= 0, where + "negative start frame");
            require(t.end_frame > t.start_frame, where + "end frame must exceed start frame");
            require(t.start_frame >= last_start, where + "turns not sorted by start frame");
            require(t.start_frame >= last_end[t.speaker], where + "overlaps an earlier turn of the same speaker");
            last_start = t.start_frame;
            last_end[t.speaker] = t.end_frame;
        }
    }

    int end_frame() const {
        int e = 0;
        for (const auto& t : turns) e = std::max(e, t.end_frame);
        return e;
    }

    bool operator==(const DialogueScript&) const = default;
};

}  // namespace tavid::data
