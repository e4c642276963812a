#pragma once

// Accumulated loop state: question, anchors, overview, and every step taken.
// The container is append-only; the loop asserts prefix stability each turn.

#include <string>
#include <vector>

#include "cov/errors.hpp"
#include "cov/geometry.hpp"
#include "cov/protocol.hpp"
#include "cov/render.hpp"

namespace cov {

struct StepRecord {
    StepDecision decision;
    std::string raw_reply;  // model text echoed back verbatim in later turns
    Observation observation;
};

struct AgentContext {
    std::string question;
    std::vector<Observation> anchors;   // V', in selection order
    std::vector<int> anchor_frame_ids;  // post-subsampling frame indices
    std::vector<Intrinsics> anchor_intrinsics;
    Observation birds_eye;
    std::vector<StepRecord> steps;
    CameraPose current_pose;
    Intrinsics current_intrinsics;

    int step_count() const { return static_cast<int>(steps.size()); }

    void append_step(StepRecord record) {
        steps.push_back(std::move(record));
        current_pose = steps.back().observation.pose;
    }

    void validate() const {
        if (anchors.empty()) throw ValidationError("context has no anchors");
        if (anchors.size() != anchor_frame_ids.size() ||
            anchors.size() != anchor_intrinsics.size())
            throw ValidationError("context anchor arrays disagree in length");
    }
};

}  // namespace cov
