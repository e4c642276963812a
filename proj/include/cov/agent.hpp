#pragma once

// The coarse-to-fine pipeline: view selection over subsampled frames, then
// the action-observation loop with budget forcing and bounded parse retries.

#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cov/chat.hpp"
#include "cov/context.hpp"
#include "cov/errors.hpp"
#include "cov/gateway.hpp"
#include "cov/geometry.hpp"
#include "cov/image.hpp"
#include "cov/prompts.hpp"
#include "cov/protocol.hpp"
#include "cov/render.hpp"
#include "cov/scene.hpp"

namespace cov {

enum class Termination { Answered, StepCapForced, ParseForced };

inline const char* termination_name(Termination t) {
    switch (t) {
        case Termination::Answered: return "answered";
        case Termination::StepCapForced: return "step_cap_forced";
        case Termination::ParseForced: return "parse_forced";
    }
    return "answered";
}

inline Termination termination_from_name(const std::string& s) {
    if (s == "answered") return Termination::Answered;
    if (s == "step_cap_forced") return Termination::StepCapForced;
    if (s == "parse_forced") return Termination::ParseForced;
    throw ValidationError("unknown termination: " + s);
}

struct LoopBudget {
    int min_steps = 1;
    int max_steps = 12;
    int max_parse_retries = 1;
    // consecutive premature answers tolerated before the loop gives up and
    // accepts the answer as forced
    int nudge_limit = 3;

    void validate() const {
        if (min_steps < 0) throw ValidationError("min_steps must be >= 0");
        if (max_steps < std::max(1, min_steps))
            throw ValidationError("max_steps must be >= max(1, min_steps)");
        if (max_parse_retries < 0)
            throw ValidationError("max_parse_retries must be >= 0");
        if (nudge_limit < 1) throw ValidationError("nudge_limit must be >= 1");
    }
};

struct TranscriptEntry {
    std::string role;
    std::string text;
    int images = 0;
    std::string tag;  // opening | step_reply | observation | nudge | ...

    nlohmann::json to_json() const {
        return {{"role", role}, {"text", text}, {"images", images}, {"tag", tag}};
    }
    static TranscriptEntry from_json(const nlohmann::json& j) {
        TranscriptEntry e;
        e.role = j.at("role").get<std::string>();
        e.text = j.at("text").get<std::string>();
        e.images = j.at("images").get<int>();
        e.tag = j.at("tag").get<std::string>();
        return e;
    }
};

struct TrajectoryPoint {
    Action action;
    CameraPose pose;  // pose after the action
};

struct EpisodeResult {
    std::string episode_id;
    std::string mode;  // baseline | cov | no-selection
    // question and references ride along so a run directory can be re-scored
    // without the original episode manifest
    std::string question;
    std::string ground_truth;
    std::vector<std::string> extra_answers;
    std::string answer;
    Termination termination = Termination::Answered;
    std::string forced_reason;  // step_cap | nudge_limit | parse (when forced)
    int step_count = 0;
    CameraPose start_pose;
    std::vector<int> selected_anchor_ids;
    bool selection_fallback = false;
    bool selection_lenient = false;
    std::vector<TrajectoryPoint> trajectory;
    std::vector<TranscriptEntry> transcript;
    size_t request_count = 0;
    int evictions = 0;
    int parse_retries = 0;
    int nudges = 0;
    bool failed = false;
    std::string failure;
    double wall_time_s = 0.0;

    nlohmann::json to_json() const {
        nlohmann::json traj = nlohmann::json::array();
        for (const auto& p : trajectory)
            traj.push_back({{"action", action_label(p.action)},
                            {"pose", p.pose.to_matrix()}});
        nlohmann::json j;
        j["episode_id"] = episode_id;
        j["mode"] = mode;
        j["question"] = question;
        j["ground_truth"] = ground_truth;
        j["extra_answers"] = extra_answers;
        j["answer"] = answer;
        j["termination"] = termination_name(termination);
        j["forced_reason"] = forced_reason;
        j["step_count"] = step_count;
        j["start_pose"] = start_pose.to_matrix();
        j["selected_anchor_ids"] = selected_anchor_ids;
        j["selection_fallback"] = selection_fallback;
        j["selection_lenient"] = selection_lenient;
        j["trajectory"] = std::move(traj);
        j["request_count"] = request_count;
        j["evictions"] = evictions;
        j["parse_retries"] = parse_retries;
        j["nudges"] = nudges;
        j["failed"] = failed;
        j["failure"] = failure;
        j["wall_time_s"] = wall_time_s;
        return j;
    }

    static EpisodeResult from_json(const nlohmann::json& j) {
        EpisodeResult r;
        r.episode_id = j.at("episode_id").get<std::string>();
        r.mode = j.at("mode").get<std::string>();
        r.question = j.at("question").get<std::string>();
        r.ground_truth = j.at("ground_truth").get<std::string>();
        r.extra_answers = j.at("extra_answers").get<std::vector<std::string>>();
        r.answer = j.at("answer").get<std::string>();
        r.termination = termination_from_name(j.at("termination").get<std::string>());
        r.forced_reason = j.at("forced_reason").get<std::string>();
        r.step_count = j.at("step_count").get<int>();
        r.start_pose =
            CameraPose::from_matrix(j.at("start_pose").get<std::array<double, 16>>());
        r.selected_anchor_ids = j.at("selected_anchor_ids").get<std::vector<int>>();
        r.selection_fallback = j.at("selection_fallback").get<bool>();
        r.selection_lenient = j.at("selection_lenient").get<bool>();
        for (const auto& pj : j.at("trajectory")) {
            TrajectoryPoint p;
            const std::string label = pj.at("action").get<std::string>();
            auto parsed = parse_action_verb(label, 1 << 20, default_synonyms());
            if (!parsed.ok())
                throw MalformedFileError("unknown action in trajectory: " + label);
            p.action = *parsed.value;
            p.pose =
                CameraPose::from_matrix(pj.at("pose").get<std::array<double, 16>>());
            r.trajectory.push_back(std::move(p));
        }
        r.request_count = j.at("request_count").get<size_t>();
        r.evictions = j.at("evictions").get<int>();
        r.parse_retries = j.at("parse_retries").get<int>();
        r.nudges = j.at("nudges").get<int>();
        r.failed = j.at("failed").get<bool>();
        r.failure = j.at("failure").get<std::string>();
        r.wall_time_s = j.at("wall_time_s").get<double>();
        return r;
    }
};

struct AgentOptions {
    StepPromptOptions prompt;   // framing + image budget
    bool lenient_selection = false;
    bool rerender_anchors = false;  // ablations: re-render anchor photos
    int birds_eye_width = 640;
    int birds_eye_height = 480;
    UpAxis up_axis = UpAxis::Z;
    PromptLibrary prompts = PromptLibrary::v1();
};

inline Observation load_anchor_observation(const FrameRecord& frame) {
    Observation obs;
    obs.image = load_image(frame.image_path);
    obs.pose = frame.pose;
    obs.step_index = 0;
    obs.provenance = Provenance::AnchorFrame;
    if (obs.image.width != frame.intrinsics.width ||
        obs.image.height != frame.intrinsics.height)
        throw ValidationError("frame image size disagrees with intrinsics: " +
                              frame.image_path);
    return obs;
}

struct SelectionOutcome {
    std::vector<int> indices;  // post-subsampling frame positions
    bool fallback = false;
    bool lenient_used = false;
    std::vector<TranscriptEntry> transcript;
};

namespace detail {

inline void record_message(std::vector<TranscriptEntry>& log, const ChatMessage& m,
                           const std::string& tag) {
    log.push_back(TranscriptEntry{m.role, m.joined_text(),
                                  static_cast<int>(m.image_count()), tag});
}

inline uint64_t message_digest(const ChatMessage& m) {
    return request_fingerprint({m}, "digest", 0.0);
}

}  // namespace detail

// Coarse stage over already-subsampled frames. One corrective retry on a
// parse failure, then fall back to the first k_max frames.
inline SelectionOutcome select_views(const Episode& episode,
                                     const std::vector<FrameRecord>& frames,
                                     Backend& backend, int k_max,
                                     const AgentOptions& opts = {}) {
    if (frames.empty()) throw ValidationError("select_views over zero frames");

    std::vector<Observation> frame_obs;
    frame_obs.reserve(frames.size());
    for (const auto& f : frames) frame_obs.push_back(load_anchor_observation(f));

    SelectionOutcome out;
    try {
        auto messages = render_view_select_prompt(episode.question, frame_obs, k_max,
                                                  opts.prompt.max_images, opts.prompts);
        for (const auto& m : messages)
            detail::record_message(out.transcript, m, "selection_request");

        const int frame_count = static_cast<int>(frames.size());
        for (int attempt = 0; attempt < 2; ++attempt) {
            const std::string reply = backend.complete(messages);
            detail::record_message(out.transcript, ChatMessage::assistant(reply),
                                   "selection_reply");
            auto parsed =
                parse_selection(reply, frame_count, k_max, opts.lenient_selection);
            if (parsed.ok()) {
                out.indices = parsed->indices;
                out.lenient_used = opts.lenient_selection;
                return out;
            }
            if (attempt == 0) {
                messages.push_back(ChatMessage::assistant(reply));
                const ChatMessage retry = ChatMessage::user(
                    "Your reply could not be parsed (" +
                    parsed.failure->message() +
                    "). Reply with a single line of the form SELECT: i1, i2, ... "
                    "using frame numbers shown in the labels.");
                messages.push_back(retry);
                detail::record_message(out.transcript, retry, "selection_retry");
            }
        }
    } catch (const TooManyImagesError&) {
        throw;
    } catch (const Error& e) {
        throw BackendFailureError(episode.episode_id,
                                  std::string("selection failed: ") + e.what());
    }

    out.fallback = true;
    const int take = std::min<int>(k_max, static_cast<int>(frames.size()));
    for (int i = 0; i < take; ++i) out.indices.push_back(i);
    detail::record_message(
        out.transcript,
        ChatMessage::user("[selection fell back to the first " +
                          std::to_string(take) + " frames]"),
        "selection_fallback");
    return out;
}

struct EpisodeOutcome {
    EpisodeResult result;
    AgentContext context;  // carries step observations for persistence
};

// last-resort answer when even the forced reply has no ANSWER line
inline std::string protocol_fallback_answer(const std::string& reply) {
    const std::string trimmed = detail::trim(reply);
    return trimmed.empty() ? "(no answer)" : trimmed;
}

// The fine stage. anchors_idx are positions into `frames` (the subsampled
// list); the starting pose is the first anchor's.
inline EpisodeOutcome run_cov_loop(const Episode& episode,
                                   const ScenePointCloud& scene,
                                   const std::vector<FrameRecord>& frames,
                                   const std::vector<int>& anchors_idx,
                                   Backend& backend, const LoopBudget& budget,
                                   const MotionConfig& motion,
                                   const RenderSettings& render,
                                   const AgentOptions& opts = {}) {
    budget.validate();
    motion.validate();
    render.validate();
    if (anchors_idx.empty()) throw ValidationError("run_cov_loop needs anchors");

    const auto t_start = std::chrono::steady_clock::now();
    const size_t requests_before = backend.request_count();

    EpisodeOutcome out;
    EpisodeResult& result = out.result;
    AgentContext& ctx = out.context;
    result.episode_id = episode.episode_id;
    result.mode = "cov";
    result.question = episode.question;
    result.ground_truth = episode.ground_truth;
    result.extra_answers = episode.extra_answers;
    result.selected_anchor_ids = anchors_idx;

    ctx.question = episode.question;
    for (int idx : anchors_idx) {
        if (idx < 0 || idx >= static_cast<int>(frames.size()))
            throw InvalidAnchorError("anchor index " + std::to_string(idx) +
                                     " outside the subsampled frame list");
        const auto& frame = frames[static_cast<size_t>(idx)];
        Observation obs = opts.rerender_anchors
                              ? render_view(scene, frame.pose, frame.intrinsics, render)
                              : load_anchor_observation(frame);
        obs.provenance = Provenance::AnchorFrame;
        ctx.anchors.push_back(std::move(obs));
        ctx.anchor_frame_ids.push_back(idx);
        ctx.anchor_intrinsics.push_back(frame.intrinsics);
    }
    ctx.birds_eye = render_birds_eye(scene, opts.birds_eye_width,
                                     opts.birds_eye_height, render, opts.up_axis);
    ctx.current_pose = ctx.anchors.front().pose;
    ctx.current_intrinsics = ctx.anchor_intrinsics.front();
    result.start_pose = ctx.current_pose;

    std::vector<CameraPose> anchor_poses;
    for (const auto& a : ctx.anchors) anchor_poses.push_back(a.pose);

    // conversation is append-only; the image budget applies to a wire copy
    std::vector<ChatMessage> conversation =
        render_cov_step_prompt(ctx, budget.min_steps, budget.max_steps, opts.prompt,
                               opts.prompts)
            .messages;
    for (const auto& m : conversation)
        detail::record_message(result.transcript, m, "opening");

    std::vector<uint64_t> digests;
    for (const auto& m : conversation) digests.push_back(detail::message_digest(m));
    auto assert_monotonic = [&]() {
        if (conversation.size() < digests.size())
            throw ValidationError("conversation shrank; context must be append-only");
        for (size_t i = 0; i < digests.size(); ++i)
            if (detail::message_digest(conversation[i]) != digests[i])
                throw ValidationError("conversation entry " + std::to_string(i) +
                                      " mutated; context must be append-only");
        for (size_t i = digests.size(); i < conversation.size(); ++i)
            digests.push_back(detail::message_digest(conversation[i]));
    };
    auto append = [&](ChatMessage m, const std::string& tag) {
        detail::record_message(result.transcript, m, tag);
        conversation.push_back(std::move(m));
        assert_monotonic();
    };

    auto complete_wire = [&]() {
        std::vector<ChatMessage> wire = conversation;
        result.evictions += apply_image_budget(wire, opts.prompt.max_images);
        try {
            return backend.complete(wire);
        } catch (const Error& e) {
            throw BackendFailureError(episode.episode_id, e.what());
        }
    };

    auto finish = [&](std::string answer, Termination term, std::string reason) {
        result.answer = std::move(answer);
        result.termination = term;
        result.forced_reason = std::move(reason);
        result.step_count = ctx.step_count();
        result.request_count = backend.request_count() - requests_before;
        result.wall_time_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
                .count();
    };

    int consecutive_nudges = 0;
    int parse_failures_this_step = 0;

    while (true) {
        if (ctx.step_count() >= budget.max_steps) {
            append(render_answer_now(opts.prompts), "answer_now");
            const std::string reply = complete_wire();
            append(ChatMessage::assistant(reply), "forced_final");
            const auto parsed =
                parse_step(reply, static_cast<int>(ctx.anchors.size()));
            const std::string answer = parsed.ok() && parsed->is_final
                                           ? parsed->answer
                                           : protocol_fallback_answer(reply);
            finish(answer, Termination::StepCapForced, "step_cap");
            return out;
        }

        const std::string reply = complete_wire();
        const auto parsed = parse_step(reply, static_cast<int>(ctx.anchors.size()));

        if (!parsed.ok()) {
            append(ChatMessage::assistant(reply), "step_reply_unparsed");
            if (parse_failures_this_step < budget.max_parse_retries) {
                ++parse_failures_this_step;
                ++result.parse_retries;
                append(render_parse_retry(*parsed.failure, opts.prompts),
                       "parse_retry");
                continue;
            }
            append(render_answer_now(opts.prompts), "answer_now_after_parse");
            const std::string forced = complete_wire();
            append(ChatMessage::assistant(forced), "forced_final");
            const auto forced_parse =
                parse_step(forced, static_cast<int>(ctx.anchors.size()));
            const std::string answer = forced_parse.ok() && forced_parse->is_final
                                           ? forced_parse->answer
                                           : protocol_fallback_answer(forced);
            finish(answer, Termination::ParseForced, "parse");
            return out;
        }
        parse_failures_this_step = 0;

        if (parsed->is_final) {
            if (ctx.step_count() >= budget.min_steps) {
                append(ChatMessage::assistant(reply), "final");
                finish(parsed->answer, Termination::Answered, "");
                return out;
            }
            ++result.nudges;
            ++consecutive_nudges;
            append(ChatMessage::assistant(reply), "premature_final");
            if (consecutive_nudges > budget.nudge_limit) {
                finish(parsed->answer, Termination::StepCapForced, "nudge_limit");
                return out;
            }
            append(render_budget_nudge(budget.min_steps, ctx.step_count(),
                                       opts.prompts),
                   "nudge");
            continue;
        }

        // a motion or a switch
        consecutive_nudges = 0;
        const Action& action = parsed->action;
        CameraPose new_pose;
        try {
            new_pose = apply_action(ctx.current_pose, action, motion, scene.aabb,
                                    std::span<const CameraPose>(anchor_poses));
        } catch (const InvalidAnchorError&) {
            // parse_step validates the index, so this indicates a logic bug
            throw;
        }
        if (action.kind == ActionKind::SwitchTo)
            ctx.current_intrinsics =
                ctx.anchor_intrinsics[static_cast<size_t>(action.anchor_index)];

        Observation obs = render_view(scene, new_pose, ctx.current_intrinsics, render);
        obs.step_index = ctx.step_count() + 1;

        append(ChatMessage::assistant(reply), "step_reply");
        ChatMessage obs_msg;
        obs_msg.role = "user";
        obs_msg.parts.push_back(ChatPart::make_text(opts.prompts.render(
            "observation_label", {{"step", std::to_string(obs.step_index)},
                                  {"action", action_label(action)}})));
        obs_msg.parts.push_back(observation_image_part(obs));

        StepRecord record;
        record.decision = *parsed;
        record.raw_reply = reply;
        record.observation = obs;
        ctx.append_step(std::move(record));
        result.trajectory.push_back(TrajectoryPoint{action, new_pose});

        append(std::move(obs_msg), "observation");
    }
}

// One-shot QA over all subsampled frames.
inline EpisodeOutcome run_baseline(const Episode& episode,
                                   const std::vector<FrameRecord>& frames,
                                   Backend& backend, const AgentOptions& opts = {}) {
    if (frames.empty()) throw ValidationError("baseline needs frames");
    const auto t_start = std::chrono::steady_clock::now();
    const size_t requests_before = backend.request_count();

    EpisodeOutcome out;
    EpisodeResult& result = out.result;
    result.episode_id = episode.episode_id;
    result.mode = "baseline";
    result.question = episode.question;
    result.ground_truth = episode.ground_truth;
    result.extra_answers = episode.extra_answers;
    result.start_pose = frames.front().pose;

    std::vector<Observation> frame_obs;
    for (const auto& f : frames) frame_obs.push_back(load_anchor_observation(f));

    try {
        const auto messages = render_baseline_prompt(
            episode.question, frame_obs, opts.prompt.max_images, opts.prompts);
        for (const auto& m : messages)
            detail::record_message(result.transcript, m, "baseline_request");
        const std::string reply = backend.complete(messages);
        detail::record_message(result.transcript, ChatMessage::assistant(reply),
                               "baseline_reply");
        const auto parsed = parse_step(reply, 0);
        result.answer = parsed.ok() && parsed->is_final
                            ? parsed->answer
                            : protocol_fallback_answer(reply);
    } catch (const TooManyImagesError&) {
        throw;
    } catch (const Error& e) {
        throw BackendFailureError(episode.episode_id, e.what());
    }
    result.termination = Termination::Answered;
    result.step_count = 0;
    result.request_count = backend.request_count() - requests_before;
    result.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
            .count();
    return out;
}

// Ablation: the loop with V' = all subsampled frames, no selection stage.
inline EpisodeOutcome run_no_selection(const Episode& episode,
                                       const ScenePointCloud& scene,
                                       const std::vector<FrameRecord>& frames,
                                       Backend& backend, const LoopBudget& budget,
                                       const MotionConfig& motion,
                                       const RenderSettings& render,
                                       const AgentOptions& opts = {}) {
    std::vector<int> all_idx(frames.size());
    for (size_t i = 0; i < all_idx.size(); ++i) all_idx[i] = static_cast<int>(i);
    EpisodeOutcome out = run_cov_loop(episode, scene, frames, all_idx, backend,
                                      budget, motion, render, opts);
    out.result.mode = "no-selection";
    return out;
}

// Replays a result's action list through apply_action and checks every
// logged pose; used by tests and the acceptance gate.
inline double trajectory_replay_error(const EpisodeResult& result,
                                      const std::vector<CameraPose>& anchor_poses,
                                      const MotionConfig& motion, const Aabb& bounds) {
    CameraPose pose = result.start_pose;
    double worst = 0.0;
    for (const auto& point : result.trajectory) {
        pose = apply_action(pose, point.action, motion, bounds,
                            std::span<const CameraPose>(anchor_poses));
        const auto a = pose.to_matrix();
        const auto b = point.pose.to_matrix();
        for (size_t i = 0; i < 16; ++i)
            worst = std::max(worst, std::abs(a[i] - b[i]));
    }
    return worst;
}

}  // namespace cov
