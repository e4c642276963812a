#pragma once

// Prompt construction for the three stages (baseline QA, view selection, the
// action loop) plus judge, nudge, and retry turns. Templates are plain text
// with {placeholder} slots, embedded here as version v1 and optionally
// overridden from a prompts/ directory.

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cov/chat.hpp"
#include "cov/context.hpp"
#include "cov/errors.hpp"
#include "cov/protocol.hpp"
#include "cov/render.hpp"

namespace cov {

namespace prompt_text {

inline const std::map<std::string, std::string>& v1() {
    static const std::map<std::string, std::string> texts = {
        {"baseline_system",
         R"(You are answering a question about a 3D indoor scene. You are given frames sampled from a video walkthrough of the scene. Study the frames and answer the question concisely.

Reply with a single line of the form:
ANSWER: <your answer>
)"},
        {"baseline_user",
         R"(Question: {question}

The sampled frames of the scene follow.
)"},
        {"view_select_system",
         R"(You are choosing camera views for a question about a 3D scene. You will be shown numbered frames sampled from a walkthrough video. Pick the frames most useful for answering the question, most relevant first.

Reply with one line of the form:
SELECT: i1, i2, ...
listing at most {k_max} distinct frame numbers taken from the labels below.
)"},
        {"view_select_user",
         R"(Question: {question}

The numbered frames follow. Reply with a single SELECT: line and nothing else.
)"},
        {"cov_step_system",
         R"(You are an embodied agent exploring a 3D scene to answer a question. You control a camera. Each turn you either take exactly one action to change your viewpoint or give your final answer.

Available actions (use exactly these words after "ACTION:"):
- move forward
- move backward
- move left
- move right
- move up
- move down
- yaw left
- yaw right
- pitch up
- pitch down
- roll cw
- roll ccw
- switch to view <i>   (jump to anchor view i; valid i: 0 to {anchor_max})

Reply in exactly this format:
THINK: <one short line of reasoning>
ACTION: <one action from the list>
or, when you are ready to answer:
THINK: <one short line of reasoning>
ANSWER: <your final answer>

{budget_clause}
)"},
        {"budget_clause_min",
         R"(Exploration budget: take at least {min_steps} actions before answering; you may take at most {max_steps}.)"},
        {"budget_clause_nomin",
         R"(Exploration budget: you may take at most {max_steps} actions before you must answer.)"},
        {"cov_step_user",
         R"(Question: {question}

You start at anchor view 0. The anchor views and a bird's-eye overview of the scene follow. After each action you take, you will receive the new observation.
)"},
        {"anchor_label", R"(Anchor view {index}:)"},
        {"birds_eye_label", R"(Bird's-eye overview of the scene:)"},
        {"observation_label", R"(Observation after step {step} ({action}):)"},
        {"evicted_note",
         R"(Observation image from step {step} was dropped to fit the image budget; its pose is unchanged in the log.)"},
        {"budget_nudge",
         R"(Your answer is not accepted yet: take at least {min_steps} actions before answering; you have taken {step_count}. Keep exploring the scene and reply with your next action.
)"},
        {"answer_now",
         R"(You have reached the maximum number of actions. You must answer now. Reply with exactly:
THINK: <one short line of reasoning>
ANSWER: <your final answer>
)"},
        {"parse_retry",
         R"(Your last reply could not be parsed ({error}; offending text: "{span}"). Reply again using exactly this format:
THINK: <one short line of reasoning>
ACTION: <one action from the allowed list>
or
THINK: <one short line of reasoning>
ANSWER: <your final answer>
)"},
        {"judge_system",
         R"(You are grading a predicted answer to a question about a 3D scene against a ground-truth answer. Rate semantic agreement on a 1-5 scale:
5: matches the ground truth or an acceptable alternative in meaning.
4: mostly correct, minor omissions or additions.
3: partially correct.
2: mostly wrong but mentions something relevant.
1: wrong, irrelevant, or empty.

Reply with a single integer from 1 to 5 and nothing else.
)"},
        {"judge_user",
         R"(Question: {question}
Ground-truth answer: {ground_truth}{extras_clause}
Predicted answer: {prediction}

Reply with the 1-5 score only.
)"},
    };
    return texts;
}

}  // namespace prompt_text

// {placeholder} substitution; placeholders are [A-Za-z_][A-Za-z0-9_]* and
// every one referenced must be bound.
inline std::string render_template(const std::string& text,
                                   const std::map<std::string, std::string>& bindings) {
    std::string out;
    out.reserve(text.size());
    size_t i = 0;
    while (i < text.size()) {
        if (text[i] != '{') {
            out += text[i++];
            continue;
        }
        size_t j = i + 1;
        if (j < text.size() &&
            (std::isalpha(static_cast<unsigned char>(text[j])) || text[j] == '_')) {
            while (j < text.size() &&
                   (std::isalnum(static_cast<unsigned char>(text[j])) || text[j] == '_'))
                ++j;
            if (j < text.size() && text[j] == '}') {
                const std::string name = text.substr(i + 1, j - i - 1);
                auto it = bindings.find(name);
                if (it == bindings.end())
                    throw UnboundPlaceholderError("unbound placeholder {" + name + "}");
                out += it->second;
                i = j + 1;
                continue;
            }
        }
        out += text[i++];  // a brace that is not a placeholder passes through
    }
    return out;
}

class PromptLibrary {
public:
    static PromptLibrary v1() {
        PromptLibrary lib;
        lib.texts_ = prompt_text::v1();
        return lib;
    }

    // Starts from v1 and overrides any <name>.txt found in the directory.
    static PromptLibrary load_dir(const std::string& dir) {
        namespace fs = std::filesystem;
        PromptLibrary lib = v1();
        if (!fs::is_directory(dir))
            throw IoError("prompt directory not found: " + dir);
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (!entry.is_regular_file() || entry.path().extension() != ".txt")
                continue;
            std::ifstream in(entry.path());
            if (!in) throw IoError("cannot open prompt file: " + entry.path().string());
            std::ostringstream ss;
            ss << in.rdbuf();
            lib.texts_[entry.path().stem().string()] = ss.str();
        }
        return lib;
    }

    // Writes the embedded set out as one file per template.
    void write_dir(const std::string& dir) const {
        namespace fs = std::filesystem;
        fs::create_directories(dir);
        for (const auto& [name, text] : texts_) {
            std::ofstream out(fs::path(dir) / (name + ".txt"),
                              std::ios::binary | std::ios::trunc);
            if (!out) throw IoError("cannot write prompt file: " + name);
            out << text;
        }
    }

    const std::string& text(const std::string& name) const {
        auto it = texts_.find(name);
        if (it == texts_.end())
            throw UnboundPlaceholderError("no prompt template named '" + name + "'");
        return it->second;
    }

    std::string render(const std::string& name,
                       const std::map<std::string, std::string>& bindings) const {
        return render_template(text(name), bindings);
    }

    const std::map<std::string, std::string>& all() const { return texts_; }

private:
    std::map<std::string, std::string> texts_;
};

inline const PromptLibrary& default_prompts() {
    static const PromptLibrary lib = PromptLibrary::v1();
    return lib;
}

inline ChatPart observation_image_part(const Observation& obs) {
    return ChatPart::make_image(encode_png(obs.image), "image/png");
}

// Frames arrive numbered 0..n-1; the model must reply with a SELECT: line.
inline std::vector<ChatMessage> render_view_select_prompt(
    const std::string& question, const std::vector<Observation>& frames, int k_max,
    int max_images, const PromptLibrary& lib = default_prompts()) {
    if (frames.empty())
        throw ValidationError("view selection needs at least one frame");
    if (static_cast<int>(frames.size()) > max_images)
        throw TooManyImagesError("selection over " + std::to_string(frames.size()) +
                                 " frames exceeds the image budget of " +
                                 std::to_string(max_images) +
                                 "; subsample more aggressively");

    std::vector<ChatMessage> messages;
    messages.push_back(ChatMessage::system(
        lib.render("view_select_system", {{"k_max", std::to_string(k_max)}})));

    ChatMessage user;
    user.role = "user";
    user.parts.push_back(ChatPart::make_text(
        lib.render("view_select_user", {{"question", question}})));
    for (size_t i = 0; i < frames.size(); ++i) {
        user.parts.push_back(ChatPart::make_text("Frame " + std::to_string(i) + ":"));
        user.parts.push_back(observation_image_part(frames[i]));
    }
    messages.push_back(std::move(user));
    return messages;
}

inline std::vector<ChatMessage> render_baseline_prompt(
    const std::string& question, const std::vector<Observation>& frames,
    int max_images, const PromptLibrary& lib = default_prompts()) {
    if (frames.empty()) throw ValidationError("baseline needs at least one frame");
    if (static_cast<int>(frames.size()) > max_images)
        throw TooManyImagesError("baseline over " + std::to_string(frames.size()) +
                                 " frames exceeds the image budget of " +
                                 std::to_string(max_images));

    std::vector<ChatMessage> messages;
    messages.push_back(ChatMessage::system(lib.text("baseline_system")));
    ChatMessage user;
    user.role = "user";
    user.parts.push_back(
        ChatPart::make_text(lib.render("baseline_user", {{"question", question}})));
    for (size_t i = 0; i < frames.size(); ++i) {
        user.parts.push_back(ChatPart::make_text("Frame " + std::to_string(i) + ":"));
        user.parts.push_back(observation_image_part(frames[i]));
    }
    messages.push_back(std::move(user));
    return messages;
}

struct StepPromptOptions {
    bool single_shot = false;  // one combined user turn instead of a dialogue
    int max_images = 32;
};

struct RenderedPrompt {
    std::vector<ChatMessage> messages;
    std::vector<int> evicted_steps;  // 1-based step indices whose image was dropped
};

// Rebuilds the full conversation from the context every iteration. Oldest
// rendered step images are evicted first when the image budget is exceeded;
// anchor and bird's-eye images are never evicted.
inline RenderedPrompt render_cov_step_prompt(
    const AgentContext& ctx, int min_steps, int max_steps,
    const StepPromptOptions& opts = {}, const PromptLibrary& lib = default_prompts()) {
    ctx.validate();

    const std::string budget_clause =
        min_steps > 0
            ? lib.render("budget_clause_min",
                         {{"min_steps", std::to_string(min_steps)},
                          {"max_steps", std::to_string(max_steps)}})
            : lib.render("budget_clause_nomin",
                         {{"max_steps", std::to_string(max_steps)}});
    const std::string system_text = lib.render(
        "cov_step_system",
        {{"anchor_max", std::to_string(ctx.anchors.size() - 1)},
         {"budget_clause", budget_clause}});

    // figure out which step images fit: keep the newest
    const int fixed_images = static_cast<int>(ctx.anchors.size()) + 1;
    int step_image_budget = opts.max_images - fixed_images;
    if (step_image_budget < 0) step_image_budget = 0;
    const int n_steps = ctx.step_count();
    const int first_kept =
        n_steps > step_image_budget ? n_steps - step_image_budget : 0;

    RenderedPrompt out;
    for (int s = 0; s < first_kept; ++s) out.evicted_steps.push_back(s + 1);

    std::vector<ChatPart> opening;
    opening.push_back(ChatPart::make_text(
        lib.render("cov_step_user", {{"question", ctx.question}})));
    for (size_t i = 0; i < ctx.anchors.size(); ++i) {
        opening.push_back(ChatPart::make_text(
            lib.render("anchor_label", {{"index", std::to_string(i)}})));
        opening.push_back(observation_image_part(ctx.anchors[i]));
    }
    opening.push_back(ChatPart::make_text(lib.text("birds_eye_label")));
    opening.push_back(observation_image_part(ctx.birds_eye));

    auto step_parts = [&](int s) {
        const auto& rec = ctx.steps[static_cast<size_t>(s)];
        std::vector<ChatPart> parts;
        if (s < first_kept) {
            parts.push_back(ChatPart::make_text(
                lib.render("evicted_note", {{"step", std::to_string(s + 1)}})));
        } else {
            parts.push_back(ChatPart::make_text(lib.render(
                "observation_label",
                {{"step", std::to_string(s + 1)},
                 {"action", action_label(rec.decision.action)}})));
            parts.push_back(observation_image_part(rec.observation));
        }
        return parts;
    };

    out.messages.push_back(ChatMessage::system(system_text));
    if (opts.single_shot) {
        ChatMessage user;
        user.role = "user";
        user.parts = std::move(opening);
        for (int s = 0; s < n_steps; ++s) {
            user.parts.push_back(ChatPart::make_text(
                "Your step " + std::to_string(s + 1) + " reply was:\n" +
                ctx.steps[static_cast<size_t>(s)].raw_reply));
            for (auto& p : step_parts(s)) user.parts.push_back(std::move(p));
        }
        out.messages.push_back(std::move(user));
    } else {
        ChatMessage user;
        user.role = "user";
        user.parts = std::move(opening);
        out.messages.push_back(std::move(user));
        for (int s = 0; s < n_steps; ++s) {
            out.messages.push_back(
                ChatMessage::assistant(ctx.steps[static_cast<size_t>(s)].raw_reply));
            ChatMessage obs_msg;
            obs_msg.role = "user";
            obs_msg.parts = step_parts(s);
            out.messages.push_back(std::move(obs_msg));
        }
    }
    return out;
}

// Trims a wire copy of the conversation down to max_images by replacing the
// oldest step images with text notes. Images in the opening user turn
// (anchors + bird's-eye) are never touched. Returns how many were evicted.
inline int apply_image_budget(std::vector<ChatMessage>& messages, int max_images) {
    int total = static_cast<int>(count_images(messages));
    if (total <= max_images) return 0;

    bool seen_first_user = false;
    int evicted = 0;
    for (auto& m : messages) {
        const bool protected_msg = !seen_first_user;
        if (m.role == "user" && !seen_first_user) {
            seen_first_user = true;
            continue;
        }
        if (protected_msg) continue;
        for (auto& p : m.parts) {
            if (total <= max_images) return evicted;
            if (p.kind != ChatPart::Kind::Image) continue;
            p = ChatPart::make_text(
                "[an earlier observation image was omitted to fit the image budget]");
            --total;
            ++evicted;
        }
    }
    return evicted;
}

inline ChatMessage render_budget_nudge(int min_steps, int step_count,
                                       const PromptLibrary& lib = default_prompts()) {
    return ChatMessage::user(
        lib.render("budget_nudge", {{"min_steps", std::to_string(min_steps)},
                                    {"step_count", std::to_string(step_count)}}));
}

inline ChatMessage render_answer_now(const PromptLibrary& lib = default_prompts()) {
    return ChatMessage::user(lib.text("answer_now"));
}

inline ChatMessage render_parse_retry(const ParseFailure& failure,
                                      const PromptLibrary& lib = default_prompts()) {
    return ChatMessage::user(
        lib.render("parse_retry", {{"error", parse_error_name(failure.kind)},
                                   {"span", failure.span}}));
}

inline std::vector<ChatMessage> render_judge_prompt(
    const std::string& question, const std::string& ground_truth,
    const std::vector<std::string>& extra_answers, const std::string& prediction,
    const PromptLibrary& lib = default_prompts()) {
    std::string extras_clause;
    if (!extra_answers.empty()) {
        extras_clause = "\nAlso acceptable: ";
        for (size_t i = 0; i < extra_answers.size(); ++i) {
            if (i) extras_clause += ", ";
            extras_clause += extra_answers[i];
        }
    }
    std::vector<ChatMessage> messages;
    messages.push_back(ChatMessage::system(lib.text("judge_system")));
    messages.push_back(ChatMessage::user(lib.render(
        "judge_user",
        {{"question", question},
         {"ground_truth", ground_truth},
         {"extras_clause", extras_clause},
         {"prediction", prediction.empty() ? std::string("(no answer)") : prediction}})));
    return messages;
}

}  // namespace cov
