#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "cov/prompts.hpp"
#include "oracles.hpp"

using namespace cov;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    static int counter = 0;
    const fs::path dir =
        fs::temp_directory_path() / ("cov_prompts_test_" + std::to_string(counter++));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

Observation tiny_obs(float shade, int step_index = 0) {
    Observation obs;
    obs.image = Image(4, 3, shade, shade, shade);
    obs.pose = CameraPose::identity();
    obs.step_index = step_index;
    return obs;
}

std::vector<Observation> tiny_frames(int n) {
    std::vector<Observation> frames;
    for (int i = 0; i < n; ++i)
        frames.push_back(tiny_obs(static_cast<float>(i) / 16.0f));
    return frames;
}

size_t count_occurrences(const std::string& haystack, const std::string& needle) {
    size_t n = 0;
    for (size_t pos = haystack.find(needle); pos != std::string::npos;
         pos = haystack.find(needle, pos + needle.size()))
        ++n;
    return n;
}

std::string all_text(const std::vector<ChatMessage>& messages) {
    std::string out;
    for (const auto& m : messages) out += m.joined_text() + "\n";
    return out;
}

AgentContext make_context(int n_anchors, const std::string& question) {
    AgentContext ctx;
    ctx.question = question;
    for (int i = 0; i < n_anchors; ++i) {
        ctx.anchors.push_back(tiny_obs(0.25f + 0.1f * static_cast<float>(i)));
        ctx.anchor_frame_ids.push_back(i * 10);
        ctx.anchor_intrinsics.push_back(Intrinsics{4.0, 4.0, 2.0, 1.5, 4, 3});
    }
    ctx.birds_eye = tiny_obs(0.9f);
    ctx.current_pose = CameraPose::identity();
    ctx.current_intrinsics = Intrinsics{4.0, 4.0, 2.0, 1.5, 4, 3};
    return ctx;
}

void push_step(AgentContext& ctx, ActionKind kind, const std::string& raw) {
    StepRecord rec;
    rec.decision = StepDecision::act(Action::motion(kind), "looking");
    rec.raw_reply = raw;
    rec.observation = tiny_obs(0.5f, ctx.step_count() + 1);
    ctx.append_step(std::move(rec));
}

}  // namespace

TEST_CASE("render_template substitutes bound placeholders") {
    CHECK(render_template("a {x} c", {{"x", "b"}}) == "a b c");
    CHECK(render_template("{x}{x}!", {{"x", "ha"}}) == "haha!");
    CHECK(render_template("no slots", {}) == "no slots");
    CHECK(render_template("{x_1} and {Y}", {{"x_1", "u"}, {"Y", "v"}}) == "u and v");

    SUBCASE("unbound placeholders throw") {
        CHECK_THROWS_AS(render_template("hello {name}", {}),
                        UnboundPlaceholderError);
    }
    SUBCASE("non-placeholder braces pass through") {
        CHECK(render_template("json {\"k\": 1}", {}) == "json {\"k\": 1}");
        CHECK(render_template("{1} { x } {", {}) == "{1} { x } {");
        CHECK(render_template("trailing {name", {}) == "trailing {name");
    }
}

TEST_CASE("view selection prompt enumerates every frame and demands a SELECT line") {
    const auto frames = tiny_frames(12);
    const auto messages =
        render_view_select_prompt("where is the sofa?", frames, 6, 32);
    REQUIRE(messages.size() == 2);
    CHECK(messages[0].role == "system");
    CHECK(messages[1].role == "user");

    size_t images = 0;
    std::vector<std::string> labels;
    for (const auto& p : messages[1].parts) {
        if (p.kind == ChatPart::Kind::Image) {
            ++images;
            CHECK(p.media_type == "image/png");
            CHECK_FALSE(p.bytes.empty());
        } else if (p.text.rfind("Frame ", 0) == 0) {
            labels.push_back(p.text);
        }
    }
    CHECK(images == 12);
    REQUIRE(labels.size() == 12);
    CHECK(labels.front() == "Frame 0:");
    CHECK(labels.back() == "Frame 11:");

    const std::string text = all_text(messages);
    CHECK(count_occurrences(text, "where is the sofa?") == 1);
    CHECK(text.find("SELECT:") != std::string::npos);
    CHECK(latest_user_text(messages).find("SELECT:") != std::string::npos);
    CHECK(messages[0].joined_text().find("6") != std::string::npos);

    SUBCASE("zero frames are rejected") {
        CHECK_THROWS_AS(render_view_select_prompt("q", {}, 6, 32), ValidationError);
    }
    SUBCASE("the image budget is enforced up front") {
        CHECK_THROWS_AS(render_view_select_prompt("q", frames, 6, 11),
                        TooManyImagesError);
    }
}

TEST_CASE("baseline prompt is one shot with all frames") {
    const auto frames = tiny_frames(5);
    const auto messages = render_baseline_prompt("how many chairs?", frames, 32);
    REQUIRE(messages.size() == 2);
    CHECK(count_images(messages) == 5);
    const std::string text = all_text(messages);
    CHECK(count_occurrences(text, "how many chairs?") == 1);
    CHECK(text.find("ANSWER:") != std::string::npos);
    CHECK_THROWS_AS(render_baseline_prompt("q", frames, 4), TooManyImagesError);
    CHECK_THROWS_AS(render_baseline_prompt("q", {}, 4), ValidationError);
}

TEST_CASE("budget clause switches on min_steps") {
    auto ctx = make_context(2, "what color is the box?");

    const auto no_min = render_cov_step_prompt(ctx, 0, 7);
    const std::string sys0 = no_min.messages[0].joined_text();
    CHECK(sys0.find("at most 7") != std::string::npos);
    CHECK(sys0.find("at least") == std::string::npos);

    const auto with_min = render_cov_step_prompt(ctx, 3, 7);
    const std::string sys3 = with_min.messages[0].joined_text();
    CHECK(sys3.find("at least 3") != std::string::npos);
    CHECK(sys3.find("at most 7") != std::string::npos);
}

TEST_CASE("cov step prompt states the question once and labels every anchor") {
    auto ctx = make_context(3, "is the door open?");
    const auto rendered = render_cov_step_prompt(ctx, 0, 5);
    const std::string text = all_text(rendered.messages);

    CHECK(count_occurrences(text, "is the door open?") == 1);
    CHECK(count_occurrences(text, "Anchor view 0:") == 1);
    CHECK(count_occurrences(text, "Anchor view 1:") == 1);
    CHECK(count_occurrences(text, "Anchor view 2:") == 1);
    CHECK(count_occurrences(text, "Bird's-eye overview") == 1);
    // switch indices are advertised against the real anchor count
    CHECK(rendered.messages[0].joined_text().find("valid i: 0 to 2") !=
          std::string::npos);
    // anchors plus bird's-eye
    CHECK(count_images(rendered.messages) == 4);
    CHECK(rendered.evicted_steps.empty());

    SUBCASE("a context with no anchors fails validation") {
        AgentContext empty;
        empty.question = "q";
        empty.birds_eye = tiny_obs(0.5f);
        CHECK_THROWS_AS(render_cov_step_prompt(empty, 0, 5), ValidationError);
    }
}

TEST_CASE("cov step prompt interleaves replies and observations in order") {
    auto ctx = make_context(2, "which room is larger?");
    push_step(ctx, ActionKind::MoveForward, "THINK: go\nACTION: move forward");
    push_step(ctx, ActionKind::YawLeft, "THINK: scan\nACTION: yaw left");

    const auto rendered = render_cov_step_prompt(ctx, 0, 8);
    const auto& ms = rendered.messages;
    REQUIRE(ms.size() == 6);
    CHECK(ms[0].role == "system");
    CHECK(ms[1].role == "user");
    CHECK(ms[2].role == "assistant");
    CHECK(ms[2].joined_text() == "THINK: go\nACTION: move forward");
    CHECK(ms[3].role == "user");
    CHECK(ms[3].joined_text().find("Observation after step 1 (move forward):") !=
          std::string::npos);
    CHECK(ms[3].image_count() == 1);
    CHECK(ms[4].role == "assistant");
    CHECK(ms[4].joined_text() == "THINK: scan\nACTION: yaw left");
    CHECK(ms[5].joined_text().find("Observation after step 2 (yaw left):") !=
          std::string::npos);
    // 2 anchors + birds eye + 2 step observations
    CHECK(count_images(ms) == 5);

    SUBCASE("single shot folds the dialogue into one user turn") {
        StepPromptOptions opts;
        opts.single_shot = true;
        const auto one = render_cov_step_prompt(ctx, 0, 8, opts);
        REQUIRE(one.messages.size() == 2);
        const std::string text = one.messages[1].joined_text();
        CHECK(text.find("Your step 1 reply was:") != std::string::npos);
        CHECK(text.find("Your step 2 reply was:") != std::string::npos);
        CHECK(count_images(one.messages) == 5);
    }
}

TEST_CASE("oldest step images are evicted first under the image budget") {
    auto ctx = make_context(2, "q");
    push_step(ctx, ActionKind::MoveForward, "ACTION: move forward");
    push_step(ctx, ActionKind::YawLeft, "ACTION: yaw left");
    push_step(ctx, ActionKind::PitchUp, "ACTION: pitch up");

    // fixed images = 2 anchors + 1 birds eye; budget leaves room for 1 step
    StepPromptOptions opts;
    opts.max_images = 4;
    const auto rendered = render_cov_step_prompt(ctx, 0, 8, opts);
    CHECK(rendered.evicted_steps == std::vector<int>{1, 2});
    CHECK(count_images(rendered.messages) == 4);

    const std::string text = all_text(rendered.messages);
    CHECK(text.find("step 3 was dropped") == std::string::npos);
    CHECK(count_occurrences(text, "was dropped to fit the image budget") == 2);
    CHECK(text.find("Observation after step 3 (pitch up):") != std::string::npos);
    CHECK(text.find("Observation after step 1") == std::string::npos);

    SUBCASE("anchors and the bird's-eye survive even a zero budget") {
        StepPromptOptions strict;
        strict.max_images = 0;
        const auto r = render_cov_step_prompt(ctx, 0, 8, strict);
        CHECK(r.evicted_steps == std::vector<int>{1, 2, 3});
        CHECK(count_images(r.messages) == 3);
    }
}

TEST_CASE("apply_image_budget trims wire copies but never the opening turn") {
    auto ctx = make_context(3, "q");
    push_step(ctx, ActionKind::MoveForward, "ACTION: move forward");
    push_step(ctx, ActionKind::YawLeft, "ACTION: yaw left");
    auto messages = render_cov_step_prompt(ctx, 0, 8).messages;
    REQUIRE(count_images(messages) == 6);

    SUBCASE("no-op when under budget") {
        CHECK(apply_image_budget(messages, 6) == 0);
        CHECK(count_images(messages) == 6);
    }
    SUBCASE("evicts the oldest step image first") {
        CHECK(apply_image_budget(messages, 5) == 1);
        CHECK(count_images(messages) == 5);
        // the first user turn keeps all four images
        CHECK(messages[1].image_count() == 4);
        CHECK(messages[3].image_count() == 0);
        CHECK(messages[3].joined_text().find("omitted") != std::string::npos);
        CHECK(messages[5].image_count() == 1);
    }
    SUBCASE("the opening turn is protected even when the budget stays exceeded") {
        CHECK(apply_image_budget(messages, 0) == 2);
        CHECK(count_images(messages) == 4);
        CHECK(messages[1].image_count() == 4);
    }
}

TEST_CASE("every advertised action verb parses back to its kind") {
    const std::string sys = default_prompts().text("cov_step_system");
    for (ActionKind kind : kMotionKinds) {
        const std::string verb = action_name(kind);
        CAPTURE(verb);
        CHECK(sys.find("- " + verb) != std::string::npos);
        const auto parsed = parse_step("ACTION: " + verb, 1);
        REQUIRE(parsed.ok());
        CHECK(parsed->action == Action::motion(kind));
    }
    CHECK(sys.find("switch to view") != std::string::npos);
    CHECK(parse_step("ACTION: switch to view 0", 1)->action == Action::switch_to(0));
    CHECK(sys.find("ANSWER:") != std::string::npos);
    CHECK(sys.find("THINK:") != std::string::npos);
}

TEST_CASE("prompt fingerprints separate distinct contexts") {
    auto ctx = make_context(2, "what is on the table?");
    const auto base = render_cov_step_prompt(ctx, 0, 5);
    const uint64_t h0 = request_fingerprint(base.messages, "m", 0.0);

    auto other = make_context(2, "what is under the table?");
    const uint64_t h1 =
        request_fingerprint(render_cov_step_prompt(other, 0, 5).messages, "m", 0.0);
    CHECK(h0 != h1);

    push_step(ctx, ActionKind::MoveForward, "ACTION: move forward");
    const uint64_t h2 =
        request_fingerprint(render_cov_step_prompt(ctx, 0, 5).messages, "m", 0.0);
    CHECK(h0 != h2);

    // same context renders to the same bytes
    const uint64_t h3 = request_fingerprint(
        render_cov_step_prompt(make_context(2, "what is on the table?"), 0, 5).messages,
        "m", 0.0);
    CHECK(h0 == h3);
}

TEST_CASE("corrective turns carry the numbers and spans they promise") {
    const auto nudge = render_budget_nudge(4, 2);
    CHECK(nudge.role == "user");
    CHECK(nudge.joined_text().find("at least 4") != std::string::npos);
    CHECK(nudge.joined_text().find("you have taken 2") != std::string::npos);

    const auto now = render_answer_now();
    CHECK(now.role == "user");
    CHECK(now.joined_text().find("ANSWER:") != std::string::npos);

    const auto retry =
        render_parse_retry(ParseFailure{ParseErrorKind::UnknownVerb, "warp out"});
    CHECK(retry.joined_text().find("unknown_verb") != std::string::npos);
    CHECK(retry.joined_text().find("\"warp out\"") != std::string::npos);
}

TEST_CASE("judge prompt includes extra answers only when present") {
    const auto with = render_judge_prompt("q?", "a couch", {"sofa", "settee"},
                                          "the sofa");
    REQUIRE(with.size() == 2);
    const std::string text = all_text(with);
    CHECK(text.find("Ground-truth answer: a couch") != std::string::npos);
    CHECK(text.find("Also acceptable: sofa, settee") != std::string::npos);
    CHECK(text.find("Predicted answer: the sofa") != std::string::npos);
    CHECK(text.find("1-5") != std::string::npos);

    const auto without = render_judge_prompt("q?", "a couch", {}, "the sofa");
    CHECK(all_text(without).find("Also acceptable") == std::string::npos);

    const auto blank = render_judge_prompt("q?", "a couch", {}, "");
    CHECK(all_text(blank).find("Predicted answer: (no answer)") !=
          std::string::npos);
}

TEST_CASE("prompt library round-trips through a directory") {
    const fs::path dir = temp_dir();
    const PromptLibrary lib = PromptLibrary::v1();
    lib.write_dir(dir.string());

    int files = 0;
    for (const auto& e : fs::directory_iterator(dir)) {
        CHECK(e.path().extension() == ".txt");
        ++files;
    }
    CHECK(files == static_cast<int>(lib.all().size()));

    const PromptLibrary loaded = PromptLibrary::load_dir(dir.string());
    CHECK(loaded.all() == lib.all());

    SUBCASE("directory files override the embedded texts") {
        std::ofstream out(dir / "budget_nudge.txt", std::ios::binary);
        out << "Custom nudge: {min_steps} vs {step_count}\n";
        out.close();
        const PromptLibrary patched = PromptLibrary::load_dir(dir.string());
        CHECK(patched.text("budget_nudge").rfind("Custom nudge:", 0) == 0);
        const auto msg = render_budget_nudge(3, 1, patched);
        CHECK(msg.joined_text() == "Custom nudge: 3 vs 1\n");
        // untouched names still come from v1
        CHECK(patched.text("answer_now") == lib.text("answer_now"));
    }
    SUBCASE("missing directories and names throw") {
        CHECK_THROWS_AS(PromptLibrary::load_dir((dir / "nope").string()), IoError);
        CHECK_THROWS_AS(lib.text("no_such_template"), UnboundPlaceholderError);
    }
}

#ifndef COV_SOURCE_DIR
#define COV_SOURCE_DIR "."
#endif

TEST_CASE("shipped prompts/v1 files match the embedded templates byte for byte") {
    const fs::path dir = fs::path(COV_SOURCE_DIR) / "prompts" / "v1";
    REQUIRE_MESSAGE(fs::is_directory(dir), "missing prompt dir: run tools/make-fixtures");

    const PromptLibrary lib = PromptLibrary::v1();
    int files = 0;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() != ".txt") continue;
        ++files;
        std::ifstream in(e.path(), std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        CAPTURE(e.path().string());
        CHECK(ss.str() == lib.text(e.path().stem().string()));
    }
    CHECK(files == static_cast<int>(lib.all().size()));
}
