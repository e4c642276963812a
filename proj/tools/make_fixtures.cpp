// Regenerates everything under data/fixtures, the on-disk prompt set, and the
// committed golden renders. Deterministic: rerunning over a clean tree
// reproduces the same bytes.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cov/fixtures.hpp"
#include "cov/prompts.hpp"
#include "cov/render.hpp"
#include "cov/scene.hpp"

using namespace cov;
namespace fs = std::filesystem;

namespace {

nlohmann::json intrinsics_json(const Intrinsics& k) {
    return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx},
            {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

std::string frame_name(int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%03d.png", i);
    return buf;
}

void write_text(const fs::path& path, const std::string& body) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << body;
}

struct SceneSpec {
    std::string name;
    ScenePointCloud cloud;
    std::vector<CameraPose> poses;
};

// Renders one scene's frame track and returns the episode "frames" array.
nlohmann::json write_frames(const fs::path& root, const SceneSpec& spec,
                            const Intrinsics& intr) {
    const RenderSettings settings;
    const fs::path dir = root / "frames" / spec.name;
    fs::create_directories(dir);
    nlohmann::json frames = nlohmann::json::array();
    for (size_t i = 0; i < spec.poses.size(); ++i) {
        const auto obs = render_view(spec.cloud, spec.poses[i], intr, settings);
        save_png(obs.image, (dir / frame_name(static_cast<int>(i))).string());
        frames.push_back(
            {{"id", static_cast<int>(i)},
             {"image", "../frames/" + spec.name + "/" + frame_name(static_cast<int>(i))},
             {"pose", nlohmann::json(spec.poses[i].to_matrix())},
             {"intrinsics", intrinsics_json(intr)}});
    }
    return frames;
}

// A straight dolly through the corridor, looking east toward the yellow box.
std::vector<CameraPose> corridor_track(int n) {
    std::vector<CameraPose> out;
    for (int i = 0; i < n; ++i) {
        const double t = n > 1 ? static_cast<double>(i) / (n - 1) : 0.0;
        const double x = -3.2 + t * 5.4;
        out.push_back(fixtures::look_at({x, 0.0, 1.2}, {x + 1.0, 0.0, 1.1}));
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"regenerate fixture scenes, episodes, prompts, and goldens"};
    std::string root = ".";
    app.add_option("--root", root, "repository root to write into");
    CLI11_PARSE(app, argc, argv);

    const fs::path repo(root);
    const fs::path fix = repo / "data" / "fixtures";
    const Intrinsics intr = fixtures::frame_intrinsics(320, 240);

    std::vector<SceneSpec> scenes;
    scenes.push_back({"cube_room", fixtures::cube_room(),
                      fixtures::ring_poses(60, {0, 0, 0}, 1.4, 1.4)});
    scenes.push_back({"corridor", fixtures::corridor(), corridor_track(40)});
    scenes.push_back({"occluded_room", fixtures::occluded_room(),
                      fixtures::ring_poses(40, {0, 0, 0}, 1.3, 1.3)});

    struct EpisodeSpec {
        std::string id;
        std::string scene;
        std::string question;
        std::string answer;
        std::vector<std::string> extra_answers;
        std::string category;
    };
    const std::vector<EpisodeSpec> episodes = {
        {"fixture-001", "cube_room", "what color is the box in the corner?", "red",
         {"a red box", "red box"}, "object-color"},
        {"fixture-002", "corridor", "what color is the box at the east end?",
         "yellow", {"a yellow box"}, "object-color"},
        {"fixture-003", "occluded_room",
         "what color is the ball hidden behind the divider?", "green",
         {"a green ball"}, "object-color"},
    };

    fs::create_directories(fix / "scenes");
    std::map<std::string, nlohmann::json> frames_by_scene;
    for (const auto& spec : scenes) {
        save_point_cloud_ply(spec.cloud, (fix / "scenes" / (spec.name + ".ply")).string());
        frames_by_scene[spec.name] = write_frames(fix, spec, intr);
        std::printf("scene %-14s %7zu points, %zu frames\n", spec.name.c_str(),
                    spec.cloud.points.size(), spec.poses.size());
    }

    for (const auto& ep : episodes) {
        nlohmann::json j;
        j["episode_id"] = ep.id;
        j["scene"] = "../scenes/" + ep.scene + ".ply";
        j["question"] = ep.question;
        j["answer"] = ep.answer;
        j["extra_answers"] = ep.extra_answers;
        j["category"] = ep.category;
        j["frames"] = frames_by_scene.at(ep.scene);
        write_text(fix / "episodes" / (ep.id + ".json"), j.dump(2) + "\n");
    }

    // scripted walks: the selection reply is keyed so the same script also
    // drives no-selection runs (where no request ever mentions SELECT)
    nlohmann::json cov_scripts;
    auto keyed_select = [](const std::string& reply) {
        return nlohmann::json{{"key", "SELECT:"}, {"reply", reply}};
    };
    cov_scripts["fixture-001"] = {
        keyed_select("SELECT: 0, 2"),
        "THINK: the corner box should be ahead.\nACTION: move forward",
        "THINK: sweep toward the corner.\nACTION: yaw left",
        "THINK: re-check from the other anchor.\nACTION: switch to view 1",
        "THINK: the box is clearly red.\nANSWER: red",
    };
    cov_scripts["fixture-002"] = {
        keyed_select("SELECT: 1, 3"),
        "THINK: head down the corridor.\nACTION: move forward",
        "THINK: still too far away.\nACTION: move forward",
        "THINK: look down at the box.\nACTION: pitch down",
        "THINK: it is yellow.\nANSWER: yellow",
    };
    cov_scripts["fixture-003"] = {
        keyed_select("SELECT: 0, 1"),
        "THINK: the divider blocks the view, go around.\nACTION: yaw right",
        "THINK: through the gap.\nACTION: move forward",
        "THINK: almost there.\nACTION: move forward",
        "THINK: now I can see behind the divider.\nACTION: yaw left",
        "THINK: a green ball.\nANSWER: green",
    };
    write_text(fix / "cov_scripts.json", cov_scripts.dump(2) + "\n");

    nlohmann::json baseline_scripts;
    baseline_scripts["fixture-001"] = {"ANSWER: red"};
    baseline_scripts["fixture-002"] = {"ANSWER: yellow"};
    baseline_scripts["fixture-003"] = {"ANSWER: green"};
    write_text(fix / "baseline_scripts.json", baseline_scripts.dump(2) + "\n");

    write_text(fix / "config.toml",
               "# demo run over the bundled fixtures; outputs land in runs/ at\n"
               "# the repository root\n"
               "[run]\n"
               "episodes = \"episodes\"\n"
               "out_dir = \"../../runs\"\n"
               "run_id = \"demo\"\n"
               "mode = \"cov\"\n"
               "ratio = 10\n"
               "k_max = 4\n"
               "\n"
               "[backend]\n"
               "kind = \"scripted\"\n"
               "script = \"cov_scripts.json\"\n"
               "\n"
               "[budget]\n"
               "min_steps = 3\n"
               "max_steps = 12\n");

    write_text(repo / "data" / "synonyms.tsv",
               "# surface form\tcanonical verb (see include/cov/protocol.hpp)\n"
               "advance\tMoveForward\n"
               "retreat\tMoveBackward\n"
               "pan left\tYawLeft\n"
               "pan right\tYawRight\n"
               "glance up\tPitchUp\n"
               "glance down\tPitchDown\n"
               "hop to view\tSwitchTo\n");

    PromptLibrary::v1().write_dir((repo / "prompts" / "v1").string());
    std::printf("prompts/v1 written (%zu templates)\n",
                PromptLibrary::v1().all().size());

    const fs::path golden_dir = repo / "tests" / "golden";
    fs::create_directories(golden_dir);
    {
        const auto& cube = scenes[0].cloud;
        const auto view = render_view(cube, fixtures::golden_view_pose(),
                                      fixtures::frame_intrinsics(640, 480),
                                      RenderSettings{});
        save_png(view.image, (golden_dir / "cube_view_640x480.png").string());
        const auto top = render_birds_eye(cube, 640, 480, RenderSettings{}, UpAxis::Z);
        save_png(top.image, (golden_dir / "cube_birds_eye_640x480.png").string());
    }
    std::printf("goldens written under %s\n", golden_dir.string().c_str());
    return 0;
}
