// cov: batch runner and figure tools for viewpoint-reasoning episodes.
//
//   cov run         run a batch from a config file
//   cov sweep       rerun the batch across several step floors
//   cov score       re-score an existing run directory
//   cov render      render one view (or the bird's-eye map) of a scene
//   cov export-traj write trajectory.json / trajectory.svg for an episode

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cov/export.hpp"
#include "cov/harness.hpp"

using namespace cov;
namespace fs = std::filesystem;

namespace {

struct CommonFlags {
    std::string config_path;
    std::optional<std::string> mode;
    std::optional<int> min_steps;
    std::optional<int> max_steps;
    std::optional<int> ratio;
    std::optional<int> workers;
    std::optional<std::string> endpoint;
    std::optional<std::string> model;
    std::optional<std::string> replay;
    std::optional<std::string> run_id;
    std::optional<std::string> out_dir;
    bool force = false;
};

void add_common_flags(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_path, "run config (toml-style)")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--mode", f.mode, "baseline | cov | no-selection");
    cmd->add_option("--min-steps", f.min_steps, "reject answers before this many steps");
    cmd->add_option("--max-steps", f.max_steps, "force an answer after this many steps");
    cmd->add_option("--ratio", f.ratio, "keep every n-th frame");
    cmd->add_option("--workers", f.workers, "parallel episodes");
    cmd->add_option("--backend-endpoint", f.endpoint,
                    "chat completions endpoint (implies an http backend)");
    cmd->add_option("--model", f.model, "model name sent to the backend");
    cmd->add_option("--replay", f.replay, "serve responses from this recording");
    cmd->add_option("--run-id", f.run_id, "run directory name");
    cmd->add_option("--out-dir", f.out_dir, "parent directory for runs");
    cmd->add_flag("--force", f.force, "re-run episodes that already have results");
}

RunConfig load_config(const CommonFlags& f) {
    RunConfig config = RunConfig::from_file(f.config_path);
    CliOverrides o;
    o.mode = f.mode;
    o.min_steps = f.min_steps;
    o.max_steps = f.max_steps;
    o.ratio = f.ratio;
    o.workers = f.workers;
    o.endpoint = f.endpoint;
    o.model = f.model;
    o.replay = f.replay;
    o.run_id = f.run_id;
    o.out_dir = f.out_dir;
    o.force = f.force;
    apply_overrides(config, o);
    return config;
}

int cmd_run(const CommonFlags& flags) {
    const RunConfig config = load_config(flags);
    const BatchOutcome batch = run_batch(config);
    std::printf("%s", batch.report.to_table().c_str());
    std::printf("run dir: %s\n", batch.run_dir.string().c_str());
    std::printf("episodes %d, failed %d, skipped %d\n", batch.episodes,
                batch.failed, batch.skipped);
    return batch.exit_code;
}

int cmd_sweep(const CommonFlags& flags, const std::vector<int>& min_steps) {
    const RunConfig config = load_config(flags);
    const SweepOutcome sweep = sweep_steps(config, min_steps);
    std::printf("%-10s %-10s %-8s %-8s\n", "min_steps", "em_pct", "llm", "failed");
    for (size_t i = 0; i < sweep.rows.size(); ++i) {
        const auto& row = sweep.rows[i];
        char llm[32];
        if (row.report.llm_match_pct)
            std::snprintf(llm, sizeof(llm), "%.2f", *row.report.llm_match_pct);
        else
            std::snprintf(llm, sizeof(llm), "-");
        std::printf("%-10d %-10.2f %-8s %-8d\n", min_steps[i], row.report.em_pct,
                    llm, row.failed);
    }
    std::printf("sweep summary: %s\n", sweep.sweep_path.string().c_str());
    for (const auto& row : sweep.rows)
        if (row.exit_code != 0) return row.exit_code;
    return 0;
}

int cmd_score(const std::string& run_dir, const std::string& config_path) {
    RunConfig config;
    if (!config_path.empty()) config = RunConfig::from_file(config_path);
    size_t judge_calls = 0;
    const ScoreReport report = score_run_dir(run_dir, config, &judge_calls);
    std::printf("%s", report.to_table().c_str());
    std::printf("judge calls: %zu\n", judge_calls);
    return 0;
}

int cmd_render(const std::string& scene_path, const std::string& pose_text,
               bool birds_eye, const std::string& out_path, int width, int height,
               double hfov_deg, int splat_radius, const std::string& up_axis) {
    const ScenePointCloud scene = load_point_cloud(scene_path);
    RenderSettings settings;
    settings.splat_radius_px = splat_radius;
    const UpAxis up = up_axis == "y" ? UpAxis::Y : UpAxis::Z;
    if (up_axis != "y" && up_axis != "z")
        throw ConfigError("--up must be z|y, got '" + up_axis + "'");

    Observation obs;
    if (birds_eye) {
        obs = render_birds_eye(scene, width, height, settings, up);
    } else {
        if (pose_text.empty())
            throw ConfigError("render needs --pose (16 row-major values) or --birds-eye");
        const CameraPose pose = pose_from_string(pose_text);
        Intrinsics k;
        k.width = width;
        k.height = height;
        k.fx = k.fy = 0.5 * width / std::tan(0.5 * hfov_deg * std::numbers::pi / 180.0);
        k.cx = 0.5 * width;
        k.cy = 0.5 * height;
        obs = render_view(scene, pose, k, settings);
    }
    save_png(obs.image, out_path);
    std::printf("wrote %s (%dx%d)\n", out_path.c_str(), obs.image.width,
                obs.image.height);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"viewpoint-reasoning batch runner"};
    app.require_subcommand(1);

    CommonFlags run_flags;
    CLI::App* run = app.add_subcommand("run", "run a batch from a config file");
    add_common_flags(run, run_flags);

    CommonFlags sweep_flags;
    std::vector<int> sweep_values;
    CLI::App* sweep =
        app.add_subcommand("sweep", "run the batch at several step floors");
    add_common_flags(sweep, sweep_flags);
    sweep->add_option("--min-steps-list", sweep_values,
                      "step floors to sweep, e.g. 0 1 2 3")
        ->required()
        ->expected(-1);

    std::string score_run_dir_path, score_config;
    CLI::App* score = app.add_subcommand("score", "re-score an existing run dir");
    score->add_option("--run-dir", score_run_dir_path, "directory with episode results")
        ->required()
        ->check(CLI::ExistingDirectory);
    score->add_option("--config", score_config, "config for judge settings")
        ->check(CLI::ExistingFile);

    std::string render_scene, render_pose, render_out = "render.png";
    std::string render_up = "z";
    bool render_birds = false;
    int render_width = 640, render_height = 480, render_splat = 1;
    double render_hfov = 60.0;
    CLI::App* render = app.add_subcommand("render", "render one view of a scene");
    render->add_option("--scene", render_scene, "point cloud (.ply)")
        ->required()
        ->check(CLI::ExistingFile);
    render->add_option("--pose", render_pose,
                       "camera-to-world pose, 16 row-major values");
    render->add_flag("--birds-eye", render_birds, "top-down map instead of a view");
    render->add_option("--out", render_out, "output png path");
    render->add_option("--width", render_width, "image width");
    render->add_option("--height", render_height, "image height");
    render->add_option("--hfov-deg", render_hfov, "horizontal field of view");
    render->add_option("--splat-radius", render_splat, "splat radius in pixels");
    render->add_option("--up", render_up, "world up axis for --birds-eye (z|y)");

    std::string traj_run_dir, traj_episode, traj_format = "svg", traj_out;
    CLI::App* traj =
        app.add_subcommand("export-traj", "write an episode's trajectory file");
    traj->add_option("--run-dir", traj_run_dir, "run directory")
        ->required()
        ->check(CLI::ExistingDirectory);
    traj->add_option("--episode", traj_episode, "episode id")->required();
    traj->add_option("--format", traj_format, "svg | json");
    traj->add_option("--out", traj_out, "output path (default: episode dir)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(run_flags);
        if (sweep->parsed()) return cmd_sweep(sweep_flags, sweep_values);
        if (score->parsed()) return cmd_score(score_run_dir_path, score_config);
        if (render->parsed())
            return cmd_render(render_scene, render_pose, render_birds, render_out,
                              render_width, render_height, render_hfov,
                              render_splat, render_up);
        if (traj->parsed()) {
            const std::string path =
                export_trajectory(traj_run_dir, traj_episode, traj_format, traj_out);
            std::printf("wrote %s\n", path.c_str());
            return 0;
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
