#pragma once

// Batch runner: config file parsing, backend factories, resumable episode
// execution with a worker pool, judging with a cache, reports, sweeps, and
// the render / trajectory-export commands.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "cov/agent.hpp"
#include "cov/errors.hpp"
#include "cov/http_backend.hpp"
#include "cov/metrics.hpp"
#include "cov/scene.hpp"

namespace cov {

namespace fs = std::filesystem;

// ---- config file ----

// Minimal TOML-style sections of key = value lines; # starts a comment,
// values may be double-quoted.
struct IniDoc {
    std::map<std::string, std::map<std::string, std::string>> sections;

    static IniDoc parse(const std::string& text) {
        IniDoc doc;
        std::string section;
        std::istringstream in(text);
        std::string raw;
        size_t line_no = 0;
        while (std::getline(in, raw)) {
            ++line_no;
            std::string line = raw;
            // strip comments outside quotes
            bool in_quote = false;
            for (size_t i = 0; i < line.size(); ++i) {
                if (line[i] == '"') in_quote = !in_quote;
                else if (line[i] == '#' && !in_quote) {
                    line = line.substr(0, i);
                    break;
                }
            }
            line = detail::trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']')
                    throw ConfigError("bad section header at line " +
                                      std::to_string(line_no));
                section = detail::trim(line.substr(1, line.size() - 2));
                doc.sections[section];
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError("expected key = value at line " +
                                  std::to_string(line_no));
            const std::string key = detail::trim(line.substr(0, eq));
            std::string value = detail::trim(line.substr(eq + 1));
            if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
                value = value.substr(1, value.size() - 2);
            if (key.empty())
                throw ConfigError("empty key at line " + std::to_string(line_no));
            doc.sections[section][key] = value;
        }
        return doc;
    }

    static IniDoc load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config: " + path);
        std::ostringstream ss;
        ss << in.rdbuf();
        return parse(ss.str());
    }

    std::optional<std::string> get(const std::string& section,
                                   const std::string& key) const {
        auto s = sections.find(section);
        if (s == sections.end()) return std::nullopt;
        auto k = s->second.find(key);
        if (k == s->second.end()) return std::nullopt;
        return k->second;
    }
};

namespace detail {

inline int to_int(const std::string& v, const std::string& what) {
    try {
        size_t used = 0;
        const int out = std::stoi(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (...) {
        throw ConfigError(what + " must be an integer, got '" + v + "'");
    }
}

inline double to_double(const std::string& v, const std::string& what) {
    try {
        size_t used = 0;
        const double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (...) {
        throw ConfigError(what + " must be a number, got '" + v + "'");
    }
}

inline bool to_bool(const std::string& v, const std::string& what) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(what + " must be true/false, got '" + v + "'");
}

}  // namespace detail

struct RunConfig {
    // [run]
    std::string episodes_path;
    std::string out_dir = "runs";
    std::string run_id = "run";
    std::string mode = "cov";  // baseline | cov | no-selection
    int ratio = 10;
    int workers = 1;
    int k_max = 6;
    bool force = false;

    // [backend]
    std::string backend_kind = "scripted";  // scripted | http | hidden-oracle
    BackendConfig backend;
    std::string script_path;
    int reveal_after = 3;
    std::string wrong_answer = "a potted plant";
    std::string record_path;
    std::string replay_path;

    // [motion]
    MotionConfig motion;

    // [render]
    RenderSettings render;
    int birds_eye_width = 640;
    int birds_eye_height = 480;
    UpAxis up_axis = UpAxis::Z;

    // [budget]
    LoopBudget budget;

    // [eval]
    std::string judge_kind = "rule";  // rule | backend
    BackendConfig judge_backend;
    bool lenient_selection = false;

    // [prompts]
    std::string prompts_dir;

    std::string config_dir;  // directory of the config file, for relative paths

    std::string resolve(const std::string& p) const {
        if (p.empty()) return p;
        fs::path fp(p);
        if (fp.is_absolute() || config_dir.empty()) return p;
        return (fs::path(config_dir) / fp).lexically_normal().string();
    }

    static RunConfig from_ini(const IniDoc& doc, const std::string& config_dir = {}) {
        static const std::map<std::string, std::vector<std::string>> known = {
            {"run",
             {"episodes", "out_dir", "run_id", "mode", "ratio", "workers", "k_max",
              "force"}},
            {"backend",
             {"kind", "endpoint", "model", "temperature", "max_output_tokens",
              "timeout_s", "max_retries", "api_key_env", "max_images",
              "rate_limit_rpm", "single_shot", "script", "reveal_after",
              "wrong_answer", "record", "replay"}},
            {"motion",
             {"step_m", "yaw_deg", "pitch_deg", "roll_deg", "clamp_margin_m",
              "vertical"}},
            {"render",
             {"splat_radius_px", "background", "near_m", "far_m", "birds_eye_width",
              "birds_eye_height", "up_axis"}},
            {"budget", {"min_steps", "max_steps", "max_parse_retries", "nudge_limit"}},
            {"eval",
             {"judge", "judge_endpoint", "judge_model", "judge_api_key_env",
              "lenient_selection"}},
            {"prompts", {"dir"}},
        };
        for (const auto& [section, keys] : doc.sections) {
            auto it = known.find(section);
            if (it == known.end())
                throw ConfigError("unknown config section [" + section + "]");
            for (const auto& [key, _] : keys)
                if (std::find(it->second.begin(), it->second.end(), key) ==
                    it->second.end())
                    throw ConfigError("unknown key '" + key + "' in section [" +
                                      section + "]");
        }

        RunConfig c;
        c.config_dir = config_dir;
        auto str = [&](const char* s, const char* k, std::string& dst) {
            if (auto v = doc.get(s, k)) dst = *v;
        };
        auto num = [&](const char* s, const char* k, int& dst) {
            if (auto v = doc.get(s, k))
                dst = detail::to_int(*v, std::string(s) + "." + k);
        };
        auto dbl = [&](const char* s, const char* k, double& dst) {
            if (auto v = doc.get(s, k))
                dst = detail::to_double(*v, std::string(s) + "." + k);
        };
        auto boolean = [&](const char* s, const char* k, bool& dst) {
            if (auto v = doc.get(s, k))
                dst = detail::to_bool(*v, std::string(s) + "." + k);
        };

        str("run", "episodes", c.episodes_path);
        str("run", "out_dir", c.out_dir);
        str("run", "run_id", c.run_id);
        str("run", "mode", c.mode);
        num("run", "ratio", c.ratio);
        num("run", "workers", c.workers);
        num("run", "k_max", c.k_max);
        boolean("run", "force", c.force);

        str("backend", "kind", c.backend_kind);
        str("backend", "endpoint", c.backend.endpoint);
        str("backend", "model", c.backend.model_name);
        dbl("backend", "temperature", c.backend.temperature);
        num("backend", "max_output_tokens", c.backend.max_output_tokens);
        dbl("backend", "timeout_s", c.backend.timeout_s);
        num("backend", "max_retries", c.backend.max_retries);
        str("backend", "api_key_env", c.backend.api_key_env);
        num("backend", "max_images", c.backend.max_images);
        num("backend", "rate_limit_rpm", c.backend.rate_limit_rpm);
        boolean("backend", "single_shot", c.backend.single_shot);
        str("backend", "script", c.script_path);
        num("backend", "reveal_after", c.reveal_after);
        str("backend", "wrong_answer", c.wrong_answer);
        str("backend", "record", c.record_path);
        str("backend", "replay", c.replay_path);

        dbl("motion", "step_m", c.motion.step_m);
        dbl("motion", "yaw_deg", c.motion.yaw_deg);
        dbl("motion", "pitch_deg", c.motion.pitch_deg);
        dbl("motion", "roll_deg", c.motion.roll_deg);
        dbl("motion", "clamp_margin_m", c.motion.clamp_margin_m);
        if (auto v = doc.get("motion", "vertical")) {
            if (*v == "camera") c.motion.vertical = VerticalMode::CameraLocal;
            else if (*v == "world-z") c.motion.vertical = VerticalMode::WorldZ;
            else if (*v == "world-y") c.motion.vertical = VerticalMode::WorldY;
            else throw ConfigError("motion.vertical must be camera|world-z|world-y");
        }

        num("render", "splat_radius_px", c.render.splat_radius_px);
        if (auto v = doc.get("render", "background")) {
            std::istringstream ss(*v);
            std::string part;
            std::vector<float> vals;
            while (std::getline(ss, part, ','))
                vals.push_back(static_cast<float>(
                    detail::to_double(detail::trim(part), "render.background")));
            if (vals.size() != 3)
                throw ConfigError("render.background must be r,g,b");
            c.render.background = {vals[0], vals[1], vals[2]};
        }
        dbl("render", "near_m", c.render.near_m);
        dbl("render", "far_m", c.render.far_m);
        num("render", "birds_eye_width", c.birds_eye_width);
        num("render", "birds_eye_height", c.birds_eye_height);
        if (auto v = doc.get("render", "up_axis")) {
            if (*v == "z") c.up_axis = UpAxis::Z;
            else if (*v == "y") c.up_axis = UpAxis::Y;
            else throw ConfigError("render.up_axis must be z|y");
        }

        num("budget", "min_steps", c.budget.min_steps);
        num("budget", "max_steps", c.budget.max_steps);
        num("budget", "max_parse_retries", c.budget.max_parse_retries);
        num("budget", "nudge_limit", c.budget.nudge_limit);

        str("eval", "judge", c.judge_kind);
        str("eval", "judge_endpoint", c.judge_backend.endpoint);
        str("eval", "judge_model", c.judge_backend.model_name);
        str("eval", "judge_api_key_env", c.judge_backend.api_key_env);
        boolean("eval", "lenient_selection", c.lenient_selection);

        str("prompts", "dir", c.prompts_dir);
        return c;
    }

    static RunConfig from_file(const std::string& path) {
        return from_ini(IniDoc::load(path), fs::path(path).parent_path().string());
    }

    void validate() const {
        if (episodes_path.empty()) throw ConfigError("run.episodes is required");
        if (mode != "baseline" && mode != "cov" && mode != "no-selection")
            throw ConfigError("run.mode must be baseline|cov|no-selection");
        if (ratio < 1) throw ConfigError("run.ratio must be >= 1");
        if (workers < 1) throw ConfigError("run.workers must be >= 1");
        if (k_max < 1) throw ConfigError("run.k_max must be >= 1");
        if (backend_kind != "scripted" && backend_kind != "http" &&
            backend_kind != "hidden-oracle")
            throw ConfigError("backend.kind must be scripted|http|hidden-oracle");
        if (judge_kind != "rule" && judge_kind != "backend")
            throw ConfigError("eval.judge must be rule|backend");
        try {
            backend.validate();
            motion.validate();
            render.validate();
            budget.validate();
        } catch (const Error& e) {
            throw ConfigError(e.what());
        }
    }

    AgentOptions agent_options() const {
        AgentOptions opts;
        opts.prompt.single_shot = backend.single_shot;
        opts.prompt.max_images = backend.max_images;
        opts.lenient_selection = lenient_selection;
        opts.birds_eye_width = birds_eye_width;
        opts.birds_eye_height = birds_eye_height;
        opts.up_axis = up_axis;
        opts.prompts = prompts_dir.empty() ? PromptLibrary::v1()
                                           : PromptLibrary::load_dir(resolve(prompts_dir));
        return opts;
    }
};

struct CliOverrides {
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

inline void apply_overrides(RunConfig& config, const CliOverrides& o) {
    if (o.mode) config.mode = *o.mode;
    if (o.min_steps) config.budget.min_steps = *o.min_steps;
    if (o.max_steps) config.budget.max_steps = *o.max_steps;
    if (o.ratio) config.ratio = *o.ratio;
    if (o.workers) config.workers = *o.workers;
    if (o.endpoint) {
        config.backend.endpoint = *o.endpoint;
        config.backend_kind = "http";
    }
    if (o.model) config.backend.model_name = *o.model;
    if (o.replay) config.replay_path = *o.replay;
    if (o.run_id) config.run_id = *o.run_id;
    if (o.out_dir) config.out_dir = *o.out_dir;
    if (o.force) config.force = true;
}

// ---- episode manifest ----

// run.episodes is either a directory of *.json episode files or a manifest
// JSON {"episodes": ["path", ...]} with paths relative to the manifest.
inline std::vector<std::string> list_episode_files(const std::string& path) {
    std::vector<std::string> out;
    if (fs::is_directory(path)) {
        for (const auto& entry : fs::directory_iterator(path))
            if (entry.is_regular_file() && entry.path().extension() == ".json")
                out.push_back(entry.path().string());
        std::sort(out.begin(), out.end());
        return out;
    }
    if (!fs::exists(path)) throw ConfigError("episodes path not found: " + path);
    const auto bytes = detail::read_file_bytes(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("bad episode manifest " + path + ": " + e.what());
    }
    if (!j.contains("episodes") || !j.at("episodes").is_array())
        throw ConfigError("manifest must contain an \"episodes\" array: " + path);
    const fs::path base = fs::path(path).parent_path();
    for (const auto& e : j.at("episodes")) {
        fs::path p(e.get<std::string>());
        out.push_back(p.is_absolute() ? p.string()
                                      : (base / p).lexically_normal().string());
    }
    return out;
}

// ---- backend factories ----

// Script file: {"<episode_id>": [entries], "*": [entries]} where an entry is
// either a plain string or {"key": ..., "reply": ...}.
inline std::vector<ScriptEntry> load_script_entries(const std::string& path,
                                                    const std::string& episode_id) {
    const auto bytes = detail::read_file_bytes(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("bad script file " + path + ": " + e.what());
    }
    const nlohmann::json* entries = nullptr;
    if (j.contains(episode_id)) entries = &j.at(episode_id);
    else if (j.contains("*")) entries = &j.at("*");
    else
        throw ConfigError("script file has no entry for episode '" + episode_id +
                          "' and no \"*\" default: " + path);
    std::vector<ScriptEntry> out;
    for (const auto& e : *entries) {
        if (e.is_string()) out.push_back({"", e.get<std::string>()});
        else
            out.push_back({e.value("key", std::string{}),
                           e.at("reply").get<std::string>()});
    }
    return out;
}

inline std::shared_ptr<Backend> make_agent_backend(
    const RunConfig& config, const Episode& episode,
    std::shared_ptr<RateLimiter> limiter);

// ---- scene cache ----

class SceneCache {
public:
    std::shared_ptr<const ScenePointCloud> get(const std::string& path) {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = cache_.find(path);
        if (it != cache_.end()) return it->second;
        auto scene = std::make_shared<ScenePointCloud>(load_point_cloud(path));
        cache_.emplace(path, scene);
        return scene;
    }

private:
    std::map<std::string, std::shared_ptr<const ScenePointCloud>> cache_;
    std::mutex mu_;
};

// ---- judge cache ----

// JSON lines {hash, gamma, timestamp}; keyed over (question, GT, prediction).
class JudgeCache {
public:
    explicit JudgeCache(std::string path) : path_(std::move(path)) {
        std::ifstream in(path_);
        if (!in) return;
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            try {
                const auto j = nlohmann::json::parse(line);
                entries_[j.at("hash").get<std::string>()] = j.at("gamma").get<int>();
            } catch (const nlohmann::json::exception&) {
                // a torn trailing line from an interrupted run is ignored
            }
        }
    }

    static std::string key(const std::string& question, const std::string& gt,
                           const std::string& prediction) {
        uint64_t h = kFnvOffset;
        h = fnv1a64(question, h);
        h = fnv1a64("\x1f", 1, h);
        h = fnv1a64(gt, h);
        h = fnv1a64("\x1f", 1, h);
        h = fnv1a64(prediction, h);
        return to_hex16(h);
    }

    std::optional<int> lookup(const std::string& question, const std::string& gt,
                              const std::string& prediction) {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = entries_.find(key(question, gt, prediction));
        if (it == entries_.end()) return std::nullopt;
        return it->second;
    }

    void store(const std::string& question, const std::string& gt,
               const std::string& prediction, int gamma) {
        std::lock_guard<std::mutex> lock(mu_);
        const std::string k = key(question, gt, prediction);
        entries_[k] = gamma;
        std::ofstream out(path_, std::ios::app);
        if (!out) throw IoError("cannot append judge cache: " + path_);
        nlohmann::json j{{"hash", k}, {"gamma", gamma}, {"timestamp", iso8601_now()}};
        out << j.dump() << "\n";
    }

private:
    std::string path_;
    std::map<std::string, int> entries_;
    std::mutex mu_;
};

// ---- per-episode execution ----

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << content;
    if (!out) throw IoError("write failure: " + path);
}

inline nlohmann::json load_json_file(const std::string& path) {
    const auto bytes = detail::read_file_bytes(path);
    try {
        return nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
        throw MalformedFileError("bad JSON in " + path + ": " + e.what());
    }
}

inline void persist_episode_outcome(const EpisodeOutcome& outcome,
                                    const fs::path& episode_dir,
                                    const BirdsEyeMapping& mapping) {
    fs::create_directories(episode_dir);

    write_text_file((episode_dir / "result.json").string(),
                    outcome.result.to_json().dump(2) + "\n");

    std::ostringstream transcript;
    for (const auto& entry : outcome.result.transcript)
        transcript << entry.to_json().dump() << "\n";
    write_text_file((episode_dir / "transcript.jsonl").string(), transcript.str());

    if (!outcome.context.steps.empty()) {
        fs::create_directories(episode_dir / "steps");
        for (const auto& rec : outcome.context.steps) {
            const std::string stem = std::to_string(rec.observation.step_index);
            save_observation(rec.observation,
                             (episode_dir / "steps" / (stem + ".png")).string(),
                             (episode_dir / "steps" / (stem + ".json")).string());
        }
    }

    if (outcome.context.birds_eye.image.width > 0)
        save_observation(outcome.context.birds_eye,
                         (episode_dir / "birds_eye.png").string(),
                         (episode_dir / "birds_eye.json").string());

    nlohmann::json traj;
    traj["start_pose"] = outcome.result.start_pose.to_matrix();
    nlohmann::json actions = nlohmann::json::array();
    nlohmann::json poses = nlohmann::json::array();
    for (const auto& p : outcome.result.trajectory) {
        actions.push_back(action_label(p.action));
        poses.push_back(p.pose.to_matrix());
    }
    traj["actions"] = std::move(actions);
    traj["poses"] = std::move(poses);
    nlohmann::json anchor_poses = nlohmann::json::array();
    for (const auto& a : outcome.context.anchors)
        anchor_poses.push_back(a.pose.to_matrix());
    traj["anchor_poses"] = std::move(anchor_poses);
    traj["anchor_frame_ids"] = outcome.context.anchor_frame_ids;
    traj["birds_eye"] = {{"width", mapping.width},
                         {"height", mapping.height},
                         {"up", mapping.up == UpAxis::Z ? "z" : "y"},
                         {"center_u", mapping.center_u},
                         {"center_v", mapping.center_v},
                         {"scale", mapping.scale},
                         {"v_sign", mapping.v_sign}};
    const auto& intr = outcome.context.current_intrinsics;
    traj["hfov_deg"] = intr.fx > 0 && intr.width > 0
                           ? 2.0 * std::atan2(0.5 * intr.width, intr.fx) * 180.0 /
                                 std::numbers::pi
                           : 60.0;
    write_text_file((episode_dir / "trajectory.json").string(), traj.dump(2) + "\n");
}

struct EpisodeRun {
    EpisodeResult result;
    bool skipped = false;  // result.json already existed
};

inline EpisodeRun run_one_episode(const std::string& episode_path,
                                  const RunConfig& config, SceneCache& scenes,
                                  const fs::path& run_dir,
                                  std::shared_ptr<RateLimiter> limiter) {
    const Episode episode = load_episode(episode_path, /*strict=*/true);
    const fs::path episode_dir = run_dir / episode.episode_id;

    if (!config.force && fs::exists(episode_dir / "result.json")) {
        EpisodeRun run;
        run.result =
            EpisodeResult::from_json(load_json_file((episode_dir / "result.json").string()));
        run.skipped = true;
        return run;
    }

    EpisodeRun run;
    Aabb mapping_bounds{{0, 0, 0}, {0, 0, 0}};
    try {
        const auto scene = scenes.get(episode.scene_path);
        mapping_bounds = scene->aabb;
        const auto frames = subsample_frames(episode.frames, config.ratio);
        const AgentOptions opts = config.agent_options();
        auto backend = make_agent_backend(config, episode, limiter);

        EpisodeOutcome outcome;
        if (config.mode == "baseline") {
            outcome = run_baseline(episode, frames, *backend, opts);
        } else if (config.mode == "cov") {
            SelectionOutcome selection =
                select_views(episode, frames, *backend, config.k_max, opts);
            outcome = run_cov_loop(episode, *scene, frames, selection.indices,
                                   *backend, config.budget, config.motion,
                                   config.render, opts);
            outcome.result.selection_fallback = selection.fallback;
            outcome.result.selection_lenient = selection.lenient_used;
            outcome.result.transcript.insert(outcome.result.transcript.begin(),
                                             selection.transcript.begin(),
                                             selection.transcript.end());
        } else {  // no-selection
            outcome = run_no_selection(episode, *scene, frames, *backend,
                                       config.budget, config.motion, config.render,
                                       opts);
        }
        const auto mapping =
            make_birds_eye_mapping(scene->aabb, config.birds_eye_width,
                                   config.birds_eye_height, config.up_axis);
        persist_episode_outcome(outcome, episode_dir, mapping);
        run.result = std::move(outcome.result);
    } catch (const Error& e) {
        // the batch keeps going; this episode scores zero with a marker
        EpisodeOutcome failed_outcome;
        EpisodeResult& r = failed_outcome.result;
        r.episode_id = episode.episode_id;
        r.mode = config.mode;
        r.question = episode.question;
        r.ground_truth = episode.ground_truth;
        r.extra_answers = episode.extra_answers;
        r.failed = true;
        r.failure = e.what();
        const auto mapping =
            make_birds_eye_mapping(mapping_bounds, config.birds_eye_width,
                                   config.birds_eye_height, config.up_axis);
        persist_episode_outcome(failed_outcome, episode_dir, mapping);
        run.result = std::move(failed_outcome.result);
    }
    return run;
}

inline std::shared_ptr<Backend> make_judge_backend(const RunConfig& config,
                                                   const EpisodeResult& result,
                                                   std::shared_ptr<RateLimiter> limiter);

// Scores a set of results (judging through the cache) into a ScoreReport.
inline ScoreReport score_results(std::vector<EpisodeResult> results,
                                 const RunConfig& config, JudgeCache& cache,
                                 std::shared_ptr<RateLimiter> limiter,
                                 size_t* judge_calls = nullptr) {
    std::sort(results.begin(), results.end(),
              [](const EpisodeResult& a, const EpisodeResult& b) {
                  return a.episode_id < b.episode_id;
              });

    ScoreReport report;
    std::vector<CiderItem> corpus;
    for (const auto& r : results) {
        std::vector<std::string> refs = {r.ground_truth};
        refs.insert(refs.end(), r.extra_answers.begin(), r.extra_answers.end());
        corpus.push_back(CiderItem{r.failed ? std::string{} : r.answer, refs});
    }
    const CiderResult cider_scores = cider(corpus);
    report.cider_uniform_idf = cider_scores.uniform_idf;

    for (size_t i = 0; i < results.size(); ++i) {
        const auto& r = results[i];
        QuestionScore q;
        q.episode_id = r.episode_id;
        q.prediction = r.failed ? std::string{} : r.answer;
        if (r.failed) {
            q.gamma = 1;  // a failed episode scores zero
            q.judge_failed = true;
        } else {
            auto cached = cache.lookup(r.question, r.ground_truth, q.prediction);
            if (cached) {
                q.gamma = *cached;
            } else {
                auto backend = make_judge_backend(config, r, limiter);
                const JudgeOutcome outcome = judge(r.question, r.ground_truth,
                                                   r.extra_answers, q.prediction,
                                                   *backend);
                if (judge_calls) *judge_calls += backend->request_count();
                q.gamma = outcome.gamma;
                q.judge_failed = outcome.failed;
                cache.store(r.question, r.ground_truth, q.prediction, outcome.gamma);
            }
        }
        q.em = em_at_1(q.prediction, r.ground_truth, r.extra_answers);
        std::vector<std::string> refs = {r.ground_truth};
        refs.insert(refs.end(), r.extra_answers.begin(), r.extra_answers.end());
        q.bleu4 = bleu4(q.prediction, refs);
        q.rouge_l = rouge_l(q.prediction, refs);
        q.cider = cider_scores.per_item[i];
        report.per_question.push_back(std::move(q));
    }
    report.recompute_aggregates();
    return report;
}

// ---- batch run ----

struct BatchOutcome {
    fs::path run_dir;
    ScoreReport report;
    int episodes = 0;
    int failed = 0;
    int skipped = 0;
    int exit_code = 0;
};

inline BatchOutcome run_batch(const RunConfig& config) {
    config.validate();
    const auto episode_files = list_episode_files(config.resolve(config.episodes_path));
    if (episode_files.empty()) throw ConfigError("no episodes found");

    const fs::path run_dir = fs::path(config.resolve(config.out_dir)) / config.run_id;
    fs::create_directories(run_dir);

    auto limiter = std::make_shared<RateLimiter>(config.backend.rate_limit_rpm);

    SceneCache scenes;
    std::vector<EpisodeRun> runs(episode_files.size());
    std::vector<std::string> errors(episode_files.size());
    std::atomic<size_t> next{0};

    auto worker = [&]() {
        while (true) {
            const size_t i = next.fetch_add(1);
            if (i >= episode_files.size()) return;
            try {
                runs[i] = run_one_episode(episode_files[i], config, scenes, run_dir,
                                          limiter);
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };

    const int n_workers =
        std::min<int>(config.workers, static_cast<int>(episode_files.size()));
    if (n_workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    for (size_t i = 0; i < episode_files.size(); ++i)
        if (!errors[i].empty())
            throw Error("episode " + episode_files[i] + " aborted: " + errors[i]);

    BatchOutcome out;
    out.run_dir = run_dir;
    out.episodes = static_cast<int>(runs.size());
    std::vector<EpisodeResult> results;
    for (const auto& r : runs) {
        if (r.skipped) ++out.skipped;
        if (r.result.failed) ++out.failed;
        results.push_back(r.result);
    }

    JudgeCache cache((run_dir / "judge_cache.jsonl").string());
    out.report = score_results(std::move(results), config, cache, limiter);

    nlohmann::json report_json;
    report_json["run_id"] = config.run_id;
    report_json["mode"] = config.mode;
    report_json["episodes"] = out.episodes;
    report_json["failed"] = out.failed;
    report_json["min_steps"] = config.budget.min_steps;
    report_json["max_steps"] = config.budget.max_steps;
    report_json["score"] = out.report.to_json();
    write_text_file((run_dir / "report.json").string(), report_json.dump(2) + "\n");
    write_text_file((run_dir / "report.txt").string(), out.report.to_table());

    out.exit_code = out.failed > 0 ? 1 : 0;
    return out;
}

// ---- sweep ----

struct SweepOutcome {
    fs::path sweep_path;
    std::vector<BatchOutcome> rows;
};

inline SweepOutcome sweep_steps(RunConfig config, const std::vector<int>& min_steps) {
    if (min_steps.empty()) throw ConfigError("sweep needs at least one min_steps value");
    const std::string base_id = config.run_id;
    SweepOutcome out;
    nlohmann::json rows = nlohmann::json::array();

    for (int n : min_steps) {
        RunConfig row_config = config;
        row_config.run_id = base_id + "-min" + std::to_string(n);
        row_config.budget.min_steps = n;
        if (row_config.budget.max_steps < std::max(1, n))
            row_config.budget.max_steps = std::max(1, n);
        const BatchOutcome batch = run_batch(row_config);

        // budget law over the produced rows
        std::map<int, int> histogram;
        for (const auto& entry :
             fs::directory_iterator(batch.run_dir)) {
            if (!entry.is_directory()) continue;
            const fs::path result_path = entry.path() / "result.json";
            if (!fs::exists(result_path)) continue;
            const auto r = EpisodeResult::from_json(load_json_file(result_path.string()));
            ++histogram[r.step_count];
            if (r.termination == Termination::Answered && r.step_count < n)
                throw ValidationError("budget law violated in " +
                                      entry.path().string());
        }

        nlohmann::json row;
        row["min_steps"] = n;
        row["run_id"] = row_config.run_id;
        if (batch.report.llm_match_pct) row["llm_match_pct"] = *batch.report.llm_match_pct;
        row["em_pct"] = batch.report.em_pct;
        row["bleu4"] = batch.report.bleu4;
        row["rouge_l"] = batch.report.rouge_l;
        row["cider"] = batch.report.cider;
        nlohmann::json hist = nlohmann::json::object();
        for (const auto& [steps, count] : histogram)
            hist[std::to_string(steps)] = count;
        row["step_histogram"] = std::move(hist);
        row["episodes"] = batch.episodes;
        row["failed"] = batch.failed;
        rows.push_back(std::move(row));
        out.rows.push_back(batch);
    }

    const fs::path sweep_dir = fs::path(config.resolve(config.out_dir));
    fs::create_directories(sweep_dir);
    nlohmann::json sweep_json;
    sweep_json["base_run_id"] = base_id;
    sweep_json["rows"] = std::move(rows);
    out.sweep_path = sweep_dir / (base_id + "-sweep.json");
    write_text_file(out.sweep_path.string(), sweep_json.dump(2) + "\n");
    return out;
}

// ---- score command ----

// Re-scores every episode under run_dir from its result.json.
inline ScoreReport score_run_dir(const std::string& run_dir, const RunConfig& config,
                                 size_t* judge_calls = nullptr) {
    std::vector<EpisodeResult> results;
    for (const auto& entry : fs::directory_iterator(run_dir)) {
        if (!entry.is_directory()) continue;
        const fs::path result_path = entry.path() / "result.json";
        if (!fs::exists(result_path)) continue;
        results.push_back(EpisodeResult::from_json(load_json_file(result_path.string())));
    }
    if (results.empty())
        throw ConfigError("no result.json files under " + run_dir);

    auto limiter = std::make_shared<RateLimiter>(config.backend.rate_limit_rpm);
    JudgeCache cache((fs::path(run_dir) / "judge_cache.jsonl").string());
    ScoreReport report =
        score_results(std::move(results), config, cache, limiter, judge_calls);

    nlohmann::json report_json;
    report_json["run_id"] = fs::path(run_dir).filename().string();
    report_json["mode"] = "rescored";
    report_json["episodes"] = report.n;
    report_json["score"] = report.to_json();
    write_text_file((fs::path(run_dir) / "report.json").string(),
                    report_json.dump(2) + "\n");
    write_text_file((fs::path(run_dir) / "report.txt").string(), report.to_table());
    return report;
}

// ---- backend factory definitions ----

inline std::shared_ptr<Backend> make_agent_backend(
    const RunConfig& config, const Episode& episode,
    std::shared_ptr<RateLimiter> limiter) {
    std::shared_ptr<Backend> inner;
    if (!config.replay_path.empty()) {
        return std::make_shared<RecordReplayBackend>(
            config.resolve(config.replay_path), RecordReplayBackend::Mode::Replay,
            nullptr, config.backend.model_name, config.backend.temperature);
    }
    if (config.backend_kind == "scripted") {
        if (config.script_path.empty())
            throw ConfigError("backend.script is required for the scripted backend");
        inner = std::make_shared<ScriptedBackend>(
            load_script_entries(config.resolve(config.script_path), episode.episode_id));
    } else if (config.backend_kind == "hidden-oracle") {
        inner = std::make_shared<HiddenObjectBackend>(config.reveal_after,
                                                      episode.ground_truth,
                                                      config.wrong_answer);
    } else {
        inner = std::make_shared<HttpBackend>(config.backend, limiter);
    }
    if (!config.record_path.empty())
        return std::make_shared<RecordReplayBackend>(
            config.resolve(config.record_path), RecordReplayBackend::Mode::Record,
            inner, config.backend.model_name, config.backend.temperature);
    return inner;
}

inline std::shared_ptr<Backend> make_judge_backend(
    const RunConfig& config, const EpisodeResult& result,
    std::shared_ptr<RateLimiter> limiter) {
    if (config.judge_kind == "rule")
        return std::make_shared<RuleJudgeBackend>(result.ground_truth,
                                                  result.extra_answers);
    BackendConfig jc = config.judge_backend;
    if (jc.endpoint.empty()) jc = config.backend;
    jc.temperature = 0.0;
    return std::make_shared<HttpBackend>(jc, limiter);
}

}  // namespace cov
