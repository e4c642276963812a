#pragma once

// Figure artifacts: top-down frustum plots of a logged trajectory (SVG) and
// raw pose dumps (JSON), both reconstructed from an episode's trajectory.json.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cov/errors.hpp"
#include "cov/geometry.hpp"
#include "cov/render.hpp"

namespace cov {

inline CameraPose pose_from_values(std::span<const double> values) {
    if (values.size() != 16)
        throw ConfigError("pose must be 16 row-major values, got " +
                          std::to_string(values.size()));
    std::array<double, 16> m{};
    std::copy(values.begin(), values.end(), m.begin());
    CameraPose pose = CameraPose::from_matrix(m);
    if (!pose.is_rigid(1e-6))
        throw ConfigError("pose rotation block is not a rotation matrix");
    pose.rotation = orthonormalized(pose.rotation);
    return pose;
}

inline CameraPose pose_from_string(const std::string& text) {
    std::string spaced = text;
    std::replace(spaced.begin(), spaced.end(), ',', ' ');
    std::istringstream ss(spaced);
    std::vector<double> values;
    std::string tok;
    while (ss >> tok) {
        try {
            size_t used = 0;
            values.push_back(std::stod(tok, &used));
            if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw ConfigError("pose contains a non-numeric token: '" + tok + "'");
        }
    }
    return pose_from_values(values);
}

struct TrajectoryDoc {
    CameraPose start_pose;
    std::vector<std::string> actions;
    std::vector<CameraPose> poses;  // one per action
    std::vector<CameraPose> anchor_poses;
    std::vector<int> anchor_frame_ids;
    BirdsEyeMapping mapping;
    double hfov_deg = 60.0;
    nlohmann::json raw;
};

namespace detail {

inline CameraPose pose_from_json(const nlohmann::json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 16)
        throw MalformedFileError(where + ": expected 16-element pose array");
    std::array<double, 16> m{};
    for (size_t i = 0; i < 16; ++i) m[i] = j[i].get<double>();
    return CameraPose::from_matrix(m);
}

}  // namespace detail

inline TrajectoryDoc load_trajectory(const std::string& path) {
    namespace fs = std::filesystem;
    if (!fs::exists(path))
        throw MissingTrajectoryError("no trajectory at " + path);
    std::ifstream in(path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw MalformedFileError(path + ": " + e.what());
    }
    TrajectoryDoc doc;
    doc.raw = j;
    try {
        doc.start_pose = detail::pose_from_json(j.at("start_pose"), "start_pose");
        for (const auto& a : j.at("actions")) doc.actions.push_back(a.get<std::string>());
        for (const auto& p : j.at("poses"))
            doc.poses.push_back(detail::pose_from_json(p, "poses"));
        for (const auto& p : j.at("anchor_poses"))
            doc.anchor_poses.push_back(detail::pose_from_json(p, "anchor_poses"));
        if (j.contains("anchor_frame_ids"))
            for (const auto& id : j.at("anchor_frame_ids"))
                doc.anchor_frame_ids.push_back(id.get<int>());
        const auto& be = j.at("birds_eye");
        doc.mapping.width = be.at("width").get<int>();
        doc.mapping.height = be.at("height").get<int>();
        doc.mapping.up = be.at("up").get<std::string>() == "y" ? UpAxis::Y : UpAxis::Z;
        doc.mapping.center_u = be.at("center_u").get<double>();
        doc.mapping.center_v = be.at("center_v").get<double>();
        doc.mapping.scale = be.at("scale").get<double>();
        doc.mapping.v_sign = be.at("v_sign").get<double>();
        if (j.contains("hfov_deg")) doc.hfov_deg = j.at("hfov_deg").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw MalformedFileError(path + ": " + e.what());
    }
    if (doc.poses.size() != doc.actions.size())
        throw MalformedFileError(path + ": poses/actions length mismatch");
    return doc;
}

// Top-down frustum: apex at the camera center plus two wing endpoints along
// the ground projection of the view cone. Returns apex-first so callers can
// recover the camera pixel from points[0]. Empty wing set (camera looking
// straight up or down) degenerates to the apex alone.
inline std::vector<std::array<double, 2>> frustum_points(const CameraPose& pose,
                                                         const BirdsEyeMapping& mapping,
                                                         double hfov_deg,
                                                         double ray_px) {
    const auto apex = mapping.to_pixel(pose.translation);
    const Vec3 fwd = pose.forward();
    const auto g = mapping.ground(fwd);
    // pixel-space heading of the optical axis
    const double du = g[0] * mapping.scale;
    const double dv = mapping.v_sign * g[1] * mapping.scale;
    const double len = std::hypot(du, dv);
    if (len < 1e-12) return {apex};
    const double heading = std::atan2(dv, du);
    const double half = 0.5 * hfov_deg * std::numbers::pi / 180.0;
    std::vector<std::array<double, 2>> pts;
    pts.push_back(apex);
    for (const double a : {heading - half, heading + half})
        pts.push_back({apex[0] + ray_px * std::cos(a), apex[1] + ray_px * std::sin(a)});
    pts.push_back(apex);  // close the triangle
    return pts;
}

namespace detail {

inline std::string fmt_px(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

}  // namespace detail

struct SvgOptions {
    double ray_px = 0.0;  // 0: 5% of the smaller image dimension, floor 10 px
    std::string background_href;  // relative path to a bird's-eye PNG, optional
};

inline std::string trajectory_svg(const TrajectoryDoc& doc, const SvgOptions& opts = {}) {
    const int w = doc.mapping.width > 0 ? doc.mapping.width : 640;
    const int h = doc.mapping.height > 0 ? doc.mapping.height : 480;
    double ray = opts.ray_px;
    if (ray <= 0.0) ray = std::max(10.0, 0.05 * std::min(w, h));

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\""
        << h << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
    if (!opts.background_href.empty())
        svg << "  <image href=\"" << opts.background_href << "\" x=\"0\" y=\"0\" width=\""
            << w << "\" height=\"" << h << "\"/>\n";

    for (size_t i = 0; i < doc.anchor_poses.size(); ++i) {
        const auto px = doc.mapping.to_pixel(doc.anchor_poses[i].translation);
        svg << "  <circle class=\"anchor\" cx=\"" << detail::fmt_px(px[0]) << "\" cy=\""
            << detail::fmt_px(px[1])
            << "\" r=\"4\" fill=\"none\" stroke=\"#1e88e5\" stroke-width=\"1.5\"/>\n";
    }

    std::vector<CameraPose> chain;
    chain.push_back(doc.start_pose);
    for (const auto& p : doc.poses) chain.push_back(p);

    for (size_t i = 0; i < chain.size(); ++i) {
        const auto pts = frustum_points(chain[i], doc.mapping, doc.hfov_deg, ray);
        if (pts.size() == 1) {
            svg << "  <circle class=\"frustum\" cx=\"" << detail::fmt_px(pts[0][0])
                << "\" cy=\"" << detail::fmt_px(pts[0][1])
                << "\" r=\"2\" fill=\"#e53935\"/>\n";
            continue;
        }
        svg << "  <polyline class=\"frustum\" points=\"";
        for (size_t k = 0; k < pts.size(); ++k) {
            if (k) svg << ' ';
            svg << detail::fmt_px(pts[k][0]) << ',' << detail::fmt_px(pts[k][1]);
        }
        svg << "\" fill=\"none\" stroke=\"#e53935\" stroke-width=\"1.5\"/>\n";
    }

    // connect successive camera centers so the walk reads as a path
    if (chain.size() > 1) {
        svg << "  <polyline class=\"path\" points=\"";
        for (size_t i = 0; i < chain.size(); ++i) {
            const auto px = doc.mapping.to_pixel(chain[i].translation);
            if (i) svg << ' ';
            svg << detail::fmt_px(px[0]) << ',' << detail::fmt_px(px[1]);
        }
        svg << "\" fill=\"none\" stroke=\"#fdd835\" stroke-width=\"1\" "
               "stroke-dasharray=\"4 3\"/>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

// format: "json" copies the validated trajectory document, "svg" draws the
// frustum overlay. Returns the output path.
inline std::string export_trajectory(const std::string& run_dir,
                                     const std::string& episode_id,
                                     const std::string& format,
                                     std::string out_path = {}) {
    namespace fs = std::filesystem;
    if (format != "json" && format != "svg")
        throw ConfigError("export format must be json|svg, got '" + format + "'");
    const fs::path episode_dir = fs::path(run_dir) / episode_id;
    const TrajectoryDoc doc = load_trajectory((episode_dir / "trajectory.json").string());

    if (out_path.empty())
        out_path = (episode_dir / ("trajectory." + format)).string();
    fs::path out(out_path);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());

    std::string body;
    if (format == "json") {
        body = doc.raw.dump(2) + "\n";
    } else {
        SvgOptions opts;
        const fs::path png = episode_dir / "birds_eye.png";
        if (fs::exists(png)) {
            std::error_code ec;
            fs::path rel = fs::relative(png, out.parent_path(), ec);
            opts.background_href = ec ? png.string() : rel.string();
        }
        body = trajectory_svg(doc, opts);
    }
    std::ofstream f(out_path, std::ios::binary);
    if (!f) throw IoError("cannot write " + out_path);
    f << body;
    return out_path;
}

}  // namespace cov
