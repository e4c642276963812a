#pragma once

// Point-splat renderer: perspective views over a point cloud plus an
// orthographic top-down overview.

#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "cov/errors.hpp"
#include "cov/geometry.hpp"
#include "cov/image.hpp"
#include "cov/scene.hpp"

namespace cov {

enum class Provenance { AnchorFrame, Rendered, BirdsEye };

inline std::string provenance_name(Provenance p) {
    switch (p) {
        case Provenance::AnchorFrame: return "anchor_frame";
        case Provenance::Rendered: return "rendered";
        case Provenance::BirdsEye: return "birds_eye";
    }
    return "rendered";
}

inline Provenance provenance_from_name(const std::string& s) {
    if (s == "anchor_frame") return Provenance::AnchorFrame;
    if (s == "rendered") return Provenance::Rendered;
    if (s == "birds_eye") return Provenance::BirdsEye;
    throw ValidationError("unknown provenance: " + s);
}

struct RenderSettings {
    int splat_radius_px = 2;
    std::array<float, 3> background = {0.0f, 0.0f, 0.0f};
    double near_m = 0.05;
    double far_m = 100.0;

    void validate() const {
        if (splat_radius_px < 0 || splat_radius_px > 8)
            throw ValidationError("splat_radius_px must be in [0, 8]");
        if (!(near_m > 0)) throw ValidationError("near_m must be > 0");
        if (!(far_m > near_m)) throw ValidationError("far_m must exceed near_m");
        for (float c : background)
            if (!(c >= 0.0f && c <= 1.0f))
                throw ValidationError("background channels must be in [0, 1]");
    }
};

struct Observation {
    Image image;
    CameraPose pose;
    int step_index = 0;
    Provenance provenance = Provenance::Rendered;
};

namespace detail {

inline void splat(Image& img, std::vector<double>& zbuf, int cx, int cy,
                  double depth, const float* color, int radius) {
    for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
            if (dx * dx + dy * dy > radius * radius) continue;
            const int x = cx + dx, y = cy + dy;
            if (!img.in_bounds(x, y)) continue;
            const size_t idx = static_cast<size_t>(y) * img.width + x;
            if (depth < zbuf[idx]) {
                zbuf[idx] = depth;
                float* px = img.pixel(x, y);
                px[0] = color[0];
                px[1] = color[1];
                px[2] = color[2];
            }
        }
    }
}

}  // namespace detail

// Z-buffered splatting: nearest depth wins per pixel, earlier point wins ties.
// Pure over its inputs, so concurrent renders are safe.
inline Observation render_view(const ScenePointCloud& scene, const CameraPose& pose,
                               const Intrinsics& k, const RenderSettings& settings) {
    k.validate();
    settings.validate();

    Observation obs;
    obs.pose = pose;
    obs.provenance = Provenance::Rendered;
    obs.image = Image(k.width, k.height, settings.background[0],
                      settings.background[1], settings.background[2]);

    std::vector<double> zbuf(static_cast<size_t>(k.width) * k.height,
                             std::numeric_limits<double>::infinity());
    for (size_t i = 0; i < scene.points.size(); ++i) {
        const auto& p = scene.points[i];
        const auto hit = project(Vec3{p[0], p[1], p[2]}, pose, k);
        if (!hit) continue;
        if (hit->depth < settings.near_m || hit->depth > settings.far_m) continue;
        detail::splat(obs.image, zbuf, static_cast<int>(std::floor(hit->u)),
                      static_cast<int>(std::floor(hit->v)), hit->depth,
                      scene.colors[i].data(), settings.splat_radius_px);
    }
    return obs;
}

enum class UpAxis { Z, Y };

// Orthographic top-down pixel mapping over the scene footprint with a 5%
// margin per side. Up-axis +z maps world x right and world y up the image;
// up-axis +y maps world x right and world z down the image.
struct BirdsEyeMapping {
    int width = 0;
    int height = 0;
    UpAxis up = UpAxis::Z;
    double center_u = 0;  // footprint center, ground coords
    double center_v = 0;
    double scale = 1;    // pixels per meter
    double v_sign = -1;  // -1: ground v increases toward image top

    std::array<double, 2> ground(const Vec3& p) const {
        return up == UpAxis::Z ? std::array<double, 2>{p.x, p.y}
                               : std::array<double, 2>{p.x, p.z};
    }
    double elevation(const Vec3& p) const { return up == UpAxis::Z ? p.z : p.y; }

    // continuous pixel coordinates; callers round
    std::array<double, 2> to_pixel(const Vec3& p) const {
        const auto g = ground(p);
        return {0.5 * (width - 1) + (g[0] - center_u) * scale,
                0.5 * (height - 1) + v_sign * (g[1] - center_v) * scale};
    }
};

inline BirdsEyeMapping make_birds_eye_mapping(const Aabb& aabb, int width, int height,
                                              UpAxis up = UpAxis::Z) {
    BirdsEyeMapping m;
    m.width = width;
    m.height = height;
    m.up = up;
    m.v_sign = up == UpAxis::Z ? -1.0 : 1.0;

    const Vec3 lo = aabb.min_corner, hi = aabb.max_corner;
    double ext_u, ext_v;
    if (up == UpAxis::Z) {
        m.center_u = 0.5 * (lo.x + hi.x);
        m.center_v = 0.5 * (lo.y + hi.y);
        ext_u = hi.x - lo.x;
        ext_v = hi.y - lo.y;
    } else {
        m.center_u = 0.5 * (lo.x + hi.x);
        m.center_v = 0.5 * (lo.z + hi.z);
        ext_u = hi.x - lo.x;
        ext_v = hi.z - lo.z;
    }
    ext_u *= 1.10;
    ext_v *= 1.10;

    double scale = std::numeric_limits<double>::infinity();
    if (ext_u > 0) scale = std::min(scale, (width - 1) / ext_u);
    if (ext_v > 0) scale = std::min(scale, (height - 1) / ext_v);
    m.scale = std::isfinite(scale) ? scale : 1.0;
    return m;
}

// Top-down overview: per pixel the highest point wins, earlier point wins
// ties. The attached pose is overhead-camera metadata for exports; the pixel
// mapping itself is the BirdsEyeMapping above.
inline Observation render_birds_eye(const ScenePointCloud& scene, int width,
                                    int height, const RenderSettings& settings,
                                    UpAxis up = UpAxis::Z) {
    settings.validate();
    if (width <= 0 || height <= 0)
        throw ValidationError("birds-eye resolution must be positive");

    Observation obs;
    obs.provenance = Provenance::BirdsEye;
    obs.image = Image(width, height, settings.background[0], settings.background[1],
                      settings.background[2]);

    const auto mapping = make_birds_eye_mapping(scene.aabb, width, height, up);

    {
        Mat3 r = Mat3::identity();
        Vec3 center = scene.aabb.center();
        const double span = (scene.aabb.extent().norm()) + 1.0;
        if (up == UpAxis::Z) {
            r.set_col(0, Vec3{1, 0, 0});
            r.set_col(1, Vec3{0, -1, 0});
            r.set_col(2, Vec3{0, 0, -1});
            center.z += span;
        } else {
            r.set_col(0, Vec3{1, 0, 0});
            r.set_col(1, Vec3{0, 0, 1});
            r.set_col(2, Vec3{0, -1, 0});
            center.y += span;
        }
        obs.pose = CameraPose{r, center};
    }

    if (scene.points.empty()) return obs;

    // elevation buffer: higher wins
    std::vector<double> elev(static_cast<size_t>(width) * height,
                             -std::numeric_limits<double>::infinity());
    const int radius = settings.splat_radius_px;
    for (size_t i = 0; i < scene.points.size(); ++i) {
        const Vec3 p{scene.points[i][0], scene.points[i][1], scene.points[i][2]};
        const auto uv = mapping.to_pixel(p);
        const int x = static_cast<int>(std::lround(uv[0]));
        const int y = static_cast<int>(std::lround(uv[1]));
        const double h = mapping.elevation(p);
        for (int dy = -radius; dy <= radius; ++dy) {
            for (int dx = -radius; dx <= radius; ++dx) {
                if (dx * dx + dy * dy > radius * radius) continue;
                const int px = x + dx, py = y + dy;
                if (!obs.image.in_bounds(px, py)) continue;
                const size_t idx = static_cast<size_t>(py) * width + px;
                if (h > elev[idx]) {
                    elev[idx] = h;
                    float* dst = obs.image.pixel(px, py);
                    dst[0] = scene.colors[i][0];
                    dst[1] = scene.colors[i][1];
                    dst[2] = scene.colors[i][2];
                }
            }
        }
    }
    return obs;
}

enum class ImageFormat { PNG, JPEG };

inline std::vector<uint8_t> encode_image(const Observation& obs, ImageFormat format,
                                         int quality = 90) {
    if (format == ImageFormat::PNG) return encode_png(obs.image);
    if (quality < 1 || quality > 100)
        throw EncodeFailureError("jpeg quality must be in [1, 100]");
    return encode_jpeg(obs.image, quality);
}

inline nlohmann::json observation_sidecar(const Observation& obs) {
    nlohmann::json j;
    j["pose"] = obs.pose.to_matrix();
    j["step_index"] = obs.step_index;
    j["provenance"] = provenance_name(obs.provenance);
    return j;
}

inline void save_observation(const Observation& obs, const std::string& png_path,
                             const std::string& json_path) {
    save_png(obs.image, png_path);
    std::ofstream out(json_path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + json_path);
    out << observation_sidecar(obs).dump(2) << "\n";
    if (!out) throw IoError("write failure: " + json_path);
}

}  // namespace cov
