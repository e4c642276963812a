#pragma once

// Deterministic synthetic scenes and camera rigs. The shipped fixture data
// under data/fixtures is generated from these builders (tools/make_fixtures)
// and the test suite rebuilds the same clouds in memory.

#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "cov/geometry.hpp"
#include "cov/scene.hpp"

namespace cov::fixtures {

using Color = std::array<float, 3>;

inline void add_grid(ScenePointCloud& cloud, const Vec3& origin, const Vec3& edge_u,
                     const Vec3& edge_v, int nu, int nv, const Color& color) {
    for (int i = 0; i < nu; ++i) {
        const double fu = nu > 1 ? static_cast<double>(i) / (nu - 1) : 0.0;
        for (int j = 0; j < nv; ++j) {
            const double fv = nv > 1 ? static_cast<double>(j) / (nv - 1) : 0.0;
            const Vec3 p = origin + edge_u * fu + edge_v * fv;
            cloud.points.push_back({static_cast<float>(p.x), static_cast<float>(p.y),
                                    static_cast<float>(p.z)});
            cloud.colors.push_back(color);
        }
    }
}

// Axis-aligned box shell; n controls samples per edge.
inline void add_box(ScenePointCloud& cloud, const Vec3& lo, const Vec3& hi,
                    const Color& color, int n = 8) {
    const Vec3 dx{hi.x - lo.x, 0, 0};
    const Vec3 dy{0, hi.y - lo.y, 0};
    const Vec3 dz{0, 0, hi.z - lo.z};
    add_grid(cloud, lo, dx, dy, n, n, color);                       // bottom
    add_grid(cloud, {lo.x, lo.y, hi.z}, dx, dy, n, n, color);       // top
    add_grid(cloud, lo, dx, dz, n, n, color);                       // y = lo
    add_grid(cloud, {lo.x, hi.y, lo.z}, dx, dz, n, n, color);       // y = hi
    add_grid(cloud, lo, dy, dz, n, n, color);                       // x = lo
    add_grid(cloud, {hi.x, lo.y, lo.z}, dy, dz, n, n, color);       // x = hi
}

inline void add_ball(ScenePointCloud& cloud, const Vec3& center, double radius,
                     const Color& color, int rings = 10) {
    for (int i = 0; i <= rings; ++i) {
        const double phi = std::numbers::pi * i / rings;
        const int segs = std::max(1, static_cast<int>(2 * rings * std::sin(phi)) + 1);
        for (int j = 0; j < segs; ++j) {
            const double theta = 2.0 * std::numbers::pi * j / segs;
            const Vec3 p = center + Vec3{std::sin(phi) * std::cos(theta),
                                         std::sin(phi) * std::sin(theta),
                                         std::cos(phi)} *
                                        radius;
            cloud.points.push_back({static_cast<float>(p.x), static_cast<float>(p.y),
                                    static_cast<float>(p.z)});
            cloud.colors.push_back(color);
        }
    }
}

// Hollow room shell with distinctly colored walls (Z up, floor at z = 0).
inline void add_room(ScenePointCloud& cloud, const Vec3& lo, const Vec3& hi,
                     double spacing) {
    auto steps = [&](double len) {
        return std::max(2, static_cast<int>(std::lround(len / spacing)) + 1);
    };
    const int nx = steps(hi.x - lo.x);
    const int ny = steps(hi.y - lo.y);
    const int nz = steps(hi.z - lo.z);
    const Vec3 dx{hi.x - lo.x, 0, 0};
    const Vec3 dy{0, hi.y - lo.y, 0};
    const Vec3 dz{0, 0, hi.z - lo.z};

    add_grid(cloud, lo, dx, dy, nx, ny, {0.35f, 0.32f, 0.30f});                 // floor
    add_grid(cloud, {lo.x, lo.y, hi.z}, dx, dy, nx, ny, {0.92f, 0.92f, 0.88f});  // ceiling
    add_grid(cloud, lo, dx, dz, nx, nz, {0.75f, 0.35f, 0.30f});                 // south
    add_grid(cloud, {lo.x, hi.y, lo.z}, dx, dz, nx, nz, {0.30f, 0.55f, 0.75f});  // north
    add_grid(cloud, lo, dy, dz, ny, nz, {0.40f, 0.70f, 0.35f});                 // west
    add_grid(cloud, {hi.x, lo.y, lo.z}, dy, dz, ny, nz, {0.80f, 0.70f, 0.30f});  // east
}

// 4 x 4 x 2.4 m room with a red box in the north-east corner and a blue ball
// near the west wall.
inline ScenePointCloud cube_room() {
    ScenePointCloud cloud;
    add_room(cloud, {-2, -2, 0}, {2, 2, 2.4}, 0.08);
    add_box(cloud, {1.1, 1.1, 0.0}, {1.8, 1.8, 0.7}, {0.95f, 0.10f, 0.10f}, 10);
    add_ball(cloud, {-1.5, 0.0, 0.35}, 0.35, {0.15f, 0.20f, 0.95f}, 12);
    cloud.recompute_aabb();
    return cloud;
}

// Two 3 x 3 rooms joined by an open 2 x 1 corridor along x; a yellow box
// stands in the east room.
inline ScenePointCloud corridor() {
    ScenePointCloud cloud;
    const double s = 0.08, h = 2.4;
    add_room(cloud, {-4.0, -1.5, 0}, {-1.0, 1.5, h}, s);
    add_room(cloud, {1.0, -1.5, 0}, {4.0, 1.5, h}, s);
    // corridor floor and side walls, open at both ends
    const Vec3 dx{2.0, 0, 0};
    const Vec3 dz{0, 0, h};
    add_grid(cloud, {-1.0, -0.5, 0}, dx, {0, 1.0, 0}, 26, 14, {0.35f, 0.32f, 0.30f});
    add_grid(cloud, {-1.0, -0.5, h}, dx, {0, 1.0, 0}, 26, 14, {0.92f, 0.92f, 0.88f});
    add_grid(cloud, {-1.0, -0.5, 0}, dx, dz, 26, 31, {0.55f, 0.45f, 0.60f});
    add_grid(cloud, {-1.0, 0.5, 0}, dx, dz, 26, 31, {0.55f, 0.45f, 0.60f});
    add_box(cloud, {2.4, 0.3, 0.0}, {3.2, 1.1, 0.9}, {0.95f, 0.85f, 0.10f}, 10);
    cloud.recompute_aabb();
    return cloud;
}

// 4 x 4 room split by a divider wall at x = 0 (with a gap near the north
// wall); a green ball hides east of the divider.
inline ScenePointCloud occluded_room() {
    ScenePointCloud cloud;
    add_room(cloud, {-2, -2, 0}, {2, 2, 2.4}, 0.08);
    // divider spans y in [-2, 0.8], leaving a walkable gap to the north
    add_grid(cloud, {0, -2, 0}, {0, 2.8, 0}, {0, 0, 2.2}, 36, 28,
             {0.60f, 0.60f, 0.62f});
    add_ball(cloud, {1.2, -1.2, 0.4}, 0.4, {0.10f, 0.85f, 0.20f}, 12);
    cloud.recompute_aabb();
    return cloud;
}

// Camera at eye looking toward target, world up +Z, using the x-right
// y-down z-forward camera convention.
inline CameraPose look_at(const Vec3& eye, const Vec3& target) {
    const Vec3 f = (target - eye).normalized();
    Vec3 down{0, 0, -1};
    down = (down - f * down.dot(f)).normalized();
    if (down.norm() < 0.5) down = (Vec3{0, 1, 0} - f * f.y).normalized();
    const Vec3 right = down.cross(f);
    CameraPose pose;
    pose.rotation.set_col(0, right);
    pose.rotation.set_col(1, down);
    pose.rotation.set_col(2, f);
    pose.rotation = orthonormalized(pose.rotation);
    pose.translation = eye;
    return pose;
}

// n poses on a horizontal circle, all looking at the ring's center.
inline std::vector<CameraPose> ring_poses(int n, const Vec3& center, double radius,
                                          double height) {
    std::vector<CameraPose> out;
    for (int i = 0; i < n; ++i) {
        const double theta = 2.0 * std::numbers::pi * i / n;
        const Vec3 eye{center.x + radius * std::cos(theta),
                       center.y + radius * std::sin(theta), height};
        out.push_back(look_at(eye, {center.x, center.y, height}));
    }
    return out;
}

// The committed golden renders of the cube room use this pose: from the
// south-west at eye height, looking at the red corner box.
inline CameraPose golden_view_pose() {
    return look_at({-1.4, -1.6, 1.5}, {1.45, 1.45, 0.35});
}

inline Intrinsics frame_intrinsics(int width = 320, int height = 240) {
    Intrinsics k;
    k.width = width;
    k.height = height;
    k.fx = k.fy = 0.8 * width;
    k.cx = 0.5 * width;
    k.cy = 0.5 * height;
    return k;
}

}  // namespace cov::fixtures
