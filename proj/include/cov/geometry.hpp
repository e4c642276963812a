#pragma once

// Rigid-body pose algebra and the discrete camera action vocabulary.
//
// Conventions (fixed for the whole project):
//   - CameraPose is camera-to-world: rotation columns are the camera axes
//     expressed in world coordinates, translation is the camera center.
//   - Camera frame: +z forward, +x right, +y down (right-handed pinhole).
//   - Rotational actions are intrinsic, i.e. about the camera's own axes.
//   - Poses serialize as row-major 4x4 camera-to-world matrices.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>

#include "cov/errors.hpp"

namespace cov {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator-() const { return {-x, -y, -z}; }

    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm() const { return std::sqrt(dot(*this)); }
    Vec3 normalized() const {
        const double n = norm();
        return n > 0.0 ? Vec3{x / n, y / n, z / n} : Vec3{};
    }
    bool finite() const {
        return std::isfinite(x) && std::isfinite(y) && std::isfinite(z);
    }
};

// Row-major 3x3 matrix.
struct Mat3 {
    double m[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};

    static Mat3 identity() { return {}; }

    Mat3 operator*(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double s = 0.0;
                for (int k = 0; k < 3; ++k) s += m[i][k] * o.m[k][j];
                r.m[i][j] = s;
            }
        return r;
    }

    Vec3 operator*(const Vec3& v) const {
        return {m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
                m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
                m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z};
    }

    Mat3 transposed() const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r.m[i][j] = m[j][i];
        return r;
    }

    double det() const {
        return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
               m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
               m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    }

    Vec3 col(int j) const { return {m[0][j], m[1][j], m[2][j]}; }
    void set_col(int j, const Vec3& v) {
        m[0][j] = v.x;
        m[1][j] = v.y;
        m[2][j] = v.z;
    }

    bool finite() const {
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                if (!std::isfinite(m[i][j])) return false;
        return true;
    }

    static Mat3 rot_x(double rad) {
        const double c = std::cos(rad), s = std::sin(rad);
        Mat3 r;
        r.m[0][0] = 1; r.m[0][1] = 0; r.m[0][2] = 0;
        r.m[1][0] = 0; r.m[1][1] = c; r.m[1][2] = -s;
        r.m[2][0] = 0; r.m[2][1] = s; r.m[2][2] = c;
        return r;
    }
    static Mat3 rot_y(double rad) {
        const double c = std::cos(rad), s = std::sin(rad);
        Mat3 r;
        r.m[0][0] = c;  r.m[0][1] = 0; r.m[0][2] = s;
        r.m[1][0] = 0;  r.m[1][1] = 1; r.m[1][2] = 0;
        r.m[2][0] = -s; r.m[2][1] = 0; r.m[2][2] = c;
        return r;
    }
    static Mat3 rot_z(double rad) {
        const double c = std::cos(rad), s = std::sin(rad);
        Mat3 r;
        r.m[0][0] = c; r.m[0][1] = -s; r.m[0][2] = 0;
        r.m[1][0] = s; r.m[1][1] = c;  r.m[1][2] = 0;
        r.m[2][0] = 0; r.m[2][1] = 0;  r.m[2][2] = 1;
        return r;
    }
};

// Gram-Schmidt re-orthonormalization; keeps determinant +1 over long
// composition chains.
inline Mat3 orthonormalized(const Mat3& r) {
    Vec3 x = r.col(0).normalized();
    Vec3 y = r.col(1) - x * x.dot(r.col(1));
    y = y.normalized();
    Vec3 z = x.cross(y);
    Mat3 out;
    out.set_col(0, x);
    out.set_col(1, y);
    out.set_col(2, z);
    return out;
}

// Axis-aligned bounding box (world frame, meters).
struct Aabb {
    Vec3 min_corner;
    Vec3 max_corner;

    bool contains(const Vec3& p) const {
        return p.x >= min_corner.x && p.x <= max_corner.x && p.y >= min_corner.y &&
               p.y <= max_corner.y && p.z >= min_corner.z && p.z <= max_corner.z;
    }
    Vec3 center() const { return (min_corner + max_corner) * 0.5; }
    Vec3 extent() const { return max_corner - min_corner; }
    Aabb expanded(double margin) const {
        const Vec3 m{margin, margin, margin};
        return {min_corner - m, max_corner + m};
    }
    void grow(const Vec3& p) {
        min_corner.x = std::min(min_corner.x, p.x);
        min_corner.y = std::min(min_corner.y, p.y);
        min_corner.z = std::min(min_corner.z, p.z);
        max_corner.x = std::max(max_corner.x, p.x);
        max_corner.y = std::max(max_corner.y, p.y);
        max_corner.z = std::max(max_corner.z, p.z);
    }
};

constexpr double kRigidTolerance = 1e-9;

struct CameraPose {
    Mat3 rotation;      // camera-to-world
    Vec3 translation;   // camera center in world frame

    static CameraPose identity() { return {}; }

    Vec3 forward() const { return rotation.col(2); }
    Vec3 right() const { return rotation.col(0); }
    Vec3 down() const { return rotation.col(1); }

    bool is_rigid(double tol = kRigidTolerance) const {
        if (!rotation.finite() || !translation.finite()) return false;
        const Mat3 should_be_i = rotation.transposed() * rotation;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                const double want = i == j ? 1.0 : 0.0;
                if (std::abs(should_be_i.m[i][j] - want) > tol) return false;
            }
        return std::abs(rotation.det() - 1.0) <= tol;
    }

    // Row-major 4x4 camera-to-world matrix, the wire format for all JSON
    // surfaces.
    std::array<double, 16> to_matrix() const {
        std::array<double, 16> out{};
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) out[i * 4 + j] = rotation.m[i][j];
        }
        out[3] = translation.x;
        out[7] = translation.y;
        out[11] = translation.z;
        out[15] = 1.0;
        return out;
    }

    static CameraPose from_matrix(const std::array<double, 16>& m) {
        CameraPose p;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) p.rotation.m[i][j] = m[i * 4 + j];
        p.translation = {m[3], m[7], m[11]};
        return p;
    }
};

inline CameraPose compose(const CameraPose& a, const CameraPose& b) {
    CameraPose out;
    out.rotation = orthonormalized(a.rotation * b.rotation);
    out.translation = a.rotation * b.translation + a.translation;
    return out;
}

inline CameraPose inverse(const CameraPose& p) {
    CameraPose out;
    out.rotation = p.rotation.transposed();
    out.translation = -(out.rotation * p.translation);
    return out;
}

struct Intrinsics {
    double fx = 0.0, fy = 0.0;
    double cx = 0.0, cy = 0.0;
    int width = 0, height = 0;

    void validate() const {
        if (!(fx > 0.0) || !(fy > 0.0))
            throw ValidationError("intrinsics: focal lengths must be positive");
        if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height))
            throw ValidationError("intrinsics: principal point outside image");
    }
};

// Points at or behind this camera-space depth do not project.
constexpr double kProjectNear = 1e-4;

struct PixelPoint {
    double u = 0.0, v = 0.0;  // pixel coordinates
    double depth = 0.0;       // meters along the camera forward axis
};

// Pinhole projection of a world point. Empty when the point is at or behind
// the camera plane or lands outside the image.
inline std::optional<PixelPoint> project(const Vec3& world, const CameraPose& pose,
                                         const Intrinsics& k) {
    const Vec3 cam = pose.rotation.transposed() * (world - pose.translation);
    if (cam.z <= kProjectNear) return std::nullopt;
    const double u = k.fx * cam.x / cam.z + k.cx;
    const double v = k.fy * cam.y / cam.z + k.cy;
    if (u < 0.0 || u >= k.width || v < 0.0 || v >= k.height) return std::nullopt;
    return PixelPoint{u, v, cam.z};
}

inline Vec3 unproject(double u, double v, double depth, const CameraPose& pose,
                      const Intrinsics& k) {
    const Vec3 cam{(u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth};
    return pose.rotation * cam + pose.translation;
}

// ---- action vocabulary ----

enum class ActionKind {
    MoveForward,
    MoveBackward,
    MoveLeft,
    MoveRight,
    MoveUp,
    MoveDown,
    YawLeft,
    YawRight,
    PitchUp,
    PitchDown,
    RollCW,
    RollCCW,
    SwitchTo,
    Answer,
};

struct Action {
    ActionKind kind = ActionKind::MoveForward;
    int anchor_index = -1;  // SwitchTo only
    std::string text;       // Answer only

    static Action motion(ActionKind k) { return {k, -1, {}}; }
    static Action switch_to(int index) { return {ActionKind::SwitchTo, index, {}}; }
    static Action answer(std::string t) {
        return {ActionKind::Answer, -1, std::move(t)};
    }

    bool is_motion() const {
        return kind != ActionKind::SwitchTo && kind != ActionKind::Answer;
    }
    bool operator==(const Action& o) const {
        return kind == o.kind && anchor_index == o.anchor_index && text == o.text;
    }
};

constexpr ActionKind kMotionKinds[12] = {
    ActionKind::MoveForward, ActionKind::MoveBackward, ActionKind::MoveLeft,
    ActionKind::MoveRight,   ActionKind::MoveUp,       ActionKind::MoveDown,
    ActionKind::YawLeft,     ActionKind::YawRight,     ActionKind::PitchUp,
    ActionKind::PitchDown,   ActionKind::RollCW,       ActionKind::RollCCW,
};

// Every motion has an inverse in the vocabulary.
inline ActionKind inverse_motion(ActionKind k) {
    switch (k) {
        case ActionKind::MoveForward:  return ActionKind::MoveBackward;
        case ActionKind::MoveBackward: return ActionKind::MoveForward;
        case ActionKind::MoveLeft:     return ActionKind::MoveRight;
        case ActionKind::MoveRight:    return ActionKind::MoveLeft;
        case ActionKind::MoveUp:       return ActionKind::MoveDown;
        case ActionKind::MoveDown:     return ActionKind::MoveUp;
        case ActionKind::YawLeft:      return ActionKind::YawRight;
        case ActionKind::YawRight:     return ActionKind::YawLeft;
        case ActionKind::PitchUp:      return ActionKind::PitchDown;
        case ActionKind::PitchDown:    return ActionKind::PitchUp;
        case ActionKind::RollCW:       return ActionKind::RollCCW;
        case ActionKind::RollCCW:      return ActionKind::RollCW;
        default:
            throw AnswerNotAMotionError("inverse_motion: not a motion action");
    }
}

inline const char* action_name(ActionKind k) {
    switch (k) {
        case ActionKind::MoveForward:  return "move forward";
        case ActionKind::MoveBackward: return "move backward";
        case ActionKind::MoveLeft:     return "move left";
        case ActionKind::MoveRight:    return "move right";
        case ActionKind::MoveUp:       return "move up";
        case ActionKind::MoveDown:     return "move down";
        case ActionKind::YawLeft:      return "yaw left";
        case ActionKind::YawRight:     return "yaw right";
        case ActionKind::PitchUp:      return "pitch up";
        case ActionKind::PitchDown:    return "pitch down";
        case ActionKind::RollCW:       return "roll cw";
        case ActionKind::RollCCW:      return "roll ccw";
        case ActionKind::SwitchTo:     return "switch to view";
        case ActionKind::Answer:       return "answer";
    }
    return "?";
}

inline std::string action_label(const Action& a) {
    if (a.kind == ActionKind::SwitchTo)
        return std::string("switch to view ") + std::to_string(a.anchor_index);
    return action_name(a.kind);
}

// How "move up / move down" is interpreted.
enum class VerticalMode { CameraLocal, WorldZ, WorldY };

struct MotionConfig {
    double step_m = 0.3;
    double yaw_deg = 30.0;
    double pitch_deg = 30.0;
    double roll_deg = 30.0;
    double clamp_margin_m = 0.5;
    VerticalMode vertical = VerticalMode::CameraLocal;

    void validate() const {
        if (!(step_m > 0 && yaw_deg > 0 && pitch_deg > 0 && roll_deg > 0 &&
              clamp_margin_m > 0))
            throw ValidationError("motion config: all magnitudes must be positive");
    }
};

inline double deg_to_rad(double d) { return d * std::numbers::pi / 180.0; }

inline Vec3 clamp_into(const Vec3& p, const Aabb& box) {
    return {std::clamp(p.x, box.min_corner.x, box.max_corner.x),
            std::clamp(p.y, box.min_corner.y, box.max_corner.y),
            std::clamp(p.z, box.min_corner.z, box.max_corner.z)};
}

// Maps one discrete action onto an SE(3) pose update. Translations step along
// the camera's local axes, rotations turn about them, SwitchTo returns the
// anchor pose bit-exactly. The resulting camera center is clamped into the
// scene bounds expanded by clamp_margin_m.
inline CameraPose apply_action(const CameraPose& pose, const Action& action,
                               const MotionConfig& config, const Aabb& scene_bounds,
                               std::span<const CameraPose> anchors) {
    if (action.kind == ActionKind::Answer)
        throw AnswerNotAMotionError("apply_action: Answer is not a motion");
    if (action.kind == ActionKind::SwitchTo) {
        if (action.anchor_index < 0 ||
            action.anchor_index >= static_cast<int>(anchors.size()))
            throw InvalidAnchorError("apply_action: anchor index " +
                                     std::to_string(action.anchor_index) +
                                     " out of range (have " +
                                     std::to_string(anchors.size()) + " anchors)");
        return anchors[action.anchor_index];
    }

    const Aabb limit = scene_bounds.expanded(config.clamp_margin_m);
    CameraPose out = pose;

    auto translate = [&](const Vec3& local_dir) {
        Vec3 dir;
        switch (config.vertical) {
            case VerticalMode::CameraLocal:
                dir = pose.rotation * local_dir;
                break;
            case VerticalMode::WorldZ:
                // Only up/down are redirected; lateral moves stay camera-local.
                if (local_dir.x == 0.0 && local_dir.z == 0.0)
                    dir = {0.0, 0.0, -local_dir.y};
                else
                    dir = pose.rotation * local_dir;
                break;
            case VerticalMode::WorldY:
                if (local_dir.x == 0.0 && local_dir.z == 0.0)
                    dir = {0.0, -local_dir.y, 0.0};
                else
                    dir = pose.rotation * local_dir;
                break;
        }
        out.translation = pose.translation + dir * config.step_m;
    };
    auto rotate = [&](const Mat3& local_rot) {
        out.rotation = orthonormalized(pose.rotation * local_rot);
    };

    const double yaw = deg_to_rad(config.yaw_deg);
    const double pitch = deg_to_rad(config.pitch_deg);
    const double roll = deg_to_rad(config.roll_deg);

    switch (action.kind) {
        case ActionKind::MoveForward:  translate({0, 0, 1});  break;
        case ActionKind::MoveBackward: translate({0, 0, -1}); break;
        case ActionKind::MoveLeft:     translate({-1, 0, 0}); break;
        case ActionKind::MoveRight:    translate({1, 0, 0});  break;
        case ActionKind::MoveUp:       translate({0, -1, 0}); break;
        case ActionKind::MoveDown:     translate({0, 1, 0});  break;
        case ActionKind::YawLeft:      rotate(Mat3::rot_y(-yaw));  break;
        case ActionKind::YawRight:     rotate(Mat3::rot_y(yaw));   break;
        case ActionKind::PitchUp:      rotate(Mat3::rot_x(pitch)); break;
        case ActionKind::PitchDown:    rotate(Mat3::rot_x(-pitch)); break;
        case ActionKind::RollCW:       rotate(Mat3::rot_z(roll));  break;
        case ActionKind::RollCCW:      rotate(Mat3::rot_z(-roll)); break;
        default: break;  // handled above
    }

    out.translation = clamp_into(out.translation, limit);
    return out;
}

}  // namespace cov
