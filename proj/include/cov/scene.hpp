#pragma once

// Scene and episode loading: PLY point clouds (ascii / binary little-endian),
// a compact native cache, and the episode JSON schema.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cov/errors.hpp"
#include "cov/geometry.hpp"

static_assert(std::endian::native == std::endian::little,
              "scene loaders assume a little-endian host");

namespace cov {

struct ScenePointCloud {
    std::vector<std::array<float, 3>> points;  // meters, world frame
    std::vector<std::array<float, 3>> colors;  // rgb in [0,1]
    Aabb aabb;                                 // degenerate at origin when empty

    size_t size() const { return points.size(); }

    void recompute_aabb() {
        if (points.empty()) {
            aabb = Aabb{{0, 0, 0}, {0, 0, 0}};
            return;
        }
        aabb.min_corner = aabb.max_corner =
            Vec3{points[0][0], points[0][1], points[0][2]};
        for (const auto& p : points) aabb.grow(Vec3{p[0], p[1], p[2]});
    }

    void validate() const {
        if (points.size() != colors.size())
            throw ValidationError("point cloud: points/colors length mismatch");
        for (const auto& p : points)
            if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2]))
                throw MalformedFileError("point cloud: non-finite coordinate");
        for (const auto& c : colors)
            for (int i = 0; i < 3; ++i)
                if (!(c[i] >= 0.0f && c[i] <= 1.0f))
                    throw ValidationError("point cloud: color channel outside [0,1]");
    }
};

struct FrameRecord {
    int frame_id = 0;
    std::string image_path;  // resolved against the episode file's directory
    CameraPose pose;         // camera-to-world
    Intrinsics intrinsics;
};

struct Episode {
    std::string episode_id;
    std::string scene_path;
    std::vector<FrameRecord> frames;  // video order
    std::string question;
    std::string ground_truth;
    std::vector<std::string> extra_answers;
    std::string category;
    std::string source_path;
};

namespace detail {

inline std::vector<uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failure: " + path);
    return bytes;
}

enum class PlyScalar { Char, UChar, Short, UShort, Int, UInt, Float, Double };

inline size_t ply_scalar_size(PlyScalar t) {
    switch (t) {
        case PlyScalar::Char:
        case PlyScalar::UChar: return 1;
        case PlyScalar::Short:
        case PlyScalar::UShort: return 2;
        case PlyScalar::Int:
        case PlyScalar::UInt:
        case PlyScalar::Float: return 4;
        case PlyScalar::Double: return 8;
    }
    return 0;
}

inline std::optional<PlyScalar> ply_scalar_from(const std::string& s) {
    if (s == "char" || s == "int8") return PlyScalar::Char;
    if (s == "uchar" || s == "uint8") return PlyScalar::UChar;
    if (s == "short" || s == "int16") return PlyScalar::Short;
    if (s == "ushort" || s == "uint16") return PlyScalar::UShort;
    if (s == "int" || s == "int32") return PlyScalar::Int;
    if (s == "uint" || s == "uint32") return PlyScalar::UInt;
    if (s == "float" || s == "float32") return PlyScalar::Float;
    if (s == "double" || s == "float64") return PlyScalar::Double;
    return std::nullopt;
}

struct PlyProperty {
    std::string name;
    PlyScalar type = PlyScalar::Float;
    bool is_list = false;
};

struct PlyElement {
    std::string name;
    size_t count = 0;
    std::vector<PlyProperty> properties;
};

struct PlyHeader {
    bool binary = false;
    std::vector<PlyElement> elements;
    size_t data_offset = 0;  // byte offset of the first data byte
};

inline PlyHeader parse_ply_header(const std::vector<uint8_t>& bytes,
                                  const std::string& path) {
    PlyHeader header;
    size_t pos = 0;
    auto next_line = [&]() -> std::optional<std::string> {
        if (pos >= bytes.size()) return std::nullopt;
        size_t end = pos;
        while (end < bytes.size() && bytes[end] != '\n') ++end;
        std::string line(reinterpret_cast<const char*>(bytes.data() + pos), end - pos);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        pos = end < bytes.size() ? end + 1 : end;
        return line;
    };

    auto magic = next_line();
    if (!magic || *magic != "ply")
        throw MalformedFileError("not a PLY file: " + path);

    bool saw_format = false;
    bool done = false;
    while (auto line = next_line()) {
        std::istringstream ls(*line);
        std::string word;
        ls >> word;
        if (word.empty() || word == "comment" || word == "obj_info") continue;
        if (word == "format") {
            std::string fmt, version;
            ls >> fmt >> version;
            if (fmt == "ascii") header.binary = false;
            else if (fmt == "binary_little_endian") header.binary = true;
            else if (fmt == "binary_big_endian")
                throw UnsupportedFormatError("big-endian PLY is not supported: " + path);
            else
                throw MalformedFileError("unknown PLY format '" + fmt + "': " + path);
            saw_format = true;
        } else if (word == "element") {
            PlyElement el;
            if (!(ls >> el.name >> el.count))
                throw MalformedFileError("malformed element line in " + path);
            header.elements.push_back(el);
        } else if (word == "property") {
            if (header.elements.empty())
                throw MalformedFileError("property before element in " + path);
            PlyProperty prop;
            std::string type_word;
            ls >> type_word;
            if (type_word == "list") {
                std::string count_type, value_type;
                if (!(ls >> count_type >> value_type >> prop.name))
                    throw MalformedFileError("malformed list property in " + path);
                prop.is_list = true;
            } else {
                auto t = ply_scalar_from(type_word);
                if (!t || !(ls >> prop.name))
                    throw MalformedFileError("malformed property line in " + path);
                prop.type = *t;
            }
            header.elements.back().properties.push_back(prop);
        } else if (word == "end_header") {
            done = true;
            break;
        } else {
            throw MalformedFileError("unexpected header token '" + word + "' in " + path);
        }
    }
    if (!done || !saw_format)
        throw MalformedFileError("unterminated PLY header in " + path);
    header.data_offset = pos;
    return header;
}

inline double ply_read_scalar(const uint8_t* p, PlyScalar t) {
    switch (t) {
        case PlyScalar::Char: { int8_t v; std::memcpy(&v, p, 1); return v; }
        case PlyScalar::UChar: { uint8_t v; std::memcpy(&v, p, 1); return v; }
        case PlyScalar::Short: { int16_t v; std::memcpy(&v, p, 2); return v; }
        case PlyScalar::UShort: { uint16_t v; std::memcpy(&v, p, 2); return v; }
        case PlyScalar::Int: { int32_t v; std::memcpy(&v, p, 4); return v; }
        case PlyScalar::UInt: { uint32_t v; std::memcpy(&v, p, 4); return v; }
        case PlyScalar::Float: { float v; std::memcpy(&v, p, 4); return v; }
        case PlyScalar::Double: { double v; std::memcpy(&v, p, 8); return v; }
    }
    return 0.0;
}

}  // namespace detail

constexpr char kCloudCacheMagic[8] = {'C', 'O', 'V', 'P', 'C', '0', '0', '1'};

inline void save_point_cloud_cache(const ScenePointCloud& cloud,
                                   const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(kCloudCacheMagic, sizeof(kCloudCacheMagic));
    const uint64_t n = cloud.points.size();
    out.write(reinterpret_cast<const char*>(&n), sizeof(n));
    out.write(reinterpret_cast<const char*>(cloud.points.data()),
              static_cast<std::streamsize>(n * 3 * sizeof(float)));
    out.write(reinterpret_cast<const char*>(cloud.colors.data()),
              static_cast<std::streamsize>(n * 3 * sizeof(float)));
    if (!out) throw IoError("write failure: " + path);
}

// Loads a scene from a PLY file (ascii or binary little-endian, vertex
// properties x/y/z float32 and red/green/blue uchar or float) or from the
// native binary cache. Colors come back normalized to [0,1] and the aabb is
// computed.
inline ScenePointCloud load_point_cloud(const std::string& path) {
    const auto bytes = detail::read_file_bytes(path);

    ScenePointCloud cloud;

    if (bytes.size() >= sizeof(kCloudCacheMagic) &&
        std::memcmp(bytes.data(), kCloudCacheMagic, sizeof(kCloudCacheMagic)) == 0) {
        size_t pos = sizeof(kCloudCacheMagic);
        if (bytes.size() < pos + sizeof(uint64_t))
            throw MalformedFileError("truncated cache header: " + path);
        uint64_t n = 0;
        std::memcpy(&n, bytes.data() + pos, sizeof(n));
        pos += sizeof(n);
        const size_t need = static_cast<size_t>(n) * 3 * sizeof(float) * 2;
        if (bytes.size() < pos + need)
            throw MalformedFileError("truncated cache payload: " + path);
        cloud.points.resize(n);
        cloud.colors.resize(n);
        std::memcpy(cloud.points.data(), bytes.data() + pos, n * 3 * sizeof(float));
        pos += static_cast<size_t>(n) * 3 * sizeof(float);
        std::memcpy(cloud.colors.data(), bytes.data() + pos, n * 3 * sizeof(float));
        cloud.recompute_aabb();
        cloud.validate();
        return cloud;
    }

    if (bytes.size() < 3 || std::memcmp(bytes.data(), "ply", 3) != 0)
        throw UnsupportedFormatError("unrecognized scene file: " + path);

    const auto header = detail::parse_ply_header(bytes, path);

    const detail::PlyElement* vertex = nullptr;
    for (const auto& el : header.elements)
        if (el.name == "vertex") { vertex = &el; break; }
    if (!vertex)
        throw MalformedFileError("PLY has no vertex element: " + path);

    int ix = -1, iy = -1, iz = -1, ir = -1, ig = -1, ib = -1;
    for (size_t i = 0; i < vertex->properties.size(); ++i) {
        const auto& prop = vertex->properties[i];
        if (prop.is_list)
            throw UnsupportedFormatError("list property on vertex element: " + path);
        const int idx = static_cast<int>(i);
        if (prop.name == "x") ix = idx;
        else if (prop.name == "y") iy = idx;
        else if (prop.name == "z") iz = idx;
        else if (prop.name == "red" || prop.name == "r") ir = idx;
        else if (prop.name == "green" || prop.name == "g") ig = idx;
        else if (prop.name == "blue" || prop.name == "b") ib = idx;
    }
    if (ix < 0 || iy < 0 || iz < 0)
        throw MalformedFileError("PLY vertex element lacks x/y/z: " + path);
    if (ir < 0 || ig < 0 || ib < 0)
        throw UnsupportedFormatError("PLY vertex element lacks red/green/blue: " + path);

    auto color_scale = [&](int prop_index) {
        return vertex->properties[prop_index].type == detail::PlyScalar::UChar
                   ? 1.0f / 255.0f
                   : 1.0f;
    };
    const float rs = color_scale(ir), gs = color_scale(ig), bs = color_scale(ib);

    cloud.points.reserve(vertex->count);
    cloud.colors.reserve(vertex->count);

    if (header.binary) {
        size_t pos = header.data_offset;
        // Skip any elements that precede vertex; only scalar-only elements can
        // be skipped in binary without interpreting the data.
        for (const auto& el : header.elements) {
            if (&el == vertex) break;
            size_t stride = 0;
            for (const auto& prop : el.properties) {
                if (prop.is_list)
                    throw UnsupportedFormatError(
                        "list-property element precedes vertex data: " + path);
                stride += detail::ply_scalar_size(prop.type);
            }
            pos += stride * el.count;
        }
        size_t stride = 0;
        std::vector<size_t> offsets(vertex->properties.size());
        for (size_t i = 0; i < vertex->properties.size(); ++i) {
            offsets[i] = stride;
            stride += detail::ply_scalar_size(vertex->properties[i].type);
        }
        if (bytes.size() < pos + stride * vertex->count)
            throw MalformedFileError("PLY vertex data truncated: " + path);
        for (size_t row = 0; row < vertex->count; ++row) {
            const uint8_t* base = bytes.data() + pos + row * stride;
            auto scalar = [&](int i) {
                return detail::ply_read_scalar(base + offsets[i],
                                               vertex->properties[i].type);
            };
            cloud.points.push_back({static_cast<float>(scalar(ix)),
                                    static_cast<float>(scalar(iy)),
                                    static_cast<float>(scalar(iz))});
            cloud.colors.push_back(
                {std::clamp(static_cast<float>(scalar(ir)) * rs, 0.0f, 1.0f),
                 std::clamp(static_cast<float>(scalar(ig)) * gs, 0.0f, 1.0f),
                 std::clamp(static_cast<float>(scalar(ib)) * bs, 0.0f, 1.0f)});
        }
    } else {
        // ascii: token stream starting at data_offset
        std::istringstream data(std::string(
            reinterpret_cast<const char*>(bytes.data() + header.data_offset),
            bytes.size() - header.data_offset));
        for (const auto& el : header.elements) {
            const bool is_vertex = &el == vertex;
            for (size_t row = 0; row < el.count; ++row) {
                std::vector<double> values(el.properties.size());
                for (size_t i = 0; i < el.properties.size(); ++i) {
                    if (!(data >> values[i]))
                        throw MalformedFileError(
                            "PLY data ends before declared element count: " + path);
                }
                if (is_vertex) {
                    cloud.points.push_back({static_cast<float>(values[ix]),
                                            static_cast<float>(values[iy]),
                                            static_cast<float>(values[iz])});
                    cloud.colors.push_back(
                        {std::clamp(static_cast<float>(values[ir]) * rs, 0.0f, 1.0f),
                         std::clamp(static_cast<float>(values[ig]) * gs, 0.0f, 1.0f),
                         std::clamp(static_cast<float>(values[ib]) * bs, 0.0f, 1.0f)});
                }
            }
            if (is_vertex) break;
        }
    }

    cloud.recompute_aabb();
    cloud.validate();
    return cloud;
}

// Writes an ascii or binary little-endian PLY with x/y/z float + rgb uchar.
inline void save_point_cloud_ply(const ScenePointCloud& cloud,
                                 const std::string& path, bool binary = true) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.precision(9);  // round-trips float32 through ascii
    out << "ply\n"
        << (binary ? "format binary_little_endian 1.0\n" : "format ascii 1.0\n")
        << "element vertex " << cloud.points.size() << "\n"
        << "property float x\nproperty float y\nproperty float z\n"
        << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        << "end_header\n";
    auto to_u8 = [](float c) {
        return static_cast<uint8_t>(std::lround(std::clamp(c, 0.0f, 1.0f) * 255.0f));
    };
    for (size_t i = 0; i < cloud.points.size(); ++i) {
        const auto& p = cloud.points[i];
        const uint8_t rgb[3] = {to_u8(cloud.colors[i][0]), to_u8(cloud.colors[i][1]),
                                to_u8(cloud.colors[i][2])};
        if (binary) {
            out.write(reinterpret_cast<const char*>(p.data()), 3 * sizeof(float));
            out.write(reinterpret_cast<const char*>(rgb), 3);
        } else {
            out << p[0] << " " << p[1] << " " << p[2] << " " << int(rgb[0]) << " "
                << int(rgb[1]) << " " << int(rgb[2]) << "\n";
        }
    }
    if (!out) throw IoError("write failure: " + path);
}

// ---- episodes ----

namespace detail {

inline const nlohmann::json& require_field(const nlohmann::json& j,
                                           const std::string& key,
                                           const std::string& context) {
    if (!j.contains(key))
        throw SchemaViolationError(context.empty() ? key : context + "." + key,
                                   "missing required field");
    return j.at(key);
}

}  // namespace detail

// Loads and validates an episode definition. Relative scene/image paths are
// resolved against the JSON file's directory. With strict=true every frame
// image must exist on disk.
inline Episode load_episode(const std::string& path, bool strict = true) {
    namespace fs = std::filesystem;
    const auto bytes = detail::read_file_bytes(path);

    nlohmann::json j;
    try {
        j = nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::parse_error& e) {
        throw MalformedFileError("episode JSON parse error in " + path + ": " +
                                 e.what());
    }

    Episode ep;
    ep.source_path = path;
    const fs::path base = fs::path(path).parent_path();
    auto resolve = [&](const std::string& rel) {
        fs::path p(rel);
        return p.is_absolute() ? p.string() : (base / p).lexically_normal().string();
    };

    try {
        ep.episode_id = detail::require_field(j, "episode_id", "").get<std::string>();
        ep.scene_path = resolve(detail::require_field(j, "scene", "").get<std::string>());
        ep.question = detail::require_field(j, "question", "").get<std::string>();
        ep.ground_truth = detail::require_field(j, "answer", "").get<std::string>();
        if (j.contains("extra_answers"))
            ep.extra_answers = j.at("extra_answers").get<std::vector<std::string>>();
        if (j.contains("category")) ep.category = j.at("category").get<std::string>();

        const auto& frames = detail::require_field(j, "frames", "");
        if (!frames.is_array() || frames.empty())
            throw SchemaViolationError("frames", "must be a non-empty array");
        for (size_t i = 0; i < frames.size(); ++i) {
            const std::string ctx = "frames[" + std::to_string(i) + "]";
            const auto& fj = frames.at(i);
            FrameRecord fr;
            fr.frame_id = detail::require_field(fj, "id", ctx).get<int>();
            if (fr.frame_id < 0)
                throw SchemaViolationError(ctx + ".id", "must be non-negative");
            fr.image_path =
                resolve(detail::require_field(fj, "image", ctx).get<std::string>());

            const auto& pose = detail::require_field(fj, "pose", ctx);
            if (!pose.is_array() || pose.size() != 16)
                throw SchemaViolationError(ctx + ".pose",
                                           "must be 16 floats (row-major 4x4)");
            std::array<double, 16> m{};
            for (size_t k = 0; k < 16; ++k) m[k] = pose.at(k).get<double>();
            fr.pose = CameraPose::from_matrix(m);
            // Accept small serialization roundoff, then snap to exact SO(3).
            if (!fr.pose.is_rigid(1e-6))
                throw SchemaViolationError(ctx + ".pose", "not a rigid transform");
            fr.pose.rotation = orthonormalized(fr.pose.rotation);

            const auto& kj = detail::require_field(fj, "intrinsics", ctx);
            fr.intrinsics.fx = detail::require_field(kj, "fx", ctx + ".intrinsics").get<double>();
            fr.intrinsics.fy = detail::require_field(kj, "fy", ctx + ".intrinsics").get<double>();
            fr.intrinsics.cx = detail::require_field(kj, "cx", ctx + ".intrinsics").get<double>();
            fr.intrinsics.cy = detail::require_field(kj, "cy", ctx + ".intrinsics").get<double>();
            fr.intrinsics.width = detail::require_field(kj, "width", ctx + ".intrinsics").get<int>();
            fr.intrinsics.height = detail::require_field(kj, "height", ctx + ".intrinsics").get<int>();
            try {
                fr.intrinsics.validate();
            } catch (const ValidationError& e) {
                throw SchemaViolationError(ctx + ".intrinsics", e.what());
            }
            ep.frames.push_back(std::move(fr));
        }
    } catch (const nlohmann::json::exception& e) {
        throw SchemaViolationError("(episode)", std::string("bad field type: ") + e.what());
    }

    if (ep.question.empty())
        throw SchemaViolationError("question", "must be non-empty");
    for (size_t i = 0; i < ep.frames.size(); ++i)
        for (size_t k = i + 1; k < ep.frames.size(); ++k)
            if (ep.frames[i].frame_id == ep.frames[k].frame_id)
                throw SchemaViolationError(
                    "frames[" + std::to_string(k) + "].id",
                    "duplicate frame id " + std::to_string(ep.frames[k].frame_id));

    if (strict) {
        for (const auto& fr : ep.frames)
            if (!fs::exists(fr.image_path))
                throw DanglingReferenceError("missing frame image: " + fr.image_path +
                                             " (episode " + ep.episode_id + ")");
    }
    return ep;
}

// Keeps frames at indices 0, ratio, 2*ratio, ...
template <typename T>
std::vector<T> subsample_frames(const std::vector<T>& frames, int ratio) {
    if (ratio < 1) throw ValidationError("subsample ratio must be >= 1");
    std::vector<T> out;
    for (size_t i = 0; i < frames.size(); i += static_cast<size_t>(ratio))
        out.push_back(frames[i]);
    return out;
}

}  // namespace cov
