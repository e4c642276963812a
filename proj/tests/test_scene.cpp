#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "cov/fixtures.hpp"
#include "cov/scene.hpp"
#include "oracles.hpp"

using namespace cov;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    static int counter = 0;
    const fs::path dir =
        fs::temp_directory_path() / ("cov_scene_test_" + std::to_string(counter++));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_file(const fs::path& p, const std::string& body) {
    std::ofstream f(p, std::ios::binary);
    f << body;
}

ScenePointCloud random_cloud(size_t n, uint64_t seed) {
    oracle::Lcg rng(seed);
    ScenePointCloud cloud;
    for (size_t i = 0; i < n; ++i) {
        cloud.points.push_back({static_cast<float>(rng.unit() * 10 - 5),
                                static_cast<float>(rng.unit() * 10 - 5),
                                static_cast<float>(rng.unit() * 10 - 5)});
        cloud.colors.push_back({static_cast<float>(rng.below(256)) / 255.0f,
                                static_cast<float>(rng.below(256)) / 255.0f,
                                static_cast<float>(rng.below(256)) / 255.0f});
    }
    cloud.recompute_aabb();
    return cloud;
}

}  // namespace

TEST_CASE("empty ply loads as an empty cloud with a degenerate aabb") {
    const auto dir = temp_dir();
    write_file(dir / "empty.ply",
               "ply\nformat ascii 1.0\nelement vertex 0\n"
               "property float x\nproperty float y\nproperty float z\n"
               "property uchar red\nproperty uchar green\nproperty uchar blue\n"
               "end_header\n");
    const auto cloud = load_point_cloud((dir / "empty.ply").string());
    CHECK(cloud.size() == 0);
    CHECK(cloud.aabb.min_corner.x == 0.0);
    CHECK(cloud.aabb.max_corner.x == 0.0);
}

TEST_CASE("single ascii vertex parses position and uchar color scaling") {
    const auto dir = temp_dir();
    write_file(dir / "one.ply",
               "ply\nformat ascii 1.0\nelement vertex 1\n"
               "property float x\nproperty float y\nproperty float z\n"
               "property uchar red\nproperty uchar green\nproperty uchar blue\n"
               "end_header\n1 2 3 255 0 128\n");
    const auto cloud = load_point_cloud((dir / "one.ply").string());
    REQUIRE(cloud.size() == 1);
    CHECK(cloud.points[0][0] == 1.0f);
    CHECK(cloud.points[0][1] == 2.0f);
    CHECK(cloud.points[0][2] == 3.0f);
    CHECK(cloud.colors[0][0] == 1.0f);
    CHECK(cloud.colors[0][1] == 0.0f);
    CHECK(cloud.colors[0][2] == doctest::Approx(128.0 / 255.0));
    CHECK(cloud.aabb.min_corner.x == doctest::Approx(1.0));
    CHECK(cloud.aabb.max_corner.z == doctest::Approx(3.0));
}

TEST_CASE("float colors pass through without rescaling") {
    const auto dir = temp_dir();
    write_file(dir / "f.ply",
               "ply\nformat ascii 1.0\nelement vertex 1\n"
               "property float x\nproperty float y\nproperty float z\n"
               "property float red\nproperty float green\nproperty float blue\n"
               "end_header\n0 0 0 0.25 0.5 1.0\n");
    const auto cloud = load_point_cloud((dir / "f.ply").string());
    REQUIRE(cloud.size() == 1);
    CHECK(cloud.colors[0][0] == doctest::Approx(0.25));
    CHECK(cloud.colors[0][1] == doctest::Approx(0.5));
    CHECK(cloud.colors[0][2] == doctest::Approx(1.0));
}

TEST_CASE("binary ply round trip is float exact") {
    const auto dir = temp_dir();
    const auto cloud = random_cloud(10000, 41);
    save_point_cloud_ply(cloud, (dir / "c.ply").string(), /*binary=*/true);
    const auto back = load_point_cloud((dir / "c.ply").string());
    REQUIRE(back.size() == cloud.size());
    CHECK(std::memcmp(back.points.data(), cloud.points.data(),
                      cloud.size() * 3 * sizeof(float)) == 0);
    // colors go through uchar quantization on save
    for (size_t i = 0; i < cloud.size(); i += 997)
        for (int c = 0; c < 3; ++c)
            CHECK(back.colors[i][c] ==
                  doctest::Approx(cloud.colors[i][c]).epsilon(1.0 / 255.0));
}

TEST_CASE("ascii ply round trip is float exact") {
    const auto dir = temp_dir();
    const auto cloud = random_cloud(500, 43);
    save_point_cloud_ply(cloud, (dir / "c.ply").string(), /*binary=*/false);
    const auto back = load_point_cloud((dir / "c.ply").string());
    REQUIRE(back.size() == cloud.size());
    CHECK(std::memcmp(back.points.data(), cloud.points.data(),
                      cloud.size() * 3 * sizeof(float)) == 0);
}

TEST_CASE("native cache round trip is bit exact and starts with the magic") {
    const auto dir = temp_dir();
    const auto cloud = random_cloud(10000, 47);
    const auto path = (dir / "c.covpc").string();
    save_point_cloud_cache(cloud, path);

    const auto bytes = detail::read_file_bytes(path);
    REQUIRE(bytes.size() > 8);
    CHECK(std::memcmp(bytes.data(), "COVPC001", 8) == 0);

    const auto back = load_point_cloud(path);
    REQUIRE(back.size() == cloud.size());
    CHECK(std::memcmp(back.points.data(), cloud.points.data(),
                      cloud.size() * 3 * sizeof(float)) == 0);
    CHECK(std::memcmp(back.colors.data(), cloud.colors.data(),
                      cloud.size() * 3 * sizeof(float)) == 0);
}

TEST_CASE("scene file error taxonomy") {
    const auto dir = temp_dir();

    SUBCASE("not a ply at all") {
        write_file(dir / "x.bin", "hello world");
        CHECK_THROWS_AS(load_point_cloud((dir / "x.bin").string()),
                        UnsupportedFormatError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_point_cloud((dir / "nope.ply").string()), IoError);
    }
    SUBCASE("missing z coordinate") {
        write_file(dir / "noz.ply",
                   "ply\nformat ascii 1.0\nelement vertex 1\n"
                   "property float x\nproperty float y\n"
                   "property uchar red\nproperty uchar green\nproperty uchar blue\n"
                   "end_header\n0 0 0 0 0\n");
        CHECK_THROWS_AS(load_point_cloud((dir / "noz.ply").string()),
                        MalformedFileError);
    }
    SUBCASE("missing colors") {
        write_file(dir / "norgb.ply",
                   "ply\nformat ascii 1.0\nelement vertex 1\n"
                   "property float x\nproperty float y\nproperty float z\n"
                   "end_header\n0 0 0\n");
        CHECK_THROWS_AS(load_point_cloud((dir / "norgb.ply").string()),
                        UnsupportedFormatError);
    }
    SUBCASE("big endian") {
        write_file(dir / "be.ply",
                   "ply\nformat binary_big_endian 1.0\nelement vertex 0\n"
                   "property float x\nproperty float y\nproperty float z\n"
                   "property uchar red\nproperty uchar green\nproperty uchar blue\n"
                   "end_header\n");
        CHECK_THROWS_AS(load_point_cloud((dir / "be.ply").string()),
                        UnsupportedFormatError);
    }
    SUBCASE("list property on vertex") {
        write_file(dir / "list.ply",
                   "ply\nformat ascii 1.0\nelement vertex 1\n"
                   "property float x\nproperty float y\nproperty float z\n"
                   "property list uchar int vertex_indices\n"
                   "property uchar red\nproperty uchar green\nproperty uchar blue\n"
                   "end_header\n0 0 0 0 255 255 255\n");
        CHECK_THROWS_AS(load_point_cloud((dir / "list.ply").string()),
                        UnsupportedFormatError);
    }
    SUBCASE("ascii data ends early") {
        write_file(dir / "short.ply",
                   "ply\nformat ascii 1.0\nelement vertex 2\n"
                   "property float x\nproperty float y\nproperty float z\n"
                   "property uchar red\nproperty uchar green\nproperty uchar blue\n"
                   "end_header\n0 0 0 255 255 255\n");
        CHECK_THROWS_AS(load_point_cloud((dir / "short.ply").string()),
                        MalformedFileError);
    }
    SUBCASE("binary data truncated") {
        std::string body =
            "ply\nformat binary_little_endian 1.0\nelement vertex 2\n"
            "property float x\nproperty float y\nproperty float z\n"
            "property uchar red\nproperty uchar green\nproperty uchar blue\n"
            "end_header\n";
        body += std::string(15, '\0');  // one row needs 15 bytes; two declared
        write_file(dir / "trunc.ply", body);
        CHECK_THROWS_AS(load_point_cloud((dir / "trunc.ply").string()),
                        MalformedFileError);
    }
    SUBCASE("truncated cache") {
        write_file(dir / "bad.covpc", std::string("COVPC001") + "\x05");
        CHECK_THROWS_AS(load_point_cloud((dir / "bad.covpc").string()),
                        MalformedFileError);
    }
}

TEST_CASE("binary ply skips a scalar element that precedes vertex data") {
    const auto dir = temp_dir();
    std::string body =
        "ply\nformat binary_little_endian 1.0\n"
        "element camera 1\nproperty float cx\nproperty float cy\n"
        "element vertex 1\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "end_header\n";
    const float cam[2] = {7.0f, 8.0f};
    const float xyz[3] = {4.0f, 5.0f, 6.0f};
    const uint8_t rgb[3] = {0, 255, 0};
    body.append(reinterpret_cast<const char*>(cam), sizeof(cam));
    body.append(reinterpret_cast<const char*>(xyz), sizeof(xyz));
    body.append(reinterpret_cast<const char*>(rgb), sizeof(rgb));
    write_file(dir / "pre.ply", body);

    const auto cloud = load_point_cloud((dir / "pre.ply").string());
    REQUIRE(cloud.size() == 1);
    CHECK(cloud.points[0][0] == 4.0f);
    CHECK(cloud.colors[0][1] == 1.0f);
}

TEST_CASE("fixture scenes are non-empty and bounded") {
    const auto room = fixtures::cube_room();
    CHECK(room.size() > 5000);
    CHECK(room.aabb.min_corner.z == doctest::Approx(0.0));
    CHECK(room.aabb.max_corner.z == doctest::Approx(2.4));
    room.validate();

    const auto hall = fixtures::corridor();
    CHECK(hall.size() > 5000);
    hall.validate();

    const auto occ = fixtures::occluded_room();
    CHECK(occ.size() > 5000);
    occ.validate();
}

TEST_CASE("episode json round trip with schema errors") {
    const auto dir = temp_dir();
    // a frame image must exist for strict loading
    write_file(dir / "img0.png", "");

    nlohmann::json ep;
    ep["episode_id"] = "ep1";
    ep["scene"] = "scene.ply";
    ep["question"] = "what is here?";
    ep["answer"] = "a box";
    ep["extra_answers"] = {"box"};
    ep["category"] = "object";
    nlohmann::json frame;
    frame["id"] = 0;
    frame["image"] = "img0.png";
    frame["pose"] = CameraPose::identity().to_matrix();
    frame["intrinsics"] = {{"fx", 256.0}, {"fy", 256.0}, {"cx", 160.0},
                           {"cy", 120.0}, {"width", 320}, {"height", 240}};
    ep["frames"] = {frame};

    write_file(dir / "ep.json", ep.dump());
    const Episode loaded = load_episode((dir / "ep.json").string());
    CHECK(loaded.episode_id == "ep1");
    CHECK(loaded.question == "what is here?");
    CHECK(loaded.ground_truth == "a box");
    CHECK(loaded.extra_answers == std::vector<std::string>{"box"});
    CHECK(loaded.category == "object");
    REQUIRE(loaded.frames.size() == 1);
    CHECK(loaded.frames[0].frame_id == 0);
    // resolved against the episode directory
    CHECK(fs::path(loaded.frames[0].image_path).is_absolute() ==
          fs::path(dir).is_absolute());
    CHECK(loaded.frames[0].image_path.find("img0.png") != std::string::npos);
    CHECK(loaded.scene_path.find("scene.ply") != std::string::npos);

    SUBCASE("missing question") {
        auto bad = ep;
        bad.erase("question");
        write_file(dir / "bad.json", bad.dump());
        try {
            load_episode((dir / "bad.json").string());
            FAIL("expected SchemaViolationError");
        } catch (const SchemaViolationError& e) {
            CHECK(std::string(e.what()).find("question") != std::string::npos);
        }
    }
    SUBCASE("missing pose") {
        auto bad = ep;
        bad["frames"][0].erase("pose");
        write_file(dir / "bad.json", bad.dump());
        try {
            load_episode((dir / "bad.json").string());
            FAIL("expected SchemaViolationError");
        } catch (const SchemaViolationError& e) {
            CHECK(std::string(e.what()).find("frames[0]") != std::string::npos);
        }
    }
    SUBCASE("pose with 15 entries") {
        auto bad = ep;
        bad["frames"][0]["pose"] = std::vector<double>(15, 0.0);
        write_file(dir / "bad.json", bad.dump());
        CHECK_THROWS_AS(load_episode((dir / "bad.json").string()),
                        SchemaViolationError);
    }
    SUBCASE("non rigid pose") {
        auto bad = ep;
        auto m = CameraPose::identity().to_matrix();
        m[0] = 3.0;
        bad["frames"][0]["pose"] = m;
        write_file(dir / "bad.json", bad.dump());
        CHECK_THROWS_AS(load_episode((dir / "bad.json").string()),
                        SchemaViolationError);
    }
    SUBCASE("duplicate frame ids") {
        auto bad = ep;
        bad["frames"] = {frame, frame};
        write_file(dir / "bad.json", bad.dump());
        CHECK_THROWS_AS(load_episode((dir / "bad.json").string()),
                        SchemaViolationError);
    }
    SUBCASE("dangling image reference") {
        auto bad = ep;
        bad["frames"][0]["image"] = "missing.png";
        write_file(dir / "bad.json", bad.dump());
        CHECK_THROWS_AS(load_episode((dir / "bad.json").string()),
                        DanglingReferenceError);
        CHECK_NOTHROW(load_episode((dir / "bad.json").string(), /*strict=*/false));
    }
    SUBCASE("json that is not json") {
        write_file(dir / "bad.json", "{nope");
        CHECK_THROWS_AS(load_episode((dir / "bad.json").string()),
                        MalformedFileError);
    }
}

TEST_CASE("subsample keeps every ratio-th frame starting at zero") {
    std::vector<int> v(120);
    for (int i = 0; i < 120; ++i) v[i] = i;

    const auto s10 = subsample_frames(v, 10);
    REQUIRE(s10.size() == 12);
    CHECK(s10.front() == 0);
    CHECK(s10[1] == 10);
    CHECK(s10.back() == 110);

    CHECK(subsample_frames(v, 1) == v);

    std::vector<int> five{0, 1, 2, 3, 4};
    const auto s = subsample_frames(five, 10);
    REQUIRE(s.size() == 1);
    CHECK(s[0] == 0);

    CHECK_THROWS_AS(subsample_frames(v, 0), ValidationError);
    CHECK_THROWS_AS(subsample_frames(v, -3), ValidationError);
}

TEST_CASE("subsampling composes like a single larger stride") {
    std::vector<int> v(240);
    for (int i = 0; i < 240; ++i) v[i] = i;
    oracle::Lcg rng(53);
    for (int trial = 0; trial < 20; ++trial) {
        const int a = 1 + rng.below(6);
        const int b = 1 + rng.below(6);
        CHECK(subsample_frames(subsample_frames(v, a), b) ==
              subsample_frames(v, a * b));
    }
}

TEST_CASE("cloud validate catches mismatched arrays and non-finite points") {
    ScenePointCloud cloud;
    cloud.points.push_back({0, 0, 0});
    CHECK_THROWS_AS(cloud.validate(), ValidationError);
    cloud.colors.push_back({2.0f, 0, 0});
    CHECK_THROWS_AS(cloud.validate(), ValidationError);  // color out of range
    cloud.colors[0] = {0.5f, 0.5f, 0.5f};
    CHECK_NOTHROW(cloud.validate());
    cloud.points[0][0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(cloud.validate(), MalformedFileError);
}
