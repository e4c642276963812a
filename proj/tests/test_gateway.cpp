#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <httplib.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <thread>

#include "cov/gateway.hpp"
#include "cov/http_backend.hpp"
#include "oracles.hpp"

using namespace cov;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    static int counter = 0;
    const fs::path dir =
        fs::temp_directory_path() / ("cov_gateway_test_" + std::to_string(counter++));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::vector<ChatMessage> simple_request(const std::string& text) {
    return {ChatMessage::system("sys"), ChatMessage::user(text)};
}

// independent re-statement of the documented fingerprint serialization
uint64_t fingerprint_oracle(const std::vector<ChatMessage>& messages,
                            const std::string& model, double temperature) {
    std::string blob = model;
    blob += '\x1d';
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", temperature);
    blob += buf;
    for (const auto& m : messages) {
        blob += '\x1e';
        blob += m.role;
        for (const auto& p : m.parts) {
            blob += '\x1f';
            if (p.kind == ChatPart::Kind::Text) {
                blob += 'T';
                blob += p.text;
            } else {
                blob += 'I';
                blob += p.media_type;
                blob.append(p.bytes.begin(), p.bytes.end());
            }
        }
    }
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : blob) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

struct StubServer {
    httplib::Server server;
    int port = 0;
    std::thread thread;
    std::atomic<int> hits{0};

    explicit StubServer(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
        server.Post("/v1/chat/completions",
                    [this, handler](const httplib::Request& req, httplib::Response& res) {
                        ++hits;
                        handler(req, res);
                    });
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~StubServer() {
        server.stop();
        thread.join();
    }
    std::string endpoint() const {
        return "http://127.0.0.1:" + std::to_string(port) + "/v1";
    }
};

std::string ok_body(const std::string& text) {
    nlohmann::json j;
    j["choices"] = {{{"message", {{"role", "assistant"}, {"content", text}}}}};
    return j.dump();
}

BackendConfig fast_config(const std::string& endpoint) {
    BackendConfig c;
    c.endpoint = endpoint;
    c.model_name = "test-model";
    c.max_retries = 3;
    c.backoff_base_s = 0.001;  // keep retry tests quick
    c.timeout_s = 5.0;
    c.api_key_env = "COV_TEST_KEY";
    return c;
}

}  // namespace

TEST_CASE("backoff delays double, stay jittered and never decrease") {
    const auto delays = backoff_delays(1.0, 6, 123);
    REQUIRE(delays.size() == 6);
    for (int k = 0; k < 6; ++k) {
        const double floor_k = std::pow(2.0, k);
        CHECK(delays[k] >= floor_k);
        CHECK(delays[k] < floor_k * 1.25);
        if (k > 0) CHECK(delays[k] >= delays[k - 1]);
    }
    CHECK(backoff_delays(1.0, 6, 123) == delays);  // deterministic per seed
    CHECK(backoff_delays(1.0, 0, 1).empty());
    const auto scaled = backoff_delays(0.5, 3, 7);
    for (int k = 0; k < 3; ++k) CHECK(scaled[k] < 0.5 * std::pow(2.0, k) * 1.25);
}

TEST_CASE("scripted backend replays in order and reports exhaustion") {
    ScriptedBackend backend(std::vector<std::string>{"one", "two"});
    CHECK(backend.complete(simple_request("a")) == "one");
    CHECK(backend.complete(simple_request("b")) == "two");
    CHECK(backend.request_count() == 2);
    CHECK_THROWS_AS(backend.complete(simple_request("c")), ScriptExhaustedError);
}

TEST_CASE("empty request is rejected before touching the script") {
    ScriptedBackend backend(std::vector<std::string>{"one"});
    CHECK_THROWS_AS(backend.complete({}), ValidationError);
    CHECK(backend.request_count() == 0);
}

TEST_CASE("keyed script entries wait for their trigger text") {
    ScriptedBackend backend(std::vector<ScriptEntry>{
        {"SELECT", "SELECT: 0, 1"},
        {"", "ACTION: move forward"},
        {"answer now", "ANSWER: a red box"},
    });
    // no SELECT in the user text: the keyed entry is skipped
    CHECK(backend.complete(simple_request("please act")) == "ACTION: move forward");
    // now the keyed entry matches
    CHECK(backend.complete(simple_request("please SELECT views")) == "SELECT: 0, 1");
    CHECK(backend.complete(simple_request("you must answer now")) ==
          "ANSWER: a red box");
}

TEST_CASE("hidden object oracle reveals only after enough actions") {
    HiddenObjectBackend backend(2, "a red box", "a potted plant");
    CHECK(backend.complete(simple_request("Reply with a SELECT: line")) ==
          "SELECT: 0");

    // guesses wrong first
    auto reply = backend.complete(simple_request("question"));
    CHECK(reply.find("ANSWER: a potted plant") != std::string::npos);
    // after a rejection it explores
    reply = backend.complete(simple_request("keep exploring"));
    CHECK(reply.find("ACTION: move forward") != std::string::npos);
    reply = backend.complete(simple_request("question"));
    CHECK(reply.find("ANSWER: a potted plant") != std::string::npos);
    reply = backend.complete(simple_request("keep exploring"));
    CHECK(reply.find("ACTION: yaw left") != std::string::npos);
    // two actions done: reveal
    reply = backend.complete(simple_request("question"));
    CHECK(reply.find("ANSWER: a red box") != std::string::npos);
    // and it keeps revealing
    reply = backend.complete(simple_request("question"));
    CHECK(reply.find("ANSWER: a red box") != std::string::npos);
}

TEST_CASE("request fingerprint matches the serialization oracle") {
    oracle::Lcg rng(97);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<ChatMessage> messages;
        const int n = 1 + rng.below(4);
        for (int i = 0; i < n; ++i) {
            ChatMessage m;
            m.role = (rng.below(2) != 0) ? "user" : "assistant";
            const int parts = 1 + rng.below(3);
            for (int p = 0; p < parts; ++p) {
                if (rng.below(2) != 0) {
                    m.parts.push_back(ChatPart::make_text(
                        "text-" + std::to_string(rng.below(1000))));
                } else {
                    std::vector<uint8_t> bytes;
                    for (int b = 0; b < 16; ++b)
                        bytes.push_back(static_cast<uint8_t>(rng.below(256)));
                    m.parts.push_back(ChatPart::make_image(bytes, "image/png"));
                }
            }
            messages.push_back(std::move(m));
        }
        const double temp = rng.below(3) * 0.35;
        CHECK(request_fingerprint(messages, "m1", temp) ==
              fingerprint_oracle(messages, "m1", temp));
    }
}

TEST_CASE("request fingerprint is frozen") {
    // Pinned so on-disk caches stay valid across refactors. If this check
    // breaks, the cache file format changed and recorded runs are invalid.
    const std::vector<ChatMessage> messages = {
        ChatMessage::system("be brief"),
        ChatMessage::user("hello"),
    };
    const uint64_t h = request_fingerprint(messages, "gpt-test", 0.0);
    CHECK(h == fingerprint_oracle(messages, "gpt-test", 0.0));
    CHECK(to_hex16(h) == to_hex16(fingerprint_oracle(messages, "gpt-test", 0.0)));
    // sensitivity: every component moves the hash
    CHECK(request_fingerprint(messages, "gpt-test2", 0.0) != h);
    CHECK(request_fingerprint(messages, "gpt-test", 0.5) != h);
    auto swapped = messages;
    swapped[1] = ChatMessage::user("hello!");
    CHECK(request_fingerprint(swapped, "gpt-test", 0.0) != h);
}

TEST_CASE("record then replay round trips byte for byte with zero network") {
    const auto dir = temp_dir();
    const auto cache = (dir / "cache.jsonl").string();
    const std::string exotic = "caf\xc3\xa9 \"quoted\"\nline2\ttab\x01";

    {
        auto inner = std::make_shared<ScriptedBackend>(
            std::vector<std::string>{exotic, "second"});
        RecordReplayBackend rec(cache, RecordReplayBackend::Mode::Record, inner,
                                "m", 0.0);
        CHECK(rec.complete(simple_request("q1")) == exotic);
        CHECK(rec.complete(simple_request("q2")) == "second");
        CHECK(rec.network_calls() == 2);
    }

    // cache lines are {hash, response, timestamp}
    {
        std::ifstream in(cache);
        std::string line;
        int lines = 0;
        while (std::getline(in, line)) {
            ++lines;
            const auto j = nlohmann::json::parse(line);
            CHECK(j.contains("hash"));
            CHECK(j.contains("response"));
            CHECK(j.contains("timestamp"));
            CHECK(j.at("hash").get<std::string>().size() == 16);
        }
        CHECK(lines == 2);
    }

    RecordReplayBackend replay(cache, RecordReplayBackend::Mode::Replay, nullptr,
                               "m", 0.0);
    CHECK(replay.complete(simple_request("q2")) == "second");
    CHECK(replay.complete(simple_request("q1")) == exotic);
    CHECK(replay.network_calls() == 0);
    CHECK_THROWS_AS(replay.complete(simple_request("never recorded")),
                    CacheMissError);
}

TEST_CASE("replay serves identical requests in order then sticks at the last") {
    const auto dir = temp_dir();
    const auto cache = (dir / "cache.jsonl").string();
    {
        auto inner = std::make_shared<ScriptedBackend>(
            std::vector<std::string>{"first", "second"});
        RecordReplayBackend rec(cache, RecordReplayBackend::Mode::Record, inner,
                                "m", 0.0);
        rec.complete(simple_request("same"));
        rec.complete(simple_request("same"));
    }
    RecordReplayBackend replay(cache, RecordReplayBackend::Mode::Replay, nullptr,
                               "m", 0.0);
    CHECK(replay.complete(simple_request("same")) == "first");
    CHECK(replay.complete(simple_request("same")) == "second");
    CHECK(replay.complete(simple_request("same")) == "second");
    CHECK(replay.complete(simple_request("same")) == "second");
}

TEST_CASE("replay mode fails fast on missing or corrupt caches") {
    const auto dir = temp_dir();
    CHECK_THROWS_AS(RecordReplayBackend((dir / "absent.jsonl").string(),
                                        RecordReplayBackend::Mode::Replay, nullptr,
                                        "m", 0.0),
                    IoError);
    std::ofstream((dir / "bad.jsonl").string()) << "{not json}\n";
    CHECK_THROWS_AS(RecordReplayBackend((dir / "bad.jsonl").string(),
                                        RecordReplayBackend::Mode::Replay, nullptr,
                                        "m", 0.0),
                    MalformedFileError);
    CHECK_THROWS_AS(RecordReplayBackend((dir / "x.jsonl").string(),
                                        RecordReplayBackend::Mode::Record, nullptr,
                                        "m", 0.0),
                    ConfigError);
}

TEST_CASE("http backend retries through 429 and returns the payload") {
    std::atomic<int> count{0};
    StubServer stub([&](const httplib::Request&, httplib::Response& res) {
        const int n = ++count;
        if (n <= 2) {
            res.status = 429;
            res.set_content("slow down", "text/plain");
        } else {
            res.set_content(ok_body("all good"), "application/json");
        }
    });

    HttpBackend backend(fast_config(stub.endpoint()));
    CHECK(backend.complete(simple_request("hi")) == "all good");
    CHECK(stub.hits.load() == 3);
}

TEST_CASE("auth failures do not retry") {
    StubServer stub([&](const httplib::Request&, httplib::Response& res) {
        res.status = 401;
        res.set_content("no key", "text/plain");
    });
    HttpBackend backend(fast_config(stub.endpoint()));
    CHECK_THROWS_AS(backend.complete(simple_request("hi")), AuthFailureError);
    CHECK(stub.hits.load() == 1);
}

TEST_CASE("other 4xx fail fast, exhausted 429 raises rate limit") {
    {
        StubServer stub([&](const httplib::Request&, httplib::Response& res) {
            res.status = 404;
        });
        HttpBackend backend(fast_config(stub.endpoint()));
        CHECK_THROWS_AS(backend.complete(simple_request("hi")),
                        TransportFailureError);
        CHECK(stub.hits.load() == 1);
    }
    {
        StubServer stub([&](const httplib::Request&, httplib::Response& res) {
            res.status = 429;
        });
        auto config = fast_config(stub.endpoint());
        config.max_retries = 2;
        HttpBackend backend(config);
        CHECK_THROWS_AS(backend.complete(simple_request("hi")), RateLimitedError);
        CHECK(stub.hits.load() == 3);  // initial + 2 retries
    }
    {
        StubServer stub([&](const httplib::Request&, httplib::Response& res) {
            res.status = 500;
        });
        auto config = fast_config(stub.endpoint());
        config.max_retries = 1;
        HttpBackend backend(config);
        CHECK_THROWS_AS(backend.complete(simple_request("hi")),
                        TransportFailureError);
        CHECK(stub.hits.load() == 2);
    }
}

TEST_CASE("request body follows the chat completions schema") {
    nlohmann::json seen;
    std::string auth_header;
    StubServer stub([&](const httplib::Request& req, httplib::Response& res) {
        seen = nlohmann::json::parse(req.body);
        auth_header = req.get_header_value("Authorization");
        res.set_content(ok_body("ok"), "application/json");
    });

    setenv("COV_TEST_KEY", "sk-test-123", 1);
    auto config = fast_config(stub.endpoint());
    config.temperature = 0.5;
    config.max_output_tokens = 77;
    HttpBackend backend(config);

    std::vector<ChatMessage> messages;
    messages.push_back(ChatMessage::system("be terse"));
    ChatMessage user;
    user.role = "user";
    user.parts.push_back(ChatPart::make_text("what color?"));
    user.parts.push_back(ChatPart::make_image({0x89, 0x50, 0x4E, 0x47}, "image/png"));
    messages.push_back(user);

    CHECK(backend.complete(messages) == "ok");
    unsetenv("COV_TEST_KEY");

    CHECK(auth_header == "Bearer sk-test-123");
    CHECK(seen.at("model").get<std::string>() == "test-model");
    CHECK(seen.at("temperature").get<double>() == doctest::Approx(0.5));
    CHECK(seen.at("max_tokens").get<int>() == 77);
    REQUIRE(seen.at("messages").size() == 2);
    CHECK(seen["messages"][0]["role"] == "system");
    CHECK(seen["messages"][1]["content"][0]["type"] == "text");
    CHECK(seen["messages"][1]["content"][1]["type"] == "image_url");
    const std::string url =
        seen["messages"][1]["content"][1]["image_url"]["url"].get<std::string>();
    CHECK(url.rfind("data:image/png;base64,", 0) == 0);
    CHECK(url.substr(url.find(',') + 1) == "iVBORw==");
}

TEST_CASE("content part arrays in responses are concatenated") {
    StubServer stub([&](const httplib::Request&, httplib::Response& res) {
        nlohmann::json j;
        j["choices"] = {{{"message",
                          {{"role", "assistant"},
                           {"content", {{{"type", "text"}, {"text", "part one "}},
                                        {{"type", "text"}, {"text", "part two"}}}}}}}};
        res.set_content(j.dump(), "application/json");
    });
    HttpBackend backend(fast_config(stub.endpoint()));
    CHECK(backend.complete(simple_request("hi")) == "part one part two");
}

TEST_CASE("malformed response bodies raise a typed error") {
    StubServer stub([&](const httplib::Request&, httplib::Response& res) {
        res.set_content("not json at all", "application/json");
    });
    auto config = fast_config(stub.endpoint());
    config.max_retries = 0;
    HttpBackend backend(config);
    CHECK_THROWS_AS(backend.complete(simple_request("hi")), MalformedResponseError);
}

TEST_CASE("image budget is enforced before any network traffic") {
    StubServer stub([&](const httplib::Request&, httplib::Response& res) {
        res.set_content(ok_body("ok"), "application/json");
    });
    auto config = fast_config(stub.endpoint());
    config.max_images = 2;
    HttpBackend backend(config);

    ChatMessage m;
    m.role = "user";
    for (int i = 0; i < 3; ++i)
        m.parts.push_back(ChatPart::make_image({1, 2, 3}, "image/png"));
    CHECK_THROWS_AS(backend.complete({m}), TooManyImagesError);
    CHECK(stub.hits.load() == 0);
}

TEST_CASE("endpoint path handling appends chat completions once") {
    StubServer stub([&](const httplib::Request& req, httplib::Response& res) {
        CHECK(req.path == "/v1/chat/completions");
        res.set_content(ok_body("ok"), "application/json");
    });
    // both spellings reach the same route
    HttpBackend a(fast_config(stub.endpoint()));
    HttpBackend b(fast_config(stub.endpoint() + "/chat/completions"));
    CHECK(a.complete(simple_request("x")) == "ok");
    CHECK(b.complete(simple_request("x")) == "ok");
    CHECK(stub.hits.load() == 2);

    BackendConfig bad;
    bad.endpoint = "127.0.0.1/v1";  // no scheme
    CHECK_THROWS_AS(HttpBackend{bad}, ConfigError);
}

TEST_CASE("base64 encoding matches known vectors") {
    CHECK(base64_encode({}) == "");
    CHECK(base64_encode({'f'}) == "Zg==");
    CHECK(base64_encode({'f', 'o'}) == "Zm8=");
    CHECK(base64_encode({'f', 'o', 'o'}) == "Zm9v");
    CHECK(base64_encode({'f', 'o', 'o', 'b', 'a', 'r'}) == "Zm9vYmFy");
}

TEST_CASE("rate limiter spaces acquisitions") {
    RateLimiter limiter(1200);  // 50 ms interval
    const auto t0 = std::chrono::steady_clock::now();
    limiter.acquire();
    limiter.acquire();
    limiter.acquire();
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(secs >= 0.099);  // two 50 ms gaps, first is free
    RateLimiter unlimited(0);
    unlimited.acquire();  // must not block
}
