#pragma once

// Backends: OpenAI-compatible HTTP client with retry/backoff, a scripted
// mock, the hidden-object oracle mock, and a record/replay cache wrapper.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <deque>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "cov/chat.hpp"
#include "cov/errors.hpp"

namespace cov {

struct BackendConfig {
    std::string endpoint;  // e.g. http://host:port/v1
    std::string model_name = "unknown";
    double temperature = 0.0;
    int max_output_tokens = 1024;
    double timeout_s = 60.0;
    int max_retries = 3;
    std::string api_key_env = "COV_API_KEY";
    double backoff_base_s = 1.0;
    int max_images = 32;       // per-request image budget
    int rate_limit_rpm = 0;    // 0 disables the limiter
    bool single_shot = false;  // collapse context into one user turn

    void validate() const {
        if (temperature < 0) throw ConfigError("temperature must be >= 0");
        if (!(timeout_s > 0)) throw ConfigError("timeout_s must be > 0");
        if (max_retries < 0) throw ConfigError("max_retries must be >= 0");
        if (max_images < 1) throw ConfigError("max_images must be >= 1");
        if (backoff_base_s < 0) throw ConfigError("backoff_base_s must be >= 0");
    }
};

// Planned retry delays. Jitter scales each slot by [1, 1.25), which keeps the
// sequence non-decreasing: 1.25 * 2^k < 2^(k+1).
inline std::vector<double> backoff_delays(double base_s, int retries, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> jitter(0.0, 0.25);
    std::vector<double> delays;
    delays.reserve(static_cast<size_t>(retries > 0 ? retries : 0));
    for (int k = 0; k < retries; ++k)
        delays.push_back(base_s * std::pow(2.0, k) * (1.0 + jitter(rng)));
    return delays;
}

class RateLimiter {
public:
    explicit RateLimiter(int rpm) : interval_s_(rpm > 0 ? 60.0 / rpm : 0.0) {}

    void acquire() {
        if (interval_s_ <= 0) return;
        std::unique_lock<std::mutex> lock(mu_);
        const auto now = std::chrono::steady_clock::now();
        const auto gap = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
            std::chrono::duration<double>(interval_s_));
        const auto earliest = last_ + gap;
        if (now < earliest) {
            std::this_thread::sleep_for(earliest - now);
            last_ = earliest;
        } else {
            last_ = now;
        }
    }

private:
    double interval_s_;
    std::mutex mu_;
    std::chrono::steady_clock::time_point last_{};
};

class Backend {
public:
    virtual ~Backend() = default;

    std::string complete(const std::vector<ChatMessage>& messages) {
        if (messages.empty()) throw ValidationError("complete: empty message list");
        requests_.fetch_add(1, std::memory_order_relaxed);
        return complete_impl(messages);
    }

    size_t request_count() const { return requests_.load(std::memory_order_relaxed); }

protected:
    virtual std::string complete_impl(const std::vector<ChatMessage>& messages) = 0;

private:
    std::atomic<size_t> requests_{0};
};

struct ScriptEntry {
    std::string key;  // empty: unconditional; else substring of latest user text
    std::string reply;
};

// Replays canned assistant replies in order. A keyed entry is skipped until a
// request's latest user text contains the key.
class ScriptedBackend : public Backend {
public:
    explicit ScriptedBackend(std::vector<ScriptEntry> script)
        : script_(std::move(script)) {}

    explicit ScriptedBackend(const std::vector<std::string>& replies) {
        for (const auto& r : replies) script_.push_back({"", r});
    }

protected:
    std::string complete_impl(const std::vector<ChatMessage>& messages) override {
        std::lock_guard<std::mutex> lock(mu_);
        const std::string user_text = latest_user_text(messages);
        for (size_t i = 0; i < script_.size(); ++i) {
            if (used_.size() <= i) used_.resize(i + 1, false);
            if (used_[i]) continue;
            if (!script_[i].key.empty() &&
                user_text.find(script_[i].key) == std::string::npos)
                continue;
            used_[i] = true;
            return script_[i].reply;
        }
        throw ScriptExhaustedError("scripted backend has no reply for request " +
                                   std::to_string(request_count()));
    }

private:
    std::vector<ScriptEntry> script_;
    std::vector<bool> used_;
    std::mutex mu_;
};

// Oracle mock for step-budget sweeps: it keeps trying to answer wrongly, and
// only reveals the correct answer after it has been pushed through
// reveal_after_actions motions. Selection prompts always get "SELECT: 0".
class HiddenObjectBackend : public Backend {
public:
    HiddenObjectBackend(int reveal_after_actions, std::string correct_answer,
                        std::string wrong_answer = "a potted plant")
        : reveal_after_(reveal_after_actions),
          correct_(std::move(correct_answer)),
          wrong_(std::move(wrong_answer)) {}

protected:
    std::string complete_impl(const std::vector<ChatMessage>& messages) override {
        std::lock_guard<std::mutex> lock(mu_);
        const std::string user_text = latest_user_text(messages);
        if (user_text.find("SELECT:") != std::string::npos) return "SELECT: 0";
        std::string folded = user_text;
        std::transform(folded.begin(), folded.end(), folded.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        if (folded.find("keep exploring") != std::string::npos) {
            // the last answer was rejected by budget forcing; explore instead
            static const char* patrol[] = {"move forward", "yaw left",
                                           "move backward", "yaw right"};
            const char* verb = patrol[actions_emitted_ % 4];
            ++actions_emitted_;
            return std::string("THINK: keep exploring.\nACTION: ") + verb;
        }
        if (actions_emitted_ >= reveal_after_)
            return "THINK: I can finally see it.\nANSWER: " + correct_;
        return "THINK: not sure yet, guessing.\nANSWER: " + wrong_;
    }

private:
    int reveal_after_;
    std::string correct_;
    std::string wrong_;
    int actions_emitted_ = 0;
    std::mutex mu_;
};

inline std::string iso8601_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Cache wrapper. Record mode forwards to the inner backend and appends
// {hash, response, timestamp} JSON lines; replay mode serves responses from
// the file with no network. Repeated identical requests replay in recorded
// order, then stick at the last recorded response.
class RecordReplayBackend : public Backend {
public:
    enum class Mode { Record, Replay };

    RecordReplayBackend(std::string cache_path, Mode mode,
                        std::shared_ptr<Backend> inner, std::string model_name,
                        double temperature)
        : path_(std::move(cache_path)),
          mode_(mode),
          inner_(std::move(inner)),
          model_(std::move(model_name)),
          temperature_(temperature) {
        if (mode_ == Mode::Record && !inner_)
            throw ConfigError("record mode needs an inner backend");
        if (mode_ == Mode::Replay) load_cache();
    }

    size_t network_calls() const { return inner_ ? inner_->request_count() : 0; }

protected:
    std::string complete_impl(const std::vector<ChatMessage>& messages) override {
        const std::string key =
            to_hex16(request_fingerprint(messages, model_, temperature_));
        std::lock_guard<std::mutex> lock(mu_);
        if (mode_ == Mode::Replay) {
            auto it = cache_.find(key);
            if (it == cache_.end() || it->second.empty())
                throw CacheMissError("no recorded response for request " + key +
                                     " in " + path_);
            auto& queue = it->second;
            std::string response = queue.front();
            if (queue.size() > 1) queue.pop_front();
            return response;
        }
        const std::string response = inner_->complete(messages);
        nlohmann::json line;
        line["hash"] = key;
        line["response"] = response;
        line["timestamp"] = iso8601_now();
        std::ofstream out(path_, std::ios::app);
        if (!out) throw IoError("cannot append to cache: " + path_);
        out << line.dump() << "\n";
        out.flush();
        if (!out) throw IoError("write failure: " + path_);
        return response;
    }

private:
    void load_cache() {
        std::ifstream in(path_);
        if (!in) throw IoError("cannot open replay cache: " + path_);
        std::string line;
        size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
                cache_[j.at("hash").get<std::string>()].push_back(
                    j.at("response").get<std::string>());
            } catch (const nlohmann::json::exception& e) {
                throw MalformedFileError("bad cache line " + std::to_string(line_no) +
                                         " in " + path_ + ": " + e.what());
            }
        }
    }

    std::string path_;
    Mode mode_;
    std::shared_ptr<Backend> inner_;
    std::string model_;
    double temperature_;
    std::map<std::string, std::deque<std::string>> cache_;
    std::mutex mu_;
};

}  // namespace cov
