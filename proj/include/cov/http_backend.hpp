#pragma once

// OpenAI-compatible chat-completions client over cpp-httplib.

#include <cstdlib>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "cov/chat.hpp"
#include "cov/errors.hpp"
#include "cov/gateway.hpp"

namespace cov {

namespace detail {

struct SplitUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;    // leading /
};

inline SplitUrl split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
        throw ConfigError("endpoint must include a scheme: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace detail

class HttpBackend : public Backend {
public:
    explicit HttpBackend(BackendConfig config,
                         std::shared_ptr<RateLimiter> limiter = nullptr)
        : config_(std::move(config)), limiter_(std::move(limiter)) {
        config_.validate();
        if (config_.endpoint.empty())
            throw ConfigError("http backend needs an endpoint");
        const auto split = detail::split_url(config_.endpoint);
        origin_ = split.origin;
        path_ = split.path;
        const std::string suffix = "/chat/completions";
        if (path_.size() < suffix.size() ||
            path_.compare(path_.size() - suffix.size(), suffix.size(), suffix) != 0) {
            if (path_.back() == '/') path_.pop_back();
            path_ += suffix;
        }
    }

protected:
    std::string complete_impl(const std::vector<ChatMessage>& messages) override {
        if (count_images(messages) > static_cast<size_t>(config_.max_images))
            throw TooManyImagesError(
                "request has " + std::to_string(count_images(messages)) +
                " images; backend limit is " + std::to_string(config_.max_images));

        const std::string body = build_body(messages);
        httplib::Headers headers;
        if (const char* key = std::getenv(config_.api_key_env.c_str());
            key && *key)
            headers.emplace("Authorization", std::string("Bearer ") + key);

        const auto delays = backoff_delays(config_.backoff_base_s,
                                           config_.max_retries,
                                           std::random_device{}());
        std::string last_error = "no attempt made";
        for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
            if (attempt > 0)
                std::this_thread::sleep_for(
                    std::chrono::duration<double>(delays[attempt - 1]));
            if (limiter_) limiter_->acquire();

            httplib::Client cli(origin_);
            cli.set_connection_timeout(std::chrono::duration<double>(config_.timeout_s));
            cli.set_read_timeout(std::chrono::duration<double>(config_.timeout_s));
            cli.set_write_timeout(std::chrono::duration<double>(config_.timeout_s));

            auto res = cli.Post(path_, headers, body, "application/json");
            if (!res) {
                last_error = "transport error: " + httplib::to_string(res.error());
                continue;  // timeouts and connection failures are retried
            }
            if (res->status == 200) return extract_text(res->body);
            if (res->status == 401 || res->status == 403)
                throw AuthFailureError("backend returned HTTP " +
                                       std::to_string(res->status));
            if (res->status == 429 || res->status >= 500) {
                last_error = "HTTP " + std::to_string(res->status);
                if (attempt == config_.max_retries && res->status == 429)
                    throw RateLimitedError("still rate limited after " +
                                           std::to_string(config_.max_retries) +
                                           " retries");
                continue;
            }
            throw TransportFailureError("backend returned HTTP " +
                                        std::to_string(res->status) + ": " +
                                        res->body.substr(0, 200));
        }
        throw TransportFailureError("request failed after " +
                                    std::to_string(config_.max_retries) +
                                    " retries; last error: " + last_error);
    }

private:
    std::string build_body(const std::vector<ChatMessage>& messages) const {
        nlohmann::json body;
        body["model"] = config_.model_name;
        body["temperature"] = config_.temperature;
        body["max_tokens"] = config_.max_output_tokens;
        nlohmann::json msgs = nlohmann::json::array();
        for (const auto& m : messages) {
            nlohmann::json jm;
            jm["role"] = m.role;
            nlohmann::json content = nlohmann::json::array();
            for (const auto& p : m.parts) {
                if (p.kind == ChatPart::Kind::Text) {
                    content.push_back({{"type", "text"}, {"text", p.text}});
                } else {
                    const std::string url = "data:" + p.media_type + ";base64," +
                                            base64_encode(p.bytes);
                    content.push_back(
                        {{"type", "image_url"}, {"image_url", {{"url", url}}}});
                }
            }
            jm["content"] = std::move(content);
            msgs.push_back(std::move(jm));
        }
        body["messages"] = std::move(msgs);
        return body.dump();
    }

    static std::string extract_text(const std::string& body) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(body);
        } catch (const nlohmann::json::exception& e) {
            throw MalformedResponseError(std::string("response is not JSON: ") +
                                         e.what());
        }
        try {
            const auto& choices = j.at("choices");
            if (!choices.is_array() || choices.empty())
                throw MalformedResponseError("response has no choices");
            const auto& content = choices.at(0).at("message").at("content");
            if (content.is_string()) return content.get<std::string>();
            if (content.is_array()) {
                // some servers return content as a part list
                std::string out;
                for (const auto& part : content)
                    if (part.contains("text"))
                        out += part.at("text").get<std::string>();
                return out;
            }
            throw MalformedResponseError("unsupported content shape");
        } catch (const nlohmann::json::exception& e) {
            throw MalformedResponseError(std::string("missing fields: ") + e.what());
        }
    }

    BackendConfig config_;
    std::shared_ptr<RateLimiter> limiter_;
    std::string origin_;
    std::string path_;
};

}  // namespace cov
