#pragma once

// Chat message model shared by all backends, plus base64 and the request
// fingerprint used by the record/replay cache.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "cov/errors.hpp"

namespace cov {

struct ChatPart {
    enum class Kind { Text, Image };
    Kind kind = Kind::Text;
    std::string text;
    std::vector<uint8_t> bytes;  // encoded image
    std::string media_type;     // e.g. image/png

    static ChatPart make_text(std::string t) {
        ChatPart p;
        p.kind = Kind::Text;
        p.text = std::move(t);
        return p;
    }
    static ChatPart make_image(std::vector<uint8_t> data, std::string media) {
        ChatPart p;
        p.kind = Kind::Image;
        p.bytes = std::move(data);
        p.media_type = std::move(media);
        return p;
    }
};

struct ChatMessage {
    std::string role;  // system | user | assistant
    std::vector<ChatPart> parts;

    static ChatMessage system(std::string text) {
        return {"system", {ChatPart::make_text(std::move(text))}};
    }
    static ChatMessage user(std::string text) {
        return {"user", {ChatPart::make_text(std::move(text))}};
    }
    static ChatMessage assistant(std::string text) {
        return {"assistant", {ChatPart::make_text(std::move(text))}};
    }

    std::string joined_text() const {
        std::string out;
        for (const auto& p : parts)
            if (p.kind == ChatPart::Kind::Text) {
                if (!out.empty()) out += "\n";
                out += p.text;
            }
        return out;
    }

    size_t image_count() const {
        size_t n = 0;
        for (const auto& p : parts)
            if (p.kind == ChatPart::Kind::Image) ++n;
        return n;
    }
};

inline size_t count_images(const std::vector<ChatMessage>& messages) {
    size_t n = 0;
    for (const auto& m : messages) n += m.image_count();
    return n;
}

// Text of the most recent user message; empty when there is none.
inline std::string latest_user_text(const std::vector<ChatMessage>& messages) {
    for (auto it = messages.rbegin(); it != messages.rend(); ++it)
        if (it->role == "user") return it->joined_text();
    return {};
}

inline std::string base64_encode(const uint8_t* data, size_t len) {
    static const char* alphabet =
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((len + 2) / 3 * 4);
    size_t i = 0;
    for (; i + 2 < len; i += 3) {
        const uint32_t v = (data[i] << 16) | (data[i + 1] << 8) | data[i + 2];
        out += alphabet[(v >> 18) & 63];
        out += alphabet[(v >> 12) & 63];
        out += alphabet[(v >> 6) & 63];
        out += alphabet[v & 63];
    }
    if (i + 1 == len) {
        const uint32_t v = data[i] << 16;
        out += alphabet[(v >> 18) & 63];
        out += alphabet[(v >> 12) & 63];
        out += "==";
    } else if (i + 2 == len) {
        const uint32_t v = (data[i] << 16) | (data[i + 1] << 8);
        out += alphabet[(v >> 18) & 63];
        out += alphabet[(v >> 12) & 63];
        out += alphabet[(v >> 6) & 63];
        out += "=";
    }
    return out;
}

inline std::string base64_encode(const std::vector<uint8_t>& data) {
    return base64_encode(data.data(), data.size());
}

constexpr uint64_t kFnvOffset = 0xcbf29ce484222325ull;
constexpr uint64_t kFnvPrime = 0x100000001b3ull;

inline uint64_t fnv1a64(const void* data, size_t len, uint64_t seed = kFnvOffset) {
    const auto* p = static_cast<const uint8_t*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= kFnvPrime;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t seed = kFnvOffset) {
    return fnv1a64(s.data(), s.size(), seed);
}

inline std::string to_hex16(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = digits[v & 0xF];
        v >>= 4;
    }
    return out;
}

// Stable fingerprint over the full request content; pinned by a frozen-value
// test so cache files survive process restarts and rebuilds.
inline uint64_t request_fingerprint(const std::vector<ChatMessage>& messages,
                                    const std::string& model, double temperature) {
    uint64_t h = kFnvOffset;
    char temp_buf[64];
    std::snprintf(temp_buf, sizeof(temp_buf), "%.6f", temperature);
    h = fnv1a64(model, h);
    h = fnv1a64("\x1d", 1, h);
    h = fnv1a64(temp_buf, std::strlen(temp_buf), h);
    for (const auto& m : messages) {
        h = fnv1a64("\x1e", 1, h);
        h = fnv1a64(m.role, h);
        for (const auto& p : m.parts) {
            h = fnv1a64("\x1f", 1, h);
            if (p.kind == ChatPart::Kind::Text) {
                h = fnv1a64("T", 1, h);
                h = fnv1a64(p.text, h);
            } else {
                h = fnv1a64("I", 1, h);
                h = fnv1a64(p.media_type, h);
                h = fnv1a64(p.bytes.data(), p.bytes.size(), h);
            }
        }
    }
    return h;
}

}  // namespace cov
