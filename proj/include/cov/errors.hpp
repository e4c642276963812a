#pragma once

#include <stdexcept>
#include <string>

namespace cov {

// Base class for everything this library throws.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// ---- file / scene loading ----

class IoError : public Error {
public:
    using Error::Error;
};

class MalformedFileError : public Error {
public:
    using Error::Error;
};

class UnsupportedFormatError : public Error {
public:
    using Error::Error;
};

class SchemaViolationError : public Error {
public:
    SchemaViolationError(const std::string& field, const std::string& detail)
        : Error("schema violation at '" + field + "': " + detail), field_(field) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

class DanglingReferenceError : public Error {
public:
    using Error::Error;
};

// ---- geometry ----

class InvalidAnchorError : public Error {
public:
    using Error::Error;
};

class AnswerNotAMotionError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

// ---- renderer ----

class EncodeFailureError : public Error {
public:
    using Error::Error;
};

class DecodeFailureError : public Error {
public:
    using Error::Error;
};

// ---- llm gateway ----

class AuthFailureError : public Error {
public:
    using Error::Error;
};

class RateLimitedError : public Error {
public:
    using Error::Error;
};

class TransportFailureError : public Error {
public:
    using Error::Error;
};

class MalformedResponseError : public Error {
public:
    using Error::Error;
};

class ScriptExhaustedError : public Error {
public:
    using Error::Error;
};

class CacheMissError : public Error {
public:
    using Error::Error;
};

class TooManyImagesError : public Error {
public:
    using Error::Error;
};

// Wraps a backend failure with the episode it occurred in.
class BackendFailureError : public Error {
public:
    BackendFailureError(const std::string& episode_id, const std::string& detail)
        : Error("backend failure in episode '" + episode_id + "': " + detail),
          episode_id_(episode_id) {}
    const std::string& episode_id() const { return episode_id_; }

private:
    std::string episode_id_;
};

// ---- prompt kit ----

class UnboundPlaceholderError : public Error {
public:
    using Error::Error;
};

// ---- metrics ----

class EmptyInputError : public Error {
public:
    using Error::Error;
};

class OutOfRangeError : public Error {
public:
    using Error::Error;
};

// ---- harness ----

class ConfigError : public Error {
public:
    using Error::Error;
};

class MissingTrajectoryError : public Error {
public:
    using Error::Error;
};

}  // namespace cov
