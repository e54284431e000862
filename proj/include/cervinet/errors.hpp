#pragma once

#include <stdexcept>
#include <string>

namespace cervinet {

/// Base for every error raised by the library. `kind()` is a stable tag used
/// by the CLI to print machine-parseable one-line errors.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

/// A configuration value violates an invariant. `field()` names it.
class ConfigError : public Error {
public:
    ConfigError(std::string field, const std::string& message)
        : Error("config", field + ": " + message), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

/// A document failed schema validation. `field()` names the offending field.
class ValidationError : public Error {
public:
    ValidationError(std::string field, const std::string& message)
        : Error("validation", field + ": " + message), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

class IoError : public Error {
public:
    explicit IoError(const std::string& message) : Error("io", message) {}
};

class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& message) : Error("shape", message) {}
};

class LookupError : public Error {
public:
    explicit LookupError(const std::string& message) : Error("lookup", message) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& message) : Error("data", message) {}
};

class TrainingError : public Error {
public:
    explicit TrainingError(const std::string& message) : Error("training", message) {}
};

}  // namespace cervinet
