#pragma once

#include <stdexcept>
#include <string>

namespace dmz {

// Every failure surfaced by the library carries a stable category string so
// the CLI can emit machine-parseable one-line errors.
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& msg)
        : std::runtime_error(msg), category_(std::move(category)) {}
    const std::string& category() const { return category_; }

private:
    std::string category_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config", msg) {}
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error("shape", msg) {}
};

struct IndexError : Error {
    explicit IndexError(const std::string& msg) : Error("index", msg) {}
};

struct DataError : Error {
    explicit DataError(const std::string& msg) : Error("data", msg) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error("numeric", msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error("io", msg) {}
};

struct CorruptionError : Error {
    explicit CorruptionError(const std::string& msg) : Error("corruption", msg) {}
};

struct VersionError : Error {
    explicit VersionError(const std::string& msg) : Error("version", msg) {}
};

}  // namespace dmz
