#pragma once

#include <stdexcept>
#include <string>

namespace spacewave {

/// Broad failure category; the CLI maps each one to a distinct exit code.
enum class ErrorKind {
    parse = 2,
    validation = 3,
    numerical = 4,
    io = 5,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[nodiscard]] inline const char* to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::parse: return "parse";
    case ErrorKind::validation: return "validation";
    case ErrorKind::numerical: return "numerical";
    case ErrorKind::io: return "io";
    }
    return "unknown";
}

}  // namespace spacewave
