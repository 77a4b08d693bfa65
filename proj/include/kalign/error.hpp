#pragma once

#include <stdexcept>
#include <string>

namespace kalign {

enum class ErrorKind {
    InvalidAnnotation,
    Schema,
    Parse,
    Config,
    Split,
    Contract,
    Divergence,
    NotFound,
    Infeasible,
    NoConsistentClass,
    Conflict,
    Io,
};

const char* to_string(ErrorKind kind);

// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

}  // namespace kalign
