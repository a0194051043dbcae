#pragma once

#include <stdexcept>
#include <string>

namespace xmad {

/// Broad failure classes. The CLI maps them onto its exit codes.
enum class ErrorKind {
    Io,
    Format,
    Length,
    Value,
    Shape,
    DegenerateInput,
    NoPlane,
    Lookup,
    Data,
    Usage,
    Config,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind), message_(what) {}

    ErrorKind kind() const noexcept { return kind_; }
    const std::string& message() const noexcept { return message_; }

    /// Same kind, message prefixed with context (usually a path or sample id).
    Error with_context(const std::string& context) const { return Error(kind_, context + ": " + message_); }

private:
    ErrorKind kind_;
    std::string message_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool condition, ErrorKind kind, const std::string& what) {
    if (!condition) fail(kind, what);
}

}  // namespace xmad
