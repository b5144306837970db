#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gliomaforge {

enum class ErrorKind {
    format,
    unsupported_type,
    corrupt_header,
    io,
    validation,
    missing_file,
    alignment,
    label,
    empty_foreground,
    config,
    degenerate_input,
    insufficient_data,
    shape,
    usage,
    pairing,
    checkpoint,
    numerical,
};

inline std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::format: return "format error";
    case ErrorKind::unsupported_type: return "unsupported-type error";
    case ErrorKind::corrupt_header: return "corrupt-header error";
    case ErrorKind::io: return "IO error";
    case ErrorKind::validation: return "validation error";
    case ErrorKind::missing_file: return "missing-file error";
    case ErrorKind::alignment: return "alignment error";
    case ErrorKind::label: return "label error";
    case ErrorKind::empty_foreground: return "empty-foreground error";
    case ErrorKind::config: return "config error";
    case ErrorKind::degenerate_input: return "degenerate-input error";
    case ErrorKind::insufficient_data: return "insufficient-data error";
    case ErrorKind::shape: return "shape error";
    case ErrorKind::usage: return "usage error";
    case ErrorKind::pairing: return "pairing error";
    case ErrorKind::checkpoint: return "checkpoint error";
    case ErrorKind::numerical: return "numerical error";
    }
    return "error";
}

/// Every failure raised by the library carries a kind so callers (and the CLI
/// exit-code mapping) can branch without parsing messages.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
    if (!condition) fail(kind, message);
}

} // namespace gliomaforge
