#pragma once

#include <stdexcept>
#include <string>

namespace occludere {

enum class ErrorKind {
    invalid_input,
    shape,
    index,
    contract,
    label,
    io,
    format,
    parse,
    validation,
    numeric,
    config,
    pairing,
    empty_face,
    degenerate_cluster,
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::invalid_input: return "invalid-input";
    case ErrorKind::shape: return "shape";
    case ErrorKind::index: return "index";
    case ErrorKind::contract: return "contract";
    case ErrorKind::label: return "label";
    case ErrorKind::io: return "io";
    case ErrorKind::format: return "format";
    case ErrorKind::parse: return "parse";
    case ErrorKind::validation: return "validation";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::config: return "config";
    case ErrorKind::pairing: return "pairing";
    case ErrorKind::empty_face: return "empty-face";
    case ErrorKind::degenerate_cluster: return "degenerate-cluster";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// Process exit code category used by the command-line tool.
inline int exit_code(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::config: return 1;
    case ErrorKind::io:
    case ErrorKind::format:
    case ErrorKind::parse: return 2;
    case ErrorKind::numeric:
    case ErrorKind::invalid_input:
    case ErrorKind::degenerate_cluster: return 3;
    default: return 4;
    }
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
    if (!cond) fail(kind, what);
}

} // namespace occludere
