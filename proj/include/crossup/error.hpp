#pragma once

#include <stdexcept>
#include <string>

namespace crossup {

enum class ErrorKind {
    InvalidArgument,
    EmptyIndex,
    DegenerateNeighborhood,
    DegenerateFrame,
    Unreachable,  // e.g. a sampling target that cannot be met
    ShapeMismatch,
    Io,
    Parse,
    NumericFailure,
    TapeConsumed,
};

/// Library-wide exception. The kind lets callers (the CLI in particular) map
/// failures onto stable exit codes without string matching.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what)
{
    throw Error(kind, what);
}

inline void require(bool condition, ErrorKind kind, const std::string& what)
{
    if (!condition) {
        throw Error(kind, what);
    }
}

} // namespace crossup
