#pragma once

#include <stdexcept>
#include <string>

namespace ctilab {

/// Broad failure categories. The CLI maps these onto exit codes.
enum class ErrorKind {
    InvalidArgument,   // precondition violated by the caller
    RateMismatch,      // waveforms with different sample rates combined
    NoFrameFound,      // preamble correlation below the detection floor
    Schema,            // malformed or incomplete JSON input
    Io,                // file could not be read or written
    Insufficient,      // not enough data to reach a decision
};

class Error : public std::runtime_error
{
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), m_kind(kind)
    {}

    ErrorKind kind() const noexcept { return m_kind; }

private:
    ErrorKind m_kind;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what)
{
    throw Error(kind, what);
}

inline void require(bool cond, const std::string& what)
{
    if (!cond)
        fail(ErrorKind::InvalidArgument, what);
}

} // namespace ctilab
