#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace evcs {

/// Malformed input text. Carries the 1-based line number when known (0 otherwise).
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t line = 0)
        : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Well-formed input that violates a model invariant.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Destination not reachable from origin.
class NoRouteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// No design or strategy profile can satisfy the constraints.
class InfeasibleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace evcs
