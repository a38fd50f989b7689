#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mixfit {

// Covariance (or posterior scale) matrix could not be Cholesky-factorized.
class FactorizationError : public std::runtime_error {
public:
    explicit FactorizationError(const std::string& what) : std::runtime_error(what) {}
};

// A component's responsibility mass fell below the empty-component threshold.
// Recovery policy (re-seed, abort, ...) is the caller's decision.
class EmptyComponentError : public std::runtime_error {
public:
    EmptyComponentError(const std::string& what, int component)
        : std::runtime_error(what), component_(component) {}
    int component() const noexcept { return component_; }

private:
    int component_;
};

// EM restarted from a perturbed fixed point left the basin of attraction.
class BasinEscapeError : public std::runtime_error {
public:
    explicit BasinEscapeError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed input file. byte_offset() points at the offending position when known.
class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& what, std::size_t byte_offset = 0)
        : std::runtime_error(what), byte_offset_(byte_offset) {}
    std::size_t byte_offset() const noexcept { return byte_offset_; }

private:
    std::size_t byte_offset_;
};

}  // namespace mixfit
