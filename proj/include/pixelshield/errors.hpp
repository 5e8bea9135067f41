#pragma once

#include <stdexcept>
#include <string>

namespace pxs {

// Caller passed something that violates a precondition (bad shapes, bad
// config, out-of-range arguments). Maps to CLI exit code 2.
class UsageError : public std::runtime_error {
public:
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// A computation produced NaN/Inf or otherwise left the numeric domain.
// Maps to CLI exit code 3.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Inconsistent graph construction (shape inference failure etc.); carries
// the offending node id in the message.
class GraphError : public std::runtime_error {
public:
    explicit GraphError(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace pxs
