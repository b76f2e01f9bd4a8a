#pragma once

#include <stdexcept>
#include <string>

namespace phrec {

// Bad inputs (caller mistakes, malformed files, violated preconditions).
// The CLI maps these to exit code 1; anything else runtime-fatal maps to 2.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace phrec
