#pragma once

#include <stdexcept>
#include <string>

namespace refcolor {

// Bad inputs, violated preconditions, malformed configs.
struct InvalidArgument : std::runtime_error {
    explicit InvalidArgument(const std::string& msg) : std::runtime_error(msg) {}
};

// I/O failures: unreadable files, bad magic, version/id mismatches.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failures: non-finite loss, zero-norm vectors, singular stats.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace refcolor
