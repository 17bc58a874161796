#pragma once

#include <stdexcept>
#include <string>

namespace gvalign {

// Error taxonomy shared by every module. Callers that need to map failures to
// exit codes (the CLI) distinguish ConfigError from everything else.

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct UsageError : std::logic_error {
    using std::logic_error::logic_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ProtocolError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string shape_message(const std::string& what, std::size_t expected, std::size_t actual);

}  // namespace gvalign
