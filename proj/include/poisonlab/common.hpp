#pragma once

#include <stdexcept>
#include <string>

namespace poisonlab {

// Error taxonomy shared across modules. Argument violations use
// std::invalid_argument directly.
struct NotFoundError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InsufficientDataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Raised when an internal invariant breaks (never caused by caller input).
struct InternalError : std::logic_error {
    using std::logic_error::logic_error;
};

// Config parsing/validation failure; `field` names the offending key path.
struct ConfigError : std::runtime_error {
    std::string field;
    ConfigError(std::string field_path, const std::string& what)
        : std::runtime_error("config field '" + field_path + "': " + what),
          field(std::move(field_path)) {}
};

}  // namespace poisonlab
