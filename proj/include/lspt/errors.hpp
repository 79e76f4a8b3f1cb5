#pragma once

#include <stdexcept>
#include <string>

namespace lspt {

// Invalid configuration, schema violation, malformed file. CLI exit code 2.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Numeric failure at run time (non-finite measurement, divergence). CLI exit code 3.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace lspt
