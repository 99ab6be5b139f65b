#pragma once

#include <stdexcept>
#include <string>

namespace drc {

// Error categories map 1:1 onto CLI exit codes (see cli.hpp).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape violations are configuration problems (bad wiring or bad input size).
class ShapeError : public ConfigError {
public:
    explicit ShapeError(const std::string& msg) : ConfigError(msg) {}
};

class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace exit_code {
constexpr int ok = 0;
constexpr int config_error = 2;
constexpr int data_error = 3;
constexpr int numeric_failure = 4;
} // namespace exit_code

} // namespace drc
