#pragma once

#include <stdexcept>
#include <string>

namespace epi {

// Error categories map 1:1 onto CLI exit codes.
class Error : public std::runtime_error {
public:
    Error(std::string message, int exit_code)
        : std::runtime_error(std::move(message)), exit_code_(exit_code) {}

    int exit_code() const noexcept { return exit_code_; }

private:
    int exit_code_;
};

/// Bad or missing configuration (exit code 2).
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& message) : Error(message, 2) {}
};

/// Malformed, inconsistent, or insufficient input data (exit code 3).
class DataError : public Error {
public:
    explicit DataError(const std::string& message) : Error(message, 3) {}
};

/// Numeric fault: NaN/inf, divergence, non-convergence (exit code 4).
class NumericError : public Error {
public:
    explicit NumericError(const std::string& message) : Error(message, 4) {}
};

} // namespace epi
