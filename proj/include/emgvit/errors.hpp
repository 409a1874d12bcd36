#pragma once

#include <stdexcept>
#include <string>

namespace emgvit {

/// Broad failure classes. The CLI maps each to a distinct exit code.
enum class ErrorKind { config, data, numeric };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

/// Ingest, layout, split and segmentation failures.
class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

/// Non-finite values, unstable filters, divergent training.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

/// Invalid filter specification (corner above Nyquist and similar).
class DesignError : public ConfigError {
public:
    explicit DesignError(const std::string& what) : ConfigError(what) {}
};

}  // namespace emgvit
