#pragma once

#include <stdexcept>
#include <string>

namespace spygr {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Extent/shape mismatch. The message always carries both shapes.
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error("shape error: " + msg) {}
};

/// A kernel produced (or was handed) a NaN/Inf value.
class NonFiniteError : public Error {
public:
    explicit NonFiniteError(const std::string& msg) : Error("non-finite value: " + msg) {}
};

/// Request would materialize an n x n similarity above the configured cap.
class OracleSizeError : public Error {
public:
    explicit OracleSizeError(const std::string& msg) : Error("oracle size: " + msg) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error("io error: " + msg) {}
};

}  // namespace spygr
