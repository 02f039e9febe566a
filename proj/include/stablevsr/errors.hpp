#pragma once

#include <stdexcept>
#include <string>

namespace stablevsr {

/// Tensor shapes that do not line up for an operation.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Invalid configuration (even kernel size, bad spec combination, unknown config key).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Mathematically undefined request (zero matrix stable rank, empty sequence, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Malformed file on disk: truncated checkpoint, gap in a frame directory, ...
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// API misuse by the caller (non-scalar backward root, wrong window length, ...).
class UsageError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Optimization produced NaN/Inf.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace stablevsr
