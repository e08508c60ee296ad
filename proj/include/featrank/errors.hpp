#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace featrank {

/// Base class for every error the library raises.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand dimensions disagree with the contract of an operation.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Malformed or invalid configuration / arguments.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Input file could not be parsed. `position` is a byte offset for binary
/// formats and a 1-based line number for text formats.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t position)
        : Error(what), position_(position) {}

    std::size_t position() const noexcept { return position_; }

private:
    std::size_t position_;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
    explicit DivergenceError(std::size_t epoch)
        : Error("training diverged: non-finite loss at epoch " + std::to_string(epoch)),
          epoch_(epoch) {}

    std::size_t epoch() const noexcept { return epoch_; }

private:
    std::size_t epoch_;
};

}  // namespace featrank
