#pragma once

#include <stdexcept>
#include <string>

namespace biased_erm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A parameter lies outside its admissible domain. `field()` names it.
class RangeError : public Error {
public:
    RangeError(std::string field, const std::string& what)
        : Error(field + ": " + what), field_(std::move(field)) {}

    [[nodiscard]] const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

/// A finite sample lacks a cell an estimator or rate needs.
class InsufficientData : public Error {
public:
    using Error::Error;
};

/// A conditional rate has a zero-mass conditioning event.
class DegenerateDenominator : public Error {
public:
    using Error::Error;
};

/// A constrained search found no hypothesis satisfying the constraint.
class NoFeasiblePoint : public Error {
public:
    using Error::Error;
};

}  // namespace biased_erm
