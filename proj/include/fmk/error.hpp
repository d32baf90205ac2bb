#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace fmk {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A caller-supplied value violates a documented precondition.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Two windows (or a window and a trajectory) live on different time grids.
class GridMismatch : public Error {
public:
    using Error::Error;
};

/// Lipschitz ratio requested for a pair whose weighted distance is zero.
class DegeneratePair : public Error {
public:
    using Error::Error;
};

/// Malformed or unreadable file contents.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Integration blow-up, non-finite Gram entries, failed factorization.
class NumericalFailure : public Error {
public:
    explicit NumericalFailure(const std::string& what, double time = std::nan(""))
        : Error(what), time_(time) {}

    /// Model time at which the failure was detected (NaN when not time-related).
    [[nodiscard]] double time() const noexcept { return time_; }

private:
    double time_;
};

}  // namespace fmk
