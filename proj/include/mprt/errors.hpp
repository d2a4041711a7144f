#pragma once

#include <stdexcept>
#include <string>

namespace mprt {

/// Malformed user input: bad CSV/schema, out-of-range arguments, impossible
/// hypotheses. Maps to CLI exit code 1.
class InputError : public std::runtime_error {
public:
    explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numerical failure inside an estimator or kernel: degenerate covariance,
/// unidentifiable thresholds, optimizer non-convergence. Maps to CLI exit code 2.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace mprt
