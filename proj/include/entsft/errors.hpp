// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace entsft {

/// Raised when an input violates a mathematical precondition (non-finite
/// logits, non-positive temperature, out-of-range token, shape mismatch).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Raised for invalid or contradictory configuration.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Temperature bisection ended outside tolerance while the target was reachable.
class SearchFailure : public std::runtime_error {
public:
    SearchFailure(std::size_t row, double residual)
        : std::runtime_error("temperature search failed at row " + std::to_string(row) +
                             " (residual " + std::to_string(residual) + " nats)"),
          row_(row), residual_(residual) {}

    std::size_t row() const noexcept { return row_; }
    double residual() const noexcept { return residual_; }

private:
    std::size_t row_;
    double residual_;
};

}  // namespace entsft
