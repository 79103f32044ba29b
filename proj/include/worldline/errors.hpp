#pragma once

#include <stdexcept>
#include <string>

namespace worldline {

/// Invalid configuration or argument.
struct ParameterError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Quadrature non-convergence, too many non-finite path contributions, etc.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Evaluation exactly at a non-differentiable point.
struct SingularInputError : std::domain_error {
    using std::domain_error::domain_error;
};

inline void require(bool ok, const std::string& what) {
    if (!ok) throw ParameterError(what);
}

} // namespace worldline
