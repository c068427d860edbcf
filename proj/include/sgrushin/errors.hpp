#pragma once

#include <stdexcept>
#include <string>

namespace sgrushin {

/// Bad user-facing parameter (maps to CLI exit code 1).
class parameter_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Evaluation outside the domain of a function (e.g. xi at t = 0).
class domain_error : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Request exceeds a fixed size limit.
class capacity_error : public std::length_error {
public:
    using std::length_error::length_error;
};

/// Linear algebra failure or iteration cap reached.
class numerical_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class convergence_error : public numerical_error {
public:
    convergence_error(const std::string& what, int iterations, double residual)
        : numerical_error(what), iterations_(iterations), residual_(residual) {}
    int iterations() const noexcept { return iterations_; }
    double residual() const noexcept { return residual_; }

private:
    int iterations_;
    double residual_;
};

}  // namespace sgrushin
