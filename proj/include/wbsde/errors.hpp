#pragma once

#include <stdexcept>
#include <string>

namespace wbsde {

// Input rejected before any computation: bad sizes, out-of-range thresholds,
// malformed configuration.
class ArgumentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A user-supplied map failed a sampled structural check (monotone Psi, ...).
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// The data admit no solution: terminal below obstacle, weak constraint violated.
class InfeasibilityError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Operation evaluated where it is undefined (conditional expectation at T).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Exhaustive enumeration requested beyond its combinatorial guard.
class CapacityError : public std::length_error {
public:
    using std::length_error::length_error;
};

class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// K_g * dt >= 1: the implicit step is not a contraction.
class ContractionError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class IterationError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

// The discrete Doleans exponential left the positive cone.
class PositivityError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class DecompositionError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

// A precondition stated as a verifiable property (Ref-submartingale) failed.
class ContractError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

} // namespace wbsde
