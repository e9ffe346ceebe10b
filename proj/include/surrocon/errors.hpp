#pragma once

#include <stdexcept>
#include <string>

namespace surrocon {

/// Root of every error raised by the library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Shapes do not line up (matmul inner dims, empty reductions, column counts).
struct DimensionError : Error {
    using Error::Error;
};

/// Input is valid in shape but cannot be processed (e.g. a zero-norm row).
struct DegenerateInputError : Error {
    using Error::Error;
};

/// An operation produced NaN or Inf.
struct NumericError : Error {
    using Error::Error;
};

/// A hyperparameter is out of range.
struct ParameterError : Error {
    using Error::Error;
};

/// A caller broke a precondition that is not about shapes.
struct ContractError : Error {
    using Error::Error;
};

struct BatchTooSmallError : ContractError {
    using ContractError::ContractError;
};

/// Every anchor in a contrastive batch was skipped.
struct EmptyLossError : ContractError {
    using ContractError::ContractError;
};

struct ParseError : Error {
    using Error::Error;
};

/// Stored data is inconsistent with its declared layout.
struct IntegrityError : Error {
    using Error::Error;
};

/// Not enough samples of some class to satisfy a balanced draw.
struct ShortageError : Error {
    using Error::Error;
};

/// Rate whose denominator is zero (sensitivity with no positives, AUROC with one class).
struct UndefinedMetricError : Error {
    using Error::Error;
};

/// KL(p||q) with q(i) = 0 where p(i) > 0.
struct DivergenceUndefinedError : Error {
    using Error::Error;
};

}  // namespace surrocon
