#pragma once

#include <stdexcept>
#include <string>

namespace mqarch {

struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

struct NonStationaryError : Error {
    using Error::Error;
};
struct InsufficientHistoryError : Error {
    using Error::Error;
};
struct InsufficientBinsError : Error {
    using Error::Error;
};
struct InvalidBarError : Error {
    using Error::Error;
};
struct ZeroDenominatorError : Error {
    using Error::Error;
};
struct SingularCorrelationError : Error {
    using Error::Error;
};
struct FitDivergedError : Error {
    using Error::Error;
};
struct NonSymmetricError : Error {
    using Error::Error;
};
struct LengthMismatchError : Error {
    using Error::Error;
};
struct SingularSystemError : Error {
    using Error::Error;
};
struct NonPositiveIntensityError : Error {
    using Error::Error;
};
struct DegenerateFactorError : Error {
    using Error::Error;
};
struct ContractViolationError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};

}  // namespace mqarch
