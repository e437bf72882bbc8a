#pragma once

#include <stdexcept>
#include <string>

namespace fairshare {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Matrix or vector shapes that do not fit together (e.g. K > N for ZFDPC).
class DimensionError : public Error {
public:
    using Error::Error;
};

class InvalidCovariance : public Error {
public:
    using Error::Error;
};

class InvalidAllocation : public Error {
public:
    using Error::Error;
};

/// Fairness of an all-zero rate vector is undefined.
class ZeroSumRate : public Error {
public:
    using Error::Error;
};

class UndefinedForSingleUser : public Error {
public:
    using Error::Error;
};

/// A fairness-bearing objective was asked to serve a user with zero gain.
class InfeasibleFairness : public Error {
public:
    using Error::Error;
};

class DegenerateCurve : public Error {
public:
    using Error::Error;
};

class InfeasibleTarget : public Error {
public:
    using Error::Error;
};

} // namespace fairshare
