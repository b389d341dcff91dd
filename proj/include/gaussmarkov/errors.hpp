#pragma once

#include <stdexcept>
#include <string>

namespace gm {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input: shape mismatch, non-symmetric matrix, bad time, bad grid.
class ValidationError : public Error {
public:
    using Error::Error;
};

class NotPsdError : public Error {
public:
    using Error::Error;
};

/// Cross-covariance leaves the range of C_X^{1/2}; the blocks cannot come from one Gaussian vector.
class InconsistentJointError : public Error {
public:
    using Error::Error;
};

class RankDeficientError : public Error {
public:
    using Error::Error;
};

class SingularOperatorError : public Error {
public:
    using Error::Error;
};

/// Matrix logarithm would cross the branch cut.
class LogBranchError : public Error {
public:
    using Error::Error;
};

/// Unreadable or malformed file, or an output path that cannot be written.
class IoError : public Error {
public:
    using Error::Error;
};

namespace detail {

inline void require(bool cond, const std::string& msg)
{
    if (!cond) throw ValidationError(msg);
}

}  // namespace detail
}  // namespace gm
