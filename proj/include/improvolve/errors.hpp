#pragma once

#include <stdexcept>
#include <string>

namespace improvolve {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A solution that is structurally broken (wrong shape, NaN, negative sample).
class MalformedSolution : public Error {
public:
    using Error::Error;
};

/// An operator could not produce a valid solution.
class ImprovementFailed : public Error {
public:
    using Error::Error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

} // namespace improvolve
