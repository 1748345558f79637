#pragma once

#include <stdexcept>
#include <string>

namespace bireal {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor extents disagree with what an operation expects.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A network description cannot be instantiated.
class SpecError : public Error {
public:
    using Error::Error;
};

/// The requested forward mode is not valid for the parameters' state.
class ModeError : public Error {
public:
    using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Malformed model or dataset file.
class FormatError : public Error {
public:
    using Error::Error;
};

class ChecksumError : public FormatError {
public:
    using FormatError::FormatError;
};

}  // namespace bireal
