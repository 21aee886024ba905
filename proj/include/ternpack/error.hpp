#pragma once

#include <stdexcept>
#include <string>

namespace ternpack {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input violated a documented precondition (bad parameters, dimension
/// mismatch, non-finite values, ...).
class ValidationError : public Error {
public:
    using Error::Error;
};

class CapacityError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class DecodeUnderrunError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class QuantizationError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class DimensionMismatchError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class UnidentifiableFitError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Problems reading or writing files: I/O failures and malformed content.
class FormatError : public Error {
public:
    using Error::Error;
};

class IoError : public FormatError {
public:
    using FormatError::FormatError;
};

class BadMagicError : public FormatError {
public:
    using FormatError::FormatError;
};

class VersionMismatchError : public FormatError {
public:
    using FormatError::FormatError;
};

class TruncatedFileError : public FormatError {
public:
    using FormatError::FormatError;
};

class SizeMismatchError : public FormatError {
public:
    using FormatError::FormatError;
};

} // namespace ternpack
