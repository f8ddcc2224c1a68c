#pragma once

#include <stdexcept>
#include <string>

namespace fiberscope {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Zero-area polygon, empty mask, or any other input with no extent.
class EmptyGeometryError : public Error {
public:
    using Error::Error;
};

class DimensionMismatchError : public Error {
public:
    using Error::Error;
};

/// Annotation or label document that cannot be interpreted.
class ParseError : public Error {
public:
    using Error::Error;
};

/// Model outputs whose shapes disagree with the session description.
class ModelContractError : public Error {
public:
    using Error::Error;
};

class SessionError : public Error {
public:
    using Error::Error;
};

class StatisticsError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

}  // namespace fiberscope
