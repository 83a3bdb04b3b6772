#pragma once

#include <stdexcept>
#include <string>

namespace kpeforge {

// Every failure surfaced by the library derives from Error so callers (the CLI
// in particular) can report it uniformly and pick an exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shapes, ranges or preconditions violated by the caller.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

// 3*m_max does not fit in the transformer dimension, or too many people.
class CapacityError : public Error {
public:
    using Error::Error;
};

// A similarity score whose normalizer is empty (no visible reference joints,
// empty mask, empty reference set).
class UndefinedScore : public Error {
public:
    using Error::Error;
};

// Malformed or incompatible files: bad magic, truncated tables, wrong arity.
class FormatError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
    using Error::Error;
};

// A pipeline stage was asked for an artifact that has not been produced yet.
class MissingArtifact : public Error {
public:
    using Error::Error;
};

} // namespace kpeforge
