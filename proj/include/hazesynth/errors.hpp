#pragma once

#include <stdexcept>
#include <string>

namespace hazesynth {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NotFoundError : public Error {
public:
    using Error::Error;
};

// Undecodable image bytes, truncated or corrupt archives.
class FormatError : public Error {
public:
    using Error::Error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

// Problems with a corpus: empty directories, too few images, missing depth.
class DataError : public Error {
public:
    using Error::Error;
};

// A loss term became NaN or infinite. `term()` names it.
class NumericError : public Error {
public:
    NumericError(std::string term, const std::string& what)
        : Error(what), term_(std::move(term)) {}
    const std::string& term() const noexcept { return term_; }

private:
    std::string term_;
};

// Using an object before it is ready (e.g. an unloaded backbone).
class StateError : public Error {
public:
    using Error::Error;
};

// Archive written by an incompatible format version.
class IncompatibleVersionError : public FormatError {
public:
    using FormatError::FormatError;
};

// Bad or missing configuration key. `key()` names it.
class ConfigError : public Error {
public:
    ConfigError(std::string key, const std::string& what)
        : Error(what), key_(std::move(key)) {}
    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

} // namespace hazesynth
