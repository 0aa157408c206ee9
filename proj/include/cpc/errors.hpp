#pragma once

#include <stdexcept>
#include <string>

namespace cpc {

// Error categories map onto CLI exit codes: ConfigError -> 1, IoError, ParseError
// and ServiceError -> 2, NumericError -> 3. Precondition violations inside the
// library use std::invalid_argument.

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ServiceError : public std::runtime_error {
public:
    ServiceError(const std::string& what, bool retriable)
        : std::runtime_error(what), retriable_(retriable) {}

    bool retriable() const noexcept { return retriable_; }

private:
    bool retriable_;
};

// Malformed external text or files (LLM output, partition/manifest files).
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace cpc
