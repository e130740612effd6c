#pragma once

#include <stdexcept>
#include <string>

namespace pan {

// Error taxonomy shared across the library. The CLI maps these onto process
// exit codes: UsageError -> 2, data/parse/config -> 3, NumericalAbort -> 4.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

class ParameterError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class ContractError : public Error {
public:
    using Error::Error;
};

// Malformed input files. Carries the byte offset (binary formats) or line
// number (text formats) that triggered the failure.
class ParseError : public Error {
public:
    ParseError(const std::string& msg, long long where, bool is_line)
        : Error(msg + (is_line ? " (line " : " (byte offset ")
                    + std::to_string(where) + ")"),
          where_(where), is_line_(is_line) {}
    explicit ParseError(const std::string& msg) : Error(msg), where_(-1), is_line_(false) {}

    long long where() const { return where_; }
    bool is_line() const { return is_line_; }

private:
    long long where_;
    bool is_line_;
};

class IoError : public Error {
public:
    using Error::Error;
};

class NumericalAbort : public Error {
public:
    using Error::Error;
};

class UsageError : public Error {
public:
    using Error::Error;
};

} // namespace pan
