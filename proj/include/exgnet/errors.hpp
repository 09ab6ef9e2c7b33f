#pragma once

#include <stdexcept>
#include <string>

namespace exg {

/// Base of every error the library raises. `exit_code()` is what the CLI
/// returns when the error escapes a subcommand.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual int exit_code() const noexcept { return 3; }
};

/// Bad arguments or configuration supplied by the caller.
class UsageError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 1; }
};

/// Input data that does not match its declared structure.
class IntegrityError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 2; }
};

class ParseError : public IntegrityError {
public:
    ParseError(const std::string& file, std::size_t line, const std::string& what)
        : IntegrityError(file + ":" + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class IoError : public IntegrityError {
public:
    using IntegrityError::IntegrityError;
};

/// Tensor shapes that do not fit together.
class ShapeError : public UsageError {
public:
    using UsageError::UsageError;
};

/// Fewer R peaks or RR intervals than an operation needs.
class InsufficientBeatsError : public IntegrityError {
public:
    using IntegrityError::IntegrityError;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
    using Error::Error;
};

}  // namespace exg
