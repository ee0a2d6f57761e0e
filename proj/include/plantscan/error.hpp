#pragma once

#include <stdexcept>
#include <string>

namespace plantscan {

/// Base of every error raised by the library. `exit_code()` is the process
/// status the CLI reports for it.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what, int code = 1) : std::runtime_error(what), code_(code) {}
    int exit_code() const noexcept { return code_; }

private:
    int code_;
};

class PreconditionError : public Error {
public:
    explicit PreconditionError(const std::string& what) : Error(what, 2) {}
};

class DataQualityError : public Error {
public:
    explicit DataQualityError(const std::string& what) : Error(what, 3) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(what, 4) {}
};

class ParseError : public IoError {
public:
    ParseError(const std::string& file, std::size_t line, const std::string& what)
        : IoError(file + ":" + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class EmptyCloudError : public PreconditionError {
public:
    using PreconditionError::PreconditionError;
};

/// Raised when an iterative solver produces a non-finite value.
class NumericalError : public Error {
public:
    NumericalError(const std::string& what, int iteration)
        : Error(what + " (iteration " + std::to_string(iteration) + ")"), iteration_(iteration) {}
    int iteration() const noexcept { return iteration_; }

private:
    int iteration_;
};

class DegeneracyError : public PreconditionError {
public:
    using PreconditionError::PreconditionError;
};

/// Feature matching found too few consistent correspondences.
class NoAlignmentError : public Error {
public:
    explicit NoAlignmentError(const std::string& what) : Error(what, 1) {}
};

}  // namespace plantscan
