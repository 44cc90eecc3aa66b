#pragma once

#include <stdexcept>
#include <string>

namespace epigp {

// Root of every exception thrown by the library. The CLI maps the
// subclasses below onto process exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UnboundVariableError : public Error {
public:
    using Error::Error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

// Bad or insufficient caller-supplied input (too-short series, empty windows...).
class InputError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class JoinError : public Error {
public:
    using Error::Error;
};

class GapError : public Error {
public:
    using Error::Error;
};

class DegeneracyError : public Error {
public:
    using Error::Error;
};

class SizeLimitError : public Error {
public:
    using Error::Error;
};

class InfeasibleError : public Error {
public:
    InfeasibleError(const std::string& what, std::string constraint)
        : Error(what), constraint_(std::move(constraint))
    {
    }

    // Label of the binding / most violated constraint.
    const std::string& constraint() const noexcept { return constraint_; }

private:
    std::string constraint_;
};

class NonConvergenceError : public Error {
public:
    NonConvergenceError(const std::string& what, double residual) : Error(what), residual_(residual) {}

    double residual() const noexcept { return residual_; }

private:
    double residual_;
};

class TrainingError : public Error {
public:
    using Error::Error;
};

} // namespace epigp
