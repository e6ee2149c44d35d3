#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace grand {

/// Broad failure category; the CLI maps each to an exit code.
enum class ErrorKind { config, numeric, io };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

class DimensionError : public ConfigError {
public:
    explicit DimensionError(const std::string& what) : ConfigError(what) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

/// Iterative linear solve hit its iteration cap.
class SolverDivergence : public NumericError {
public:
    SolverDivergence(const std::string& what, double residual, std::size_t iterations)
        : NumericError(what), residual_(residual), iterations_(iterations) {}

    double residual() const noexcept { return residual_; }
    std::size_t iterations() const noexcept { return iterations_; }

private:
    double residual_;
    std::size_t iterations_;
};

/// Predictor-corrector fixed point did not settle.
class NonConvergence : public NumericError {
public:
    NonConvergence(const std::string& what, double last_delta)
        : NumericError(what), last_delta_(last_delta) {}

    double last_delta() const noexcept { return last_delta_; }

private:
    double last_delta_;
};

/// Adaptive step size collapsed.
class StiffnessError : public NumericError {
public:
    StiffnessError(const std::string& what, double t, double tau)
        : NumericError(what), t_(t), tau_(tau) {}

    double t() const noexcept { return t_; }
    double tau() const noexcept { return tau_; }

private:
    double t_;
    double tau_;
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

/// Malformed input file; carries the 1-based line number.
class ParseError : public IoError {
public:
    ParseError(const std::string& file, std::size_t line, const std::string& what)
        : IoError(file + ":" + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

}  // namespace grand
