#pragma once

#include <stdexcept>
#include <string>

namespace warptile {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string &msg) : std::runtime_error(msg) {}
};

/// Malformed pipeline text. Carries a 1-based line/column.
class ParseError : public Error {
public:
    ParseError(int line, int column, const std::string &msg)
        : Error("line " + std::to_string(line) + ", col " + std::to_string(column) + ": " + msg),
          line_(line), column_(column), detail_(msg) {}

    int line() const { return line_; }
    int column() const { return column_; }
    const std::string &detail() const { return detail_; }

private:
    int line_;
    int column_;
    std::string detail_;
};

/// A structurally invalid pipeline, group, schedule or shape.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Run-time failure while evaluating stage expressions (e.g. integer division by zero).
class EvalError : public Error {
public:
    using Error::Error;
};

/// Fault detected by the warp simulator.
class SimError : public Error {
public:
    using Error::Error;
};

}  // namespace warptile
