#pragma once

#include <stdexcept>
#include <string>

namespace wip {

// Caller passed something structurally wrong (shape mismatch, bad flag, ...).
class InvalidInputError : public std::runtime_error {
public:
    explicit InvalidInputError(const std::string& what) : std::runtime_error(what) {}
};

// Geometry too degenerate to solve (collinear points, zero span, ...).
class DegenerateGeometryError : public std::runtime_error {
public:
    DegenerateGeometryError(const std::string& what, int rank)
        : std::runtime_error(what), rank_(rank) {}
    int rank() const { return rank_; }

private:
    int rank_;
};

// File could not be parsed; message carries line/field context.
class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite values showed up mid-computation.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace wip
