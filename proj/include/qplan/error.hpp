#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace qplan {

// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public Error {
public:
    ParseError(std::size_t position, std::string expected, std::string found)
        : Error("syntax error at offset " + std::to_string(position) + ": expected " + expected +
                ", found " + found),
          position_(position),
          expected_(std::move(expected)) {}

    std::size_t position() const noexcept { return position_; }
    const std::string& expected() const noexcept { return expected_; }

private:
    std::size_t position_;
    std::string expected_;
};

class UnknownIdentifierError : public Error {
public:
    UnknownIdentifierError(std::string kind, std::string name)
        : Error("unknown " + kind + ": " + name), kind_(std::move(kind)), name_(std::move(name)) {}

    const std::string& kind() const noexcept { return kind_; }
    const std::string& name() const noexcept { return name_; }

private:
    std::string kind_;
    std::string name_;
};

class UnsupportedConstructError : public Error {
public:
    explicit UnsupportedConstructError(std::string construct)
        : Error("unsupported construct: " + construct), construct_(std::move(construct)) {}

    const std::string& construct() const noexcept { return construct_; }

private:
    std::string construct_;
};

// A structurally well-formed query that breaks a QueryIR invariant.
class InvalidQueryError : public Error {
public:
    using Error::Error;
};

class SchemaError : public Error {
public:
    using Error::Error;
};

class EvaluationError : public Error {
public:
    using Error::Error;
};

class PreconditionError : public Error {
public:
    using Error::Error;
};

class ExecutionError : public Error {
public:
    ExecutionError(std::string query_id, const std::string& what)
        : Error("execution failed for query '" + query_id + "': " + what), query_id_(std::move(query_id)) {}

    const std::string& query_id() const noexcept { return query_id_; }

private:
    std::string query_id_;
};

class TrainingError : public Error {
public:
    using Error::Error;
};

class DimensionMismatchError : public Error {
public:
    DimensionMismatchError(std::size_t expected, std::size_t actual)
        : Error("dimension mismatch: expected " + std::to_string(expected) + ", got " + std::to_string(actual)) {}
};

class FormatError : public Error {
public:
    using Error::Error;
};

// Raised by a harness phase; prior phase artifacts are left untouched.
class PhaseError : public Error {
public:
    PhaseError(std::string phase, const std::string& what)
        : Error(phase + ": " + what), phase_(std::move(phase)) {}

    const std::string& phase() const noexcept { return phase_; }

private:
    std::string phase_;
};

}  // namespace qplan
