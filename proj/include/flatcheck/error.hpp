#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace flatcheck {

enum class ErrorKind : std::uint8_t {
    SyntaxError,
    UnknownSymbol,
    DivisionByZero,
    SingularSolve,
    NonFiniteValue,
    DimensionMismatch,
    DependentInputs,
    SingularMass,
    NotQuadratic,
    RankNotLocallyConstant,
    HypothesisViolated,
    PivotDegenerate,
    VerificationFailed,
    DegenerateAnsatz,
    BadIndices,
    NonInvertibleScramble,
    NonFiniteState,
    SingularJacobian,
    SingularBeta,
    InvalidConfig,
    Io,
};

std::string_view to_string(ErrorKind kind);

// Every failure raised by the library carries a kind so callers (the CLI in
// particular) can map it to an exit code without parsing messages.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string &what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

// Parse failure with a 1-based character position inside the offending text.
class SyntaxError : public Error {
public:
    SyntaxError(std::size_t position, const std::string &expected)
        : Error(ErrorKind::SyntaxError, "syntax error at position " + std::to_string(position) + ": expected " + expected),
          position_(position), expected_(expected)
    {
    }

    std::size_t position() const noexcept { return position_; }
    const std::string &expected() const noexcept { return expected_; }

private:
    std::size_t position_;
    std::string expected_;
};

// Raised while evaluating a node numerically. The point is non-generic for the
// expression and callers are expected to resample or skip it.
class EvalError : public Error {
public:
    EvalError(ErrorKind kind, std::uint32_t node, const std::string &what) : Error(kind, what), node_(node) {}

    std::uint32_t node() const noexcept { return node_; }

private:
    std::uint32_t node_;
};

} // namespace flatcheck
