#include <flatcheck/error.hpp>

namespace flatcheck {

std::string_view to_string(ErrorKind kind)
{
    switch (kind) {
    case ErrorKind::SyntaxError: return "SyntaxError";
    case ErrorKind::UnknownSymbol: return "UnknownSymbol";
    case ErrorKind::DivisionByZero: return "DivisionByZero";
    case ErrorKind::SingularSolve: return "SingularSolve";
    case ErrorKind::NonFiniteValue: return "NonFiniteValue";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::DependentInputs: return "DependentInputs";
    case ErrorKind::SingularMass: return "SingularMass";
    case ErrorKind::NotQuadratic: return "NotQuadratic";
    case ErrorKind::RankNotLocallyConstant: return "RankNotLocallyConstant";
    case ErrorKind::HypothesisViolated: return "HypothesisViolated";
    case ErrorKind::PivotDegenerate: return "PivotDegenerate";
    case ErrorKind::VerificationFailed: return "VerificationFailed";
    case ErrorKind::DegenerateAnsatz: return "DegenerateAnsatz";
    case ErrorKind::BadIndices: return "BadIndices";
    case ErrorKind::NonInvertibleScramble: return "NonInvertibleScramble";
    case ErrorKind::NonFiniteState: return "NonFiniteState";
    case ErrorKind::SingularJacobian: return "SingularJacobian";
    case ErrorKind::SingularBeta: return "SingularBeta";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::Io: return "Io";
    }
    return "Unknown";
}

} // namespace flatcheck
