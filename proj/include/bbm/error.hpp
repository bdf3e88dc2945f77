#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bbm {

enum class ErrorCode {
  NotSymmetric,
  NotPositiveDefinite,
  DimensionMismatch,
  OracleFailure,
  NoInteriorPoint,
  BoundaryViolation,
  MissingConstant,
  EmptySet,
  Stalled,
  SlaterViolation,
  BudgetExhausted,
  Infeasible,
  RankDeficientActiveSet,
  NonUniqueOptimum,
  ResidualTooLarge,
  InvalidArgument,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotSymmetric: return "NotSymmetric";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::OracleFailure: return "OracleFailure";
    case ErrorCode::NoInteriorPoint: return "NoInteriorPoint";
    case ErrorCode::BoundaryViolation: return "BoundaryViolation";
    case ErrorCode::MissingConstant: return "MissingConstant";
    case ErrorCode::EmptySet: return "EmptySet";
    case ErrorCode::Stalled: return "Stalled";
    case ErrorCode::SlaterViolation: return "SlaterViolation";
    case ErrorCode::BudgetExhausted: return "BudgetExhausted";
    case ErrorCode::Infeasible: return "Infeasible";
    case ErrorCode::RankDeficientActiveSet: return "RankDeficientActiveSet";
    case ErrorCode::NonUniqueOptimum: return "NonUniqueOptimum";
    case ErrorCode::ResidualTooLarge: return "ResidualTooLarge";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Exception carrying a machine-checkable error code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace bbm
