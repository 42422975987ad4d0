#ifndef INTERFERE_ERROR_HPP
#define INTERFERE_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace interfere {

enum class ErrorCode {
  DimensionMismatch,
  DuplicateId,
  EmptyCluster,
  NonBinaryTreatment,
  NonFiniteValue,
  ParseError,
  InvalidPermutation,
  SeparationDetected,
  RankDeficient,
  NotConverged,
  TooFewObservations,
  InvalidNodeCount,
  NonFiniteIntegrand,
  MaxDepthExceeded,
  NonFiniteLikelihood,
  IndexOutOfRange,
  InvalidExposureLevel,
  TooFewClusters,
  DegenerateTrainingFold,
  BracketFailure,
  MissingFValue,
  MissingOutcome,
  ZeroPropensity,
  ClusterTooLarge,
  NoisyTable,
  InvalidConfig,
  InvalidArgument,
  IoError,
};

std::string_view error_name(ErrorCode code) noexcept;

/// Library-wide exception. `code()` identifies the failure class; `what()`
/// carries the name followed by context.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(error_name(code)) + ": " + detail),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace interfere

#endif  // INTERFERE_ERROR_HPP
