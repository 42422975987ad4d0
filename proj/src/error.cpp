#include "interfere/error.hpp"

namespace interfere {

std::string_view error_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::EmptyCluster: return "EmptyCluster";
    case ErrorCode::NonBinaryTreatment: return "NonBinaryTreatment";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::InvalidPermutation: return "InvalidPermutation";
    case ErrorCode::SeparationDetected: return "SeparationDetected";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::NotConverged: return "NotConverged";
    case ErrorCode::TooFewObservations: return "TooFewObservations";
    case ErrorCode::InvalidNodeCount: return "InvalidNodeCount";
    case ErrorCode::NonFiniteIntegrand: return "NonFiniteIntegrand";
    case ErrorCode::MaxDepthExceeded: return "MaxDepthExceeded";
    case ErrorCode::NonFiniteLikelihood: return "NonFiniteLikelihood";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::InvalidExposureLevel: return "InvalidExposureLevel";
    case ErrorCode::TooFewClusters: return "TooFewClusters";
    case ErrorCode::DegenerateTrainingFold: return "DegenerateTrainingFold";
    case ErrorCode::BracketFailure: return "BracketFailure";
    case ErrorCode::MissingFValue: return "MissingFValue";
    case ErrorCode::MissingOutcome: return "MissingOutcome";
    case ErrorCode::ZeroPropensity: return "ZeroPropensity";
    case ErrorCode::ClusterTooLarge: return "ClusterTooLarge";
    case ErrorCode::NoisyTable: return "NoisyTable";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace interfere
