#include "cachexia/error.hpp"

namespace cachexia {

const char* to_string(Errc code) noexcept {
  switch (code) {
    case Errc::MalformedLine: return "MalformedLine";
    case Errc::DuplicatePatientId: return "DuplicatePatientId";
    case Errc::UnitConflict: return "UnitConflict";
    case Errc::Io: return "Io";
    case Errc::MissingInput: return "MissingInput";
    case Errc::InsufficientInformation: return "InsufficientInformation";
    case Errc::Unstageable: return "Unstageable";
    case Errc::EmptyCohort: return "EmptyCohort";
    case Errc::SchemaMismatch: return "SchemaMismatch";
    case Errc::EmptyBattery: return "EmptyBattery";
    case Errc::EndpointUnreachable: return "EndpointUnreachable";
    case Errc::UnparseableAfterRetry: return "UnparseableAfterRetry";
    case Errc::Timeout: return "Timeout";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::EmptyText: return "EmptyText";
    case Errc::EmptyList: return "EmptyList";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::TooFewSamples: return "TooFewSamples";
    case Errc::WrongEnsembleSize: return "WrongEnsembleSize";
    case Errc::BudgetTooSmall: return "BudgetTooSmall";
    case Errc::EmptyMatrix: return "EmptyMatrix";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::ConfigInvalid: return "ConfigInvalid";
    case Errc::ConfigHashMismatch: return "ConfigHashMismatch";
    case Errc::StepFailed: return "StepFailed";
  }
  return "Unknown";
}

Error::Error(Errc code, const std::string& detail)
    : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

}  // namespace cachexia
