#pragma once

#include <stdexcept>
#include <string>

namespace cachexia {

enum class Errc {
  MalformedLine,
  DuplicatePatientId,
  UnitConflict,
  Io,
  MissingInput,
  InsufficientInformation,
  Unstageable,
  EmptyCohort,
  SchemaMismatch,
  EmptyBattery,
  EndpointUnreachable,
  UnparseableAfterRetry,
  Timeout,
  LengthMismatch,
  EmptyText,
  EmptyList,
  DimensionMismatch,
  TooFewSamples,
  WrongEnsembleSize,
  BudgetTooSmall,
  EmptyMatrix,
  InvalidConfig,
  ConfigInvalid,
  ConfigHashMismatch,
  StepFailed,
};

const char* to_string(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& detail);

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace cachexia
