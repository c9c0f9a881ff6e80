#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cachexia/biomarkers.hpp"
#include "cachexia/cohort.hpp"
#include "cachexia/notes.hpp"

namespace cachexia {

struct StratumMeans {
  std::optional<double> weight_kg;
  std::optional<double> height_m;
};

/// Population means used to fill missing demographics; fit on a training split only.
struct ImputationModel {
  std::optional<double> age_mean;  // absent only when fitted with require_age = false
  std::map<std::pair<Sex, RaceEthnicity>, StratumMeans> strata;
  std::optional<double> global_weight_kg;
  std::optional<double> global_height_m;

  std::optional<double> weight_for(std::optional<Sex> sex, std::optional<RaceEthnicity> race) const;
  std::optional<double> height_for(std::optional<Sex> sex, std::optional<RaceEthnicity> race) const;

  nlohmann::ordered_json to_json() const;
};

/// Throws Errc::EmptyCohort when no record has an observed age, unless `require_age` is false,
/// in which case age stays missing after imputation (pipelines run with the clinical modality absent).
ImputationModel fit_imputer(std::span<const PatientRecord> training, bool require_age = true);

/// Fills age with the population mean and weight/height with sex x race stratum means
/// (global mean when the stratum has no observations). Missing TNM stage becomes code -1.
PatientRecord impute(const PatientRecord& record, const ImputationModel& model);

enum class ColumnKind { numeric, binary, sentinel_numeric, presence_flag };

std::string_view to_string(ColumnKind k);

struct Column {
  std::string name;
  ColumnKind kind;

  bool operator==(const Column&) const = default;
};

/// Which modality groups enter the feature vector.
struct SchemaConfig {
  bool clinical = true;
  bool sm = true;
  bool labs = true;
  bool notes = false;

  /// Parses a comma list such as "clinical,sm,labs,notes".
  static SchemaConfig parse(std::string_view modalities);
  std::string to_string() const;
};

struct FeatureSchema {
  std::vector<Column> columns;

  std::size_t size() const { return columns.size(); }
  std::vector<std::string> names() const;
  /// Hash of column names and kinds; models refuse inputs with a different fingerprint.
  std::string fingerprint() const;

  bool operator==(const FeatureSchema&) const = default;
};

FeatureSchema build_schema(const SchemaConfig& cfg, const QuestionBattery& battery);

struct FeatureVector {
  std::vector<double> values;
};

/// Encodes one imputed record. `notes_answers` are tabularized extraction answers (1/0/-1);
/// absent answers encode as -1. Throws Errc::SchemaMismatch on a battery-size mismatch.
FeatureVector encode_features(const PatientRecord& record, const BiomarkerPanel& panel,
                              const std::optional<std::vector<int>>& notes_answers, const SchemaConfig& cfg,
                              const QuestionBattery& battery);

/// "key: value" lines in a fixed order; absent values read "missing".
std::string serialize_tabular_text(const PatientRecord& record, const BiomarkerPanel& panel);

/// Ordered keys emitted by serialize_tabular_text.
std::span<const std::string_view> tabular_text_keys();

struct FeatureMatrix {
  FeatureSchema schema;
  std::vector<std::string> ids;
  std::vector<std::vector<double>> rows;
  std::string config_hash;

  std::size_t size() const { return rows.size(); }
};

using ExtractionIndex = std::map<std::string, std::vector<int>>;

/// Encodes every record; parallel across records, identical output to the serial path.
FeatureMatrix featurize(const Cohort& imputed, const ExtractionIndex& answers, const SchemaConfig& cfg,
                        const QuestionBattery& battery);

void write_feature_csv(const FeatureMatrix& m, const std::filesystem::path& path);
/// Column kinds are recovered from the `# kinds:` metadata line when present.
FeatureMatrix read_feature_csv(const std::filesystem::path& path);

/// Z-score scaling with statistics from the rows it was fitted on. Constant columns pass through centred.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;

  static Standardizer fit(const std::vector<std::vector<double>>& rows, std::span<const std::size_t> subset);
  std::vector<double> transform(std::span<const double> x) const;

  nlohmann::ordered_json to_json() const;
  static Standardizer from_json(const nlohmann::json& j);
};

}  // namespace cachexia
