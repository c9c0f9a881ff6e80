#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace cachexia {

inline constexpr double kKgPerLb = 0.45359237;

enum class Sex { female, male };
enum class RaceEthnicity { non_hispanic_white, hispanic_latinx, non_hispanic_black, other };
enum class FoodIntake { normal, decreased };
enum class BiochemFlag { elevated_crp, elevated_leukocytes, hypoalbuminemia, anemia };
enum class CachexiaStatus { non_cachectic, cachectic };
enum class NoteType {
  nutrition_assessment_form,
  nutrition_diagnosis_comments,
  progress_note,
  dietary_assessment,
  inter_visit_note,
  ambulatory_care_note,
  history_and_physical,
  patient_assessment,
};

std::string_view to_string(Sex v);
std::string_view to_string(RaceEthnicity v);
std::string_view to_string(FoodIntake v);
std::string_view to_string(BiochemFlag v);
std::string_view to_string(CachexiaStatus v);
std::string_view to_string(NoteType v);

// Parsers throw std::invalid_argument on unknown tokens.
Sex parse_sex(std::string_view s);
RaceEthnicity parse_race_ethnicity(std::string_view s);
FoodIntake parse_food_intake(std::string_view s);
BiochemFlag parse_biochem_flag(std::string_view s);
CachexiaStatus parse_cachexia_status(std::string_view s);
NoteType parse_note_type(std::string_view s);

inline constexpr RaceEthnicity kAllRaces[] = {RaceEthnicity::non_hispanic_white, RaceEthnicity::hispanic_latinx,
                                              RaceEthnicity::non_hispanic_black, RaceEthnicity::other};

struct LabPanel {
  std::optional<double> albumin_g_dl;
  std::optional<double> neutrophil_abs_k_ul;
  std::optional<double> lymphocyte_abs_k_ul;
  std::optional<double> bun_mg_dl;
  std::optional<double> creatinine_mg_dl;

  bool any() const {
    return albumin_g_dl || neutrophil_abs_k_ul || lymphocyte_abs_k_ul || bun_mg_dl || creatinine_mg_dl;
  }
  bool operator==(const LabPanel&) const = default;
};

struct SkeletalMuscleMeasurements {
  std::optional<double> sma_cm2;
  std::optional<double> sm_hu_mean;  // Hounsfield units, may be negative
  std::optional<double> smi_precomputed;

  bool operator==(const SkeletalMuscleMeasurements&) const = default;
};

struct ClinicalNote {
  NoteType note_type = NoteType::progress_note;
  std::string text;
  std::optional<std::string> date;  // ISO-8601

  bool operator==(const ClinicalNote&) const = default;
};

struct NotesBundle {
  std::vector<ClinicalNote> notes;

  bool operator==(const NotesBundle&) const = default;
};

/// Reference to a patient's L3 image series; slices are keys understood by an image provider.
struct ImageRef {
  std::string series_id;
  std::vector<std::string> slices;

  bool operator==(const ImageRef&) const = default;
};

/// One patient. Every clinical field is optional; absence is never encoded as a sentinel here.
struct PatientRecord {
  std::string patient_id;
  std::optional<double> age_years;
  std::optional<Sex> sex;
  std::optional<RaceEthnicity> race_ethnicity;
  std::optional<double> height_m;
  std::optional<double> weight_kg;
  std::optional<double> prior_weight_kg_6mo;
  std::optional<double> bmi;
  std::optional<int> tnm_stage_code;
  LabPanel labs;
  SkeletalMuscleMeasurements sm;
  std::optional<NotesBundle> notes;
  std::optional<ImageRef> image_ref;
  std::optional<int> ecog;
  std::optional<FoodIntake> food_intake;
  std::optional<std::set<BiochemFlag>> biochem_flags;
  std::optional<CachexiaStatus> gold_label;

  /// 100 * (prior - current) / prior when both weights are present.
  std::optional<double> weight_loss_pct_6mo() const;

  bool operator==(const PatientRecord&) const = default;
};

using Cohort = std::vector<PatientRecord>;

struct ModalityMask {
  bool has_clinical = false;
  bool has_sm = false;
  bool has_labs = false;
  bool has_notes = false;
  bool has_image = false;

  bool operator==(const ModalityMask&) const = default;
};

ModalityMask modality_mask(const PatientRecord& record);

enum class ViolationKind {
  NegativeAge,
  NonPositiveHeight,
  NonPositiveWeight,
  NonPositivePriorWeight,
  NonPositiveBmi,
  BmiInconsistent,
  StageOutOfRange,
  NegativeLab,
  NonPositiveSma,
  NonPositiveSmi,
  EcogOutOfRange,
  EmptyNotesBundle,
  EmptyNoteText,
};

enum class Severity { warning, error };

struct Violation {
  ViolationKind kind;
  Severity severity;
  std::string detail;
};

std::string_view to_string(ViolationKind v);

/// Collects every invariant violation; never throws, never mutates.
std::vector<Violation> validate_record(const PatientRecord& record);

// JSON-lines ingestion and canonical serialization.
PatientRecord record_from_json(const nlohmann::json& j);
nlohmann::ordered_json record_to_json(const PatientRecord& record);

Cohort parse_cohort(std::istream& in);
Cohort load_cohort(const std::filesystem::path& path);
std::string serialize_cohort(const Cohort& cohort);
void save_cohort(const Cohort& cohort, const std::filesystem::path& path);

}  // namespace cachexia
