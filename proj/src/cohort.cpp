#include "cachexia/cohort.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "cachexia/error.hpp"

namespace cachexia {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

template <typename E, std::size_t N>
struct EnumTable {
  std::pair<E, std::string_view> entries[N];

  std::string_view name(E v) const {
    for (const auto& [e, s] : entries)
      if (e == v) return s;
    return "?";
  }
  E parse(std::string_view s, const char* what) const {
    for (const auto& [e, n] : entries)
      if (n == s) return e;
    throw std::invalid_argument(std::string("unknown ") + what + " '" + std::string(s) + "'");
  }
};

constexpr EnumTable<Sex, 2> kSex{{{Sex::female, "female"}, {Sex::male, "male"}}};
constexpr EnumTable<RaceEthnicity, 4> kRace{{{RaceEthnicity::non_hispanic_white, "non_hispanic_white"},
                                             {RaceEthnicity::hispanic_latinx, "hispanic_latinx"},
                                             {RaceEthnicity::non_hispanic_black, "non_hispanic_black"},
                                             {RaceEthnicity::other, "other"}}};
constexpr EnumTable<FoodIntake, 2> kIntake{{{FoodIntake::normal, "normal"}, {FoodIntake::decreased, "decreased"}}};
constexpr EnumTable<BiochemFlag, 4> kFlag{{{BiochemFlag::elevated_crp, "elevated_crp"},
                                           {BiochemFlag::elevated_leukocytes, "elevated_leukocytes"},
                                           {BiochemFlag::hypoalbuminemia, "hypoalbuminemia"},
                                           {BiochemFlag::anemia, "anemia"}}};
constexpr EnumTable<CachexiaStatus, 2> kStatus{
    {{CachexiaStatus::non_cachectic, "non_cachectic"}, {CachexiaStatus::cachectic, "cachectic"}}};
constexpr EnumTable<NoteType, 8> kNoteType{{{NoteType::nutrition_assessment_form, "nutrition_assessment_form"},
                                            {NoteType::nutrition_diagnosis_comments, "nutrition_diagnosis_comments"},
                                            {NoteType::progress_note, "progress_note"},
                                            {NoteType::dietary_assessment, "dietary_assessment"},
                                            {NoteType::inter_visit_note, "inter_visit_note"},
                                            {NoteType::ambulatory_care_note, "ambulatory_care_note"},
                                            {NoteType::history_and_physical, "history_and_physical"},
                                            {NoteType::patient_assessment, "patient_assessment"}}};

constexpr std::pair<ViolationKind, std::string_view> kViolationNames[] = {
    {ViolationKind::NegativeAge, "NegativeAge"},
    {ViolationKind::NonPositiveHeight, "NonPositiveHeight"},
    {ViolationKind::NonPositiveWeight, "NonPositiveWeight"},
    {ViolationKind::NonPositivePriorWeight, "NonPositivePriorWeight"},
    {ViolationKind::NonPositiveBmi, "NonPositiveBmi"},
    {ViolationKind::BmiInconsistent, "BmiInconsistent"},
    {ViolationKind::StageOutOfRange, "StageOutOfRange"},
    {ViolationKind::NegativeLab, "NegativeLab"},
    {ViolationKind::NonPositiveSma, "NonPositiveSma"},
    {ViolationKind::NonPositiveSmi, "NonPositiveSmi"},
    {ViolationKind::EcogOutOfRange, "EcogOutOfRange"},
    {ViolationKind::EmptyNotesBundle, "EmptyNotesBundle"},
    {ViolationKind::EmptyNoteText, "EmptyNoteText"},
};

std::optional<double> opt_number(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_number()) throw std::invalid_argument(std::string("field '") + key + "' must be a number");
  return it->get<double>();
}

std::optional<int> opt_int(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_number_integer()) throw std::invalid_argument(std::string("field '") + key + "' must be an integer");
  return it->get<int>();
}

std::optional<std::string> opt_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw std::invalid_argument(std::string("field '") + key + "' must be a string");
  return it->get<std::string>();
}

template <typename T>
void put(ordered_json& j, const char* key, const std::optional<T>& v) {
  if (v) j[key] = *v;
}

}  // namespace

std::string_view to_string(Sex v) { return kSex.name(v); }
std::string_view to_string(RaceEthnicity v) { return kRace.name(v); }
std::string_view to_string(FoodIntake v) { return kIntake.name(v); }
std::string_view to_string(BiochemFlag v) { return kFlag.name(v); }
std::string_view to_string(CachexiaStatus v) { return kStatus.name(v); }
std::string_view to_string(NoteType v) { return kNoteType.name(v); }
Sex parse_sex(std::string_view s) { return kSex.parse(s, "sex"); }
RaceEthnicity parse_race_ethnicity(std::string_view s) { return kRace.parse(s, "race_ethnicity"); }
FoodIntake parse_food_intake(std::string_view s) { return kIntake.parse(s, "food_intake"); }
BiochemFlag parse_biochem_flag(std::string_view s) { return kFlag.parse(s, "biochem flag"); }
CachexiaStatus parse_cachexia_status(std::string_view s) { return kStatus.parse(s, "cachexia status"); }
NoteType parse_note_type(std::string_view s) { return kNoteType.parse(s, "note_type"); }

std::string_view to_string(ViolationKind v) {
  for (const auto& [k, s] : kViolationNames)
    if (k == v) return s;
  return "?";
}

std::optional<double> PatientRecord::weight_loss_pct_6mo() const {
  if (!weight_kg || !prior_weight_kg_6mo || *prior_weight_kg_6mo <= 0.0) return std::nullopt;
  return 100.0 * (*prior_weight_kg_6mo - *weight_kg) / *prior_weight_kg_6mo;
}

ModalityMask modality_mask(const PatientRecord& r) {
  ModalityMask m;
  m.has_clinical = true;
  m.has_sm = r.sm.sma_cm2.has_value() || r.sm.smi_precomputed.has_value();
  m.has_labs = r.labs.any();
  m.has_notes = r.notes.has_value() && !r.notes->notes.empty();
  m.has_image = r.image_ref.has_value();
  return m;
}

std::vector<Violation> validate_record(const PatientRecord& r) {
  std::vector<Violation> out;
  auto add = [&](ViolationKind k, Severity s, std::string d) { out.push_back({k, s, std::move(d)}); };

  if (r.age_years && *r.age_years < 0) add(ViolationKind::NegativeAge, Severity::error, "age < 0");
  if (r.height_m && *r.height_m <= 0) add(ViolationKind::NonPositiveHeight, Severity::error, "height_m <= 0");
  if (r.weight_kg && *r.weight_kg <= 0) add(ViolationKind::NonPositiveWeight, Severity::error, "weight_kg <= 0");
  if (r.prior_weight_kg_6mo && *r.prior_weight_kg_6mo <= 0)
    add(ViolationKind::NonPositivePriorWeight, Severity::error, "prior_weight_kg_6mo <= 0");
  if (r.bmi && *r.bmi <= 0) add(ViolationKind::NonPositiveBmi, Severity::error, "bmi <= 0");
  if (r.bmi && r.height_m && r.weight_kg && *r.height_m > 0) {
    double implied = *r.weight_kg / (*r.height_m * *r.height_m);
    if (std::abs(implied - *r.bmi) > 0.5)
      add(ViolationKind::BmiInconsistent, Severity::warning,
          "bmi " + std::to_string(*r.bmi) + " vs implied " + std::to_string(implied));
  }
  if (r.tnm_stage_code && *r.tnm_stage_code != -1 && (*r.tnm_stage_code < 1 || *r.tnm_stage_code > 9))
    add(ViolationKind::StageOutOfRange, Severity::error, "tnm_stage_code " + std::to_string(*r.tnm_stage_code));
  const std::pair<const char*, const std::optional<double>*> labs[] = {
      {"albumin_g_dl", &r.labs.albumin_g_dl},   {"neutrophil_abs_k_ul", &r.labs.neutrophil_abs_k_ul},
      {"lymphocyte_abs_k_ul", &r.labs.lymphocyte_abs_k_ul}, {"bun_mg_dl", &r.labs.bun_mg_dl},
      {"creatinine_mg_dl", &r.labs.creatinine_mg_dl}};
  for (const auto& [name, v] : labs)
    if (*v && **v < 0) add(ViolationKind::NegativeLab, Severity::error, std::string(name) + " < 0");
  if (r.sm.sma_cm2 && *r.sm.sma_cm2 <= 0) add(ViolationKind::NonPositiveSma, Severity::error, "sma_cm2 <= 0");
  if (r.sm.smi_precomputed && *r.sm.smi_precomputed <= 0)
    add(ViolationKind::NonPositiveSmi, Severity::error, "smi_precomputed <= 0");
  if (r.ecog && (*r.ecog < 0 || *r.ecog > 5)) add(ViolationKind::EcogOutOfRange, Severity::error, "ecog outside 0..5");
  if (r.notes) {
    if (r.notes->notes.empty()) add(ViolationKind::EmptyNotesBundle, Severity::warning, "notes bundle present but empty");
    for (std::size_t i = 0; i < r.notes->notes.size(); ++i)
      if (r.notes->notes[i].text.empty())
        add(ViolationKind::EmptyNoteText, Severity::error, "note " + std::to_string(i) + " has empty text");
  }
  return out;
}

PatientRecord record_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("record must be a JSON object");
  PatientRecord r;
  auto id = opt_string(j, "patient_id");
  if (!id || id->empty()) throw std::invalid_argument("missing patient_id");
  r.patient_id = *id;
  r.age_years = opt_number(j, "age_years");
  if (auto s = opt_string(j, "sex")) r.sex = parse_sex(*s);
  if (auto s = opt_string(j, "race_ethnicity")) r.race_ethnicity = parse_race_ethnicity(*s);
  r.height_m = opt_number(j, "height_m");
  r.weight_kg = opt_number(j, "weight_kg");
  if (auto lbs = opt_number(j, "weight_lbs")) {
    double converted = *lbs * kKgPerLb;
    if (r.weight_kg && std::abs(*r.weight_kg - converted) > 0.1)
      throw Error(Errc::UnitConflict, "weight_kg and weight_lbs disagree for " + r.patient_id);
    if (!r.weight_kg) r.weight_kg = converted;
  }
  r.prior_weight_kg_6mo = opt_number(j, "prior_weight_kg_6mo");
  r.bmi = opt_number(j, "bmi");
  r.tnm_stage_code = opt_int(j, "tnm_stage_code");
  if (r.tnm_stage_code == -1) r.tnm_stage_code.reset();

  if (auto it = j.find("labs"); it != j.end() && !it->is_null()) {
    r.labs.albumin_g_dl = opt_number(*it, "albumin_g_dl");
    r.labs.neutrophil_abs_k_ul = opt_number(*it, "neutrophil_abs_k_ul");
    r.labs.lymphocyte_abs_k_ul = opt_number(*it, "lymphocyte_abs_k_ul");
    r.labs.bun_mg_dl = opt_number(*it, "bun_mg_dl");
    r.labs.creatinine_mg_dl = opt_number(*it, "creatinine_mg_dl");
  }
  if (auto it = j.find("sm"); it != j.end() && !it->is_null()) {
    r.sm.sma_cm2 = opt_number(*it, "sma_cm2");
    r.sm.sm_hu_mean = opt_number(*it, "sm_hu_mean");
    r.sm.smi_precomputed = opt_number(*it, "smi_precomputed");
  }
  if (auto it = j.find("notes"); it != j.end() && !it->is_null()) {
    const json& nj = it->is_object() ? it->at("notes") : *it;
    if (!nj.is_array()) throw std::invalid_argument("notes must be an array");
    NotesBundle bundle;
    for (const auto& n : nj) {
      ClinicalNote note;
      note.note_type = parse_note_type(n.at("note_type").get<std::string>());
      note.text = n.at("text").get<std::string>();
      note.date = opt_string(n, "date");
      bundle.notes.push_back(std::move(note));
    }
    r.notes = std::move(bundle);
  }
  if (auto it = j.find("image_ref"); it != j.end() && !it->is_null()) {
    ImageRef ref;
    ref.series_id = it->at("series_id").get<std::string>();
    ref.slices = it->value("slices", std::vector<std::string>{});
    r.image_ref = std::move(ref);
  }
  r.ecog = opt_int(j, "ecog");
  if (auto s = opt_string(j, "food_intake")) r.food_intake = parse_food_intake(*s);
  if (auto it = j.find("biochem_flags"); it != j.end() && !it->is_null()) {
    std::set<BiochemFlag> flags;
    for (const auto& f : *it) flags.insert(parse_biochem_flag(f.get<std::string>()));
    r.biochem_flags = std::move(flags);
  }
  if (auto s = opt_string(j, "gold_label")) r.gold_label = parse_cachexia_status(*s);
  return r;
}

ordered_json record_to_json(const PatientRecord& r) {
  ordered_json j;
  j["patient_id"] = r.patient_id;
  put(j, "age_years", r.age_years);
  if (r.sex) j["sex"] = to_string(*r.sex);
  if (r.race_ethnicity) j["race_ethnicity"] = to_string(*r.race_ethnicity);
  put(j, "height_m", r.height_m);
  put(j, "weight_kg", r.weight_kg);
  put(j, "prior_weight_kg_6mo", r.prior_weight_kg_6mo);
  put(j, "bmi", r.bmi);
  put(j, "tnm_stage_code", r.tnm_stage_code);
  if (r.labs.any()) {
    ordered_json l = ordered_json::object();
    put(l, "albumin_g_dl", r.labs.albumin_g_dl);
    put(l, "neutrophil_abs_k_ul", r.labs.neutrophil_abs_k_ul);
    put(l, "lymphocyte_abs_k_ul", r.labs.lymphocyte_abs_k_ul);
    put(l, "bun_mg_dl", r.labs.bun_mg_dl);
    put(l, "creatinine_mg_dl", r.labs.creatinine_mg_dl);
    j["labs"] = std::move(l);
  }
  if (r.sm.sma_cm2 || r.sm.sm_hu_mean || r.sm.smi_precomputed) {
    ordered_json s = ordered_json::object();
    put(s, "sma_cm2", r.sm.sma_cm2);
    put(s, "sm_hu_mean", r.sm.sm_hu_mean);
    put(s, "smi_precomputed", r.sm.smi_precomputed);
    j["sm"] = std::move(s);
  }
  if (r.notes) {
    ordered_json arr = ordered_json::array();
    for (const auto& n : r.notes->notes) {
      ordered_json nj;
      nj["note_type"] = to_string(n.note_type);
      nj["text"] = n.text;
      if (n.date) nj["date"] = *n.date;
      arr.push_back(std::move(nj));
    }
    j["notes"] = std::move(arr);
  }
  if (r.image_ref) j["image_ref"] = ordered_json{{"series_id", r.image_ref->series_id}, {"slices", r.image_ref->slices}};
  put(j, "ecog", r.ecog);
  if (r.food_intake) j["food_intake"] = to_string(*r.food_intake);
  if (r.biochem_flags) {
    ordered_json arr = ordered_json::array();
    for (auto f : *r.biochem_flags) arr.push_back(to_string(f));
    j["biochem_flags"] = std::move(arr);
  }
  if (r.gold_label) j["gold_label"] = to_string(*r.gold_label);
  return j;
}

Cohort parse_cohort(std::istream& in) {
  Cohort cohort;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    PatientRecord r;
    try {
      r = record_from_json(json::parse(line));
    } catch (const Error& e) {
      if (e.code() == Errc::UnitConflict)
        throw Error(Errc::UnitConflict, "line " + std::to_string(lineno) + ": " + e.what());
      throw;
    } catch (const std::exception& e) {
      throw Error(Errc::MalformedLine, "line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!seen.insert(r.patient_id).second)
      throw Error(Errc::DuplicatePatientId, "line " + std::to_string(lineno) + ": " + r.patient_id);
    cohort.push_back(std::move(r));
  }
  return cohort;
}

Cohort load_cohort(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open cohort file " + path.string());
  auto cohort = parse_cohort(in);
  spdlog::debug("loaded {} records from {}", cohort.size(), path.string());
  return cohort;
}

std::string serialize_cohort(const Cohort& cohort) {
  std::string out;
  for (const auto& r : cohort) {
    out += record_to_json(r).dump();
    out.push_back('\n');
  }
  return out;
}

void save_cohort(const Cohort& cohort, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  out << serialize_cohort(cohort);
}

}  // namespace cachexia
