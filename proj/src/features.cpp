#include "cachexia/features.hpp"

#include <fmt/format.h>
#include <omp.h>

#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cachexia/csv.hpp"
#include "cachexia/error.hpp"
#include "cachexia/hashing.hpp"

namespace cachexia {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

struct Accum {
  double sum = 0.0;
  std::size_t n = 0;
  void add(double v) {
    sum += v;
    ++n;
  }
  std::optional<double> mean() const { return n ? std::optional<double>(sum / static_cast<double>(n)) : std::nullopt; }
};

constexpr std::array<std::string_view, 19> kTextKeys = {
    "age",         "sex",          "race_ethnicity",      "height_m",           "weight_kg",
    "bmi",         "tnm_stage",    "sma_cm2",             "smi",                "sm_hu_mean",
    "albumin_g_dl", "neutrophil_abs_k_ul", "lymphocyte_abs_k_ul", "bun_mg_dl", "creatinine_mg_dl",
    "nlr",         "ucr",          "cxi",                 "mcxi"};

std::string text_value(std::optional<double> v) {
  if (!v) return "missing";
  return csv::format_number(std::round(*v * 100.0) / 100.0);
}

std::string_view race_text(RaceEthnicity r) {
  switch (r) {
    case RaceEthnicity::non_hispanic_white: return "non-hispanic white";
    case RaceEthnicity::hispanic_latinx: return "hispanic/latinx";
    case RaceEthnicity::non_hispanic_black: return "non-hispanic black";
    case RaceEthnicity::other: return "other";
  }
  return "other";
}

ColumnKind parse_kind(std::string_view s) {
  if (s == "numeric") return ColumnKind::numeric;
  if (s == "binary") return ColumnKind::binary;
  if (s == "sentinel_numeric") return ColumnKind::sentinel_numeric;
  if (s == "presence_flag") return ColumnKind::presence_flag;
  throw Error(Errc::SchemaMismatch, fmt::format("unknown column kind '{}'", s));
}

}  // namespace

std::optional<double> ImputationModel::weight_for(std::optional<Sex> sex, std::optional<RaceEthnicity> race) const {
  if (sex && race) {
    auto it = strata.find({*sex, *race});
    if (it != strata.end() && it->second.weight_kg) return it->second.weight_kg;
  }
  return global_weight_kg;
}

std::optional<double> ImputationModel::height_for(std::optional<Sex> sex, std::optional<RaceEthnicity> race) const {
  if (sex && race) {
    auto it = strata.find({*sex, *race});
    if (it != strata.end() && it->second.height_m) return it->second.height_m;
  }
  return global_height_m;
}

ordered_json ImputationModel::to_json() const {
  ordered_json j;
  j["age_mean"] = age_mean ? ordered_json(*age_mean) : ordered_json(nullptr);
  j["global_weight_kg"] = global_weight_kg ? ordered_json(*global_weight_kg) : ordered_json(nullptr);
  j["global_height_m"] = global_height_m ? ordered_json(*global_height_m) : ordered_json(nullptr);
  j["strata"] = ordered_json::array();
  for (const auto& [key, m] : strata) {
    j["strata"].push_back({{"sex", to_string(key.first)},
                           {"race_ethnicity", to_string(key.second)},
                           {"weight_kg", m.weight_kg ? ordered_json(*m.weight_kg) : ordered_json(nullptr)},
                           {"height_m", m.height_m ? ordered_json(*m.height_m) : ordered_json(nullptr)}});
  }
  return j;
}

ImputationModel fit_imputer(std::span<const PatientRecord> training, bool require_age) {
  Accum age, weight, height;
  std::map<std::pair<Sex, RaceEthnicity>, std::pair<Accum, Accum>> strata;
  for (const auto& r : training) {
    if (r.age_years) age.add(*r.age_years);
    if (r.weight_kg) weight.add(*r.weight_kg);
    if (r.height_m) height.add(*r.height_m);
    if (r.sex && r.race_ethnicity) {
      auto& [w, h] = strata[{*r.sex, *r.race_ethnicity}];
      if (r.weight_kg) w.add(*r.weight_kg);
      if (r.height_m) h.add(*r.height_m);
    }
  }
  if (!age.n && require_age) throw Error(Errc::EmptyCohort, "no observed ages to fit the imputer");
  ImputationModel m;
  m.age_mean = age.mean();
  m.global_weight_kg = weight.mean();
  m.global_height_m = height.mean();
  for (const auto& [key, acc] : strata) m.strata[key] = StratumMeans{acc.first.mean(), acc.second.mean()};
  return m;
}

PatientRecord impute(const PatientRecord& record, const ImputationModel& model) {
  PatientRecord r = record;
  if (!r.age_years) r.age_years = model.age_mean;
  if (!r.weight_kg) r.weight_kg = model.weight_for(r.sex, r.race_ethnicity);
  if (!r.height_m) r.height_m = model.height_for(r.sex, r.race_ethnicity);
  if (!r.tnm_stage_code) r.tnm_stage_code = -1;
  return r;
}

std::string_view to_string(ColumnKind k) {
  switch (k) {
    case ColumnKind::numeric: return "numeric";
    case ColumnKind::binary: return "binary";
    case ColumnKind::sentinel_numeric: return "sentinel_numeric";
    case ColumnKind::presence_flag: return "presence_flag";
  }
  return "?";
}

SchemaConfig SchemaConfig::parse(std::string_view modalities) {
  SchemaConfig cfg{false, false, false, false};
  std::string item;
  std::istringstream in{std::string(modalities)};
  while (std::getline(in, item, ',')) {
    if (item == "clinical") cfg.clinical = true;
    else if (item == "sm") cfg.sm = true;
    else if (item == "labs") cfg.labs = true;
    else if (item == "notes") cfg.notes = true;
    else if (!item.empty()) throw Error(Errc::InvalidConfig, "unknown modality '" + item + "'");
  }
  return cfg;
}

std::string SchemaConfig::to_string() const {
  std::vector<std::string> parts;
  if (clinical) parts.emplace_back("clinical");
  if (sm) parts.emplace_back("sm");
  if (labs) parts.emplace_back("labs");
  if (notes) parts.emplace_back("notes");
  return fmt::format("{}", fmt::join(parts, ","));
}

std::vector<std::string> FeatureSchema::names() const {
  std::vector<std::string> out;
  for (const auto& c : columns) out.push_back(c.name);
  return out;
}

std::string FeatureSchema::fingerprint() const {
  std::string buf;
  for (const auto& c : columns) buf += c.name + ":" + std::string(to_string(c.kind)) + ";";
  return sha256_hex(buf).substr(0, 16);
}

FeatureSchema build_schema(const SchemaConfig& cfg, const QuestionBattery& battery) {
  using K = ColumnKind;
  FeatureSchema s;
  auto add = [&](std::string name, K kind) { s.columns.push_back(Column{std::move(name), kind}); };
  if (cfg.clinical) {
    add("age", K::sentinel_numeric);
    add("weight_kg", K::sentinel_numeric);
    add("height_m", K::sentinel_numeric);
    add("bmi", K::sentinel_numeric);
    add("sex_male", K::binary);
    for (auto r : kAllRaces) add("race_" + std::string(to_string(r)), K::binary);
    add("tnm_stage_code", K::sentinel_numeric);
  }
  if (cfg.sm) {
    add("sma_cm2", K::sentinel_numeric);
    add("smi", K::sentinel_numeric);
    add("sm_hu_mean", K::numeric);
    add("sm_hu_present", K::presence_flag);
  }
  if (cfg.labs) {
    for (const char* n : {"albumin_g_dl", "neutrophil_abs_k_ul", "lymphocyte_abs_k_ul", "bun_mg_dl", "creatinine_mg_dl",
                          "nlr", "ucr", "cxi", "mcxi"})
      add(n, K::sentinel_numeric);
  }
  if (cfg.notes) {
    for (const auto& q : battery.questions) add("q_" + q.id, K::sentinel_numeric);
  }
  return s;
}

FeatureVector encode_features(const PatientRecord& r, const BiomarkerPanel& panel,
                              const std::optional<std::vector<int>>& notes_answers, const SchemaConfig& cfg,
                              const QuestionBattery& battery) {
  FeatureVector fv;
  auto& v = fv.values;
  auto sv = panel.sentinel_view();
  if (cfg.clinical) {
    v.push_back(sentinel(r.age_years));
    v.push_back(sentinel(r.weight_kg));
    v.push_back(sentinel(r.height_m));
    v.push_back(sv.bmi);
    v.push_back(r.sex == Sex::male ? 1.0 : 0.0);
    for (auto race : kAllRaces) v.push_back(r.race_ethnicity == race ? 1.0 : 0.0);
    v.push_back(r.tnm_stage_code ? static_cast<double>(*r.tnm_stage_code) : kMissingSentinel);
  }
  if (cfg.sm) {
    v.push_back(sentinel(r.sm.sma_cm2));
    v.push_back(sv.smi);
    v.push_back(sv.sm_hu_mean);
    v.push_back(sv.sm_hu_present ? 1.0 : 0.0);
  }
  if (cfg.labs) {
    v.push_back(sentinel(r.labs.albumin_g_dl));
    v.push_back(sentinel(r.labs.neutrophil_abs_k_ul));
    v.push_back(sentinel(r.labs.lymphocyte_abs_k_ul));
    v.push_back(sentinel(r.labs.bun_mg_dl));
    v.push_back(sentinel(r.labs.creatinine_mg_dl));
    v.push_back(sv.nlr);
    v.push_back(sv.ucr);
    v.push_back(sv.cxi);
    v.push_back(sv.mcxi);
  }
  if (cfg.notes) {
    if (notes_answers) {
      if (notes_answers->size() != battery.size())
        throw Error(Errc::SchemaMismatch, fmt::format("{}: {} notes answers for a {}-question battery", r.patient_id,
                                                      notes_answers->size(), battery.size()));
      for (int a : *notes_answers) v.push_back(static_cast<double>(a));
    } else {
      v.insert(v.end(), battery.size(), -1.0);
    }
  }
  return fv;
}

std::span<const std::string_view> tabular_text_keys() { return kTextKeys; }

std::string serialize_tabular_text(const PatientRecord& r, const BiomarkerPanel& p) {
  std::optional<double> stage;
  if (r.tnm_stage_code && *r.tnm_stage_code != -1) stage = *r.tnm_stage_code;
  const std::string values[] = {
      text_value(r.age_years),
      r.sex ? std::string(to_string(*r.sex)) : "missing",
      r.race_ethnicity ? std::string(race_text(*r.race_ethnicity)) : "missing",
      text_value(r.height_m),
      text_value(r.weight_kg),
      text_value(p.bmi),
      text_value(stage),
      text_value(r.sm.sma_cm2),
      text_value(p.smi),
      text_value(p.sm_hu_mean),
      text_value(r.labs.albumin_g_dl),
      text_value(r.labs.neutrophil_abs_k_ul),
      text_value(r.labs.lymphocyte_abs_k_ul),
      text_value(r.labs.bun_mg_dl),
      text_value(r.labs.creatinine_mg_dl),
      text_value(p.nlr),
      text_value(p.ucr),
      text_value(p.cxi),
      text_value(p.mcxi),
  };
  static_assert(std::size(values) == kTextKeys.size());
  std::string out;
  for (std::size_t i = 0; i < kTextKeys.size(); ++i) {
    out += kTextKeys[i];
    out += ": ";
    out += values[i];
    out.push_back('\n');
  }
  return out;
}

FeatureMatrix featurize(const Cohort& imputed, const ExtractionIndex& answers, const SchemaConfig& cfg,
                        const QuestionBattery& battery) {
  FeatureMatrix m;
  m.schema = build_schema(cfg, battery);
  m.ids.resize(imputed.size());
  m.rows.resize(imputed.size());
  const auto n = static_cast<std::ptrdiff_t>(imputed.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      const auto& r = imputed[static_cast<std::size_t>(i)];
      std::optional<std::vector<int>> a;
      if (auto it = answers.find(r.patient_id); it != answers.end()) a = it->second;
      m.ids[i] = r.patient_id;
      m.rows[i] = encode_features(r, derive_panel(r), a, cfg, battery).values;
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return m;
}

void write_feature_csv(const FeatureMatrix& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  if (!m.config_hash.empty()) out << "# config_hash: " << m.config_hash << '\n';
  out << "# schema_fingerprint: " << m.schema.fingerprint() << '\n';
  std::vector<std::string> kinds;
  for (const auto& c : m.schema.columns) kinds.emplace_back(to_string(c.kind));
  out << "# kinds: " << fmt::format("{}", fmt::join(kinds, " ")) << '\n';
  csv::Row header{"patient_id"};
  for (const auto& c : m.schema.columns) header.push_back(c.name);
  csv::write_row(out, header);
  for (std::size_t i = 0; i < m.rows.size(); ++i) {
    csv::Row row{m.ids[i]};
    for (double v : m.rows[i]) row.push_back(csv::format_number(v));
    csv::write_row(out, row);
  }
}

FeatureMatrix read_feature_csv(const std::filesystem::path& path) {
  auto t = csv::read_file(path.string());
  if (t.header.empty() || t.header[0] != "patient_id")
    throw Error(Errc::SchemaMismatch, path.string() + ": first column must be patient_id");
  FeatureMatrix m;
  m.config_hash = t.meta("config_hash").value_or("");
  std::vector<std::string> kinds;
  if (auto k = t.meta("kinds")) {
    std::istringstream in(*k);
    for (std::string s; in >> s;) kinds.push_back(s);
  }
  for (std::size_t c = 1; c < t.header.size(); ++c) {
    ColumnKind kind = kinds.size() == t.header.size() - 1 ? parse_kind(kinds[c - 1]) : ColumnKind::numeric;
    m.schema.columns.push_back(Column{t.header[c], kind});
  }
  for (const auto& row : t.rows) {
    if (row.size() != t.header.size())
      throw Error(Errc::SchemaMismatch, fmt::format("{}: row for {} has {} fields, expected {}", path.string(),
                                                    row.empty() ? "?" : row[0], row.size(), t.header.size()));
    m.ids.push_back(row[0]);
    std::vector<double> values;
    for (std::size_t c = 1; c < row.size(); ++c) values.push_back(std::stod(row[c]));
    m.rows.push_back(std::move(values));
  }
  return m;
}

Standardizer Standardizer::fit(const std::vector<std::vector<double>>& rows, std::span<const std::size_t> subset) {
  Standardizer s;
  if (subset.empty()) return s;
  const std::size_t d = rows[subset.front()].size();
  s.mean.assign(d, 0.0);
  s.scale.assign(d, 1.0);
  for (auto i : subset)
    for (std::size_t c = 0; c < d; ++c) s.mean[c] += rows[i][c];
  for (auto& m : s.mean) m /= static_cast<double>(subset.size());
  std::vector<double> var(d, 0.0);
  for (auto i : subset)
    for (std::size_t c = 0; c < d; ++c) {
      double dv = rows[i][c] - s.mean[c];
      var[c] += dv * dv;
    }
  for (std::size_t c = 0; c < d; ++c) {
    double sd = std::sqrt(var[c] / static_cast<double>(subset.size()));
    s.scale[c] = sd > 1e-12 ? sd : 1.0;
  }
  return s;
}

std::vector<double> Standardizer::transform(std::span<const double> x) const {
  if (x.size() != mean.size())
    throw Error(Errc::DimensionMismatch, fmt::format("standardizer expects {} values, got {}", mean.size(), x.size()));
  std::vector<double> out(x.size());
  for (std::size_t c = 0; c < x.size(); ++c) out[c] = (x[c] - mean[c]) / scale[c];
  return out;
}

ordered_json Standardizer::to_json() const { return ordered_json{{"mean", mean}, {"scale", scale}}; }

Standardizer Standardizer::from_json(const json& j) {
  Standardizer s;
  s.mean = j.at("mean").get<std::vector<double>>();
  s.scale = j.at("scale").get<std::vector<double>>();
  return s;
}

}  // namespace cachexia
