#include <algorithm>

#include "support.hpp"

#include "cachexia/features.hpp"
#include "cachexia/synth.hpp"

using namespace cachexia;

namespace {

PatientRecord person(std::string id, std::optional<double> age, Sex sex, RaceEthnicity race,
                     std::optional<double> weight_kg, std::optional<double> height_m) {
  PatientRecord r;
  r.patient_id = std::move(id);
  r.age_years = age;
  r.sex = sex;
  r.race_ethnicity = race;
  r.weight_kg = weight_kg;
  r.height_m = height_m;
  return r;
}

std::size_t column_index(const FeatureSchema& s, const std::string& name) {
  auto names = s.names();
  auto it = std::find(names.begin(), names.end(), name);
  REQUIRE(it != names.end());
  return static_cast<std::size_t>(it - names.begin());
}

}  // namespace

TEST_SUITE("features") {
  using enum RaceEthnicity;

  TEST_CASE("imputer means") {
    std::vector<PatientRecord> train{
        person("a", 60, Sex::female, non_hispanic_white, 150 * kKgPerLb, 1.6),
        person("b", 70, Sex::female, non_hispanic_white, 160 * kKgPerLb, std::nullopt),
        person("c", std::nullopt, Sex::male, non_hispanic_white, 80, 1.8),
        person("d", 80, Sex::male, hispanic_latinx, std::nullopt, std::nullopt),
    };
    auto m = fit_imputer(train);
    CHECK(*m.age_mean == doctest::Approx(70.0));
    // (150 + 160) / 2 lb = 155 lb = 70.3068 kg
    CHECK(*m.weight_for(Sex::female, non_hispanic_white) == doctest::Approx(70.307).epsilon(0.001 / 70.307));
    // No heights observed for (male, hispanic): global mean of 1.6 and 1.8.
    CHECK(*m.height_for(Sex::male, hispanic_latinx) == doctest::Approx(1.7));
    CHECK(*m.height_for(Sex::female, non_hispanic_white) == doctest::Approx(1.6));
  }

  TEST_CASE("imputer needs an observed age") {
    std::vector<PatientRecord> none{person("a", std::nullopt, Sex::female, other, 70, 1.6)};
    CHECK_ERRC(fit_imputer(none), Errc::EmptyCohort);
    auto lenient = fit_imputer(none, false);
    CHECK_FALSE(lenient.age_mean.has_value());
    CHECK_FALSE(impute(none[0], lenient).age_years.has_value());
  }

  TEST_CASE("impute fills only demographics") {
    std::vector<PatientRecord> train{person("a", 60, Sex::female, other, 60, 1.6),
                                     person("b", 80, Sex::female, other, 80, 1.7)};
    auto m = fit_imputer(train);

    PatientRecord r = person("x", std::nullopt, Sex::female, other, std::nullopt, std::nullopt);
    r.labs.albumin_g_dl = 3.1;
    auto out = impute(r, m);
    CHECK(*out.age_years == doctest::Approx(70));
    CHECK(*out.weight_kg == doctest::Approx(70));
    CHECK(*out.height_m == doctest::Approx(1.65));
    CHECK(out.tnm_stage_code == -1);
    CHECK(out.labs == r.labs);

    PatientRecord full = person("y", 50, Sex::female, other, 55, 1.55);
    full.tnm_stage_code = 4;
    CHECK(impute(full, m) == full);
  }

  TEST_CASE("no leakage: test records use train means") {
    auto cohort = generate(SynthConfig{}, 5);
    std::vector<PatientRecord> train(cohort.begin(), cohort.begin() + 150);
    auto m = fit_imputer(train);
    double sum = 0;
    int n = 0;
    for (const auto& r : train)
      if (r.age_years) sum += *r.age_years, ++n;
    CHECK(*m.age_mean == doctest::Approx(sum / n));
    PatientRecord test_rec = cohort[200];
    test_rec.age_years.reset();
    CHECK(*impute(test_rec, m).age_years == doctest::Approx(sum / n));
  }

  TEST_CASE("encoding examples") {
    const auto battery = QuestionBattery::defaults();
    const auto all = SchemaConfig::parse("clinical,sm,labs,notes");
    const auto schema = build_schema(all, battery);
    PatientRecord r = person("p", 70, Sex::male, hispanic_latinx, 70, 1.7);
    r.tnm_stage_code = -1;
    const auto v = encode_features(r, derive_panel(r), std::nullopt, all, battery);
    REQUIRE(v.values.size() == schema.size());
    CHECK(v.values[column_index(schema, "sex_male")] == 1.0);
    CHECK(v.values[column_index(schema, "race_hispanic_latinx")] == 1.0);
    CHECK(v.values[column_index(schema, "race_other")] == 0.0);
    for (auto name : {"albumin_g_dl", "neutrophil_abs_k_ul", "lymphocyte_abs_k_ul", "bun_mg_dl", "creatinine_mg_dl",
                      "nlr", "ucr", "cxi", "mcxi"})
      CHECK(v.values[column_index(schema, name)] == -1.0);
    CHECK(v.values[column_index(schema, "sm_hu_present")] == 0.0);
    CHECK(v.values[column_index(schema, "q_fatigue")] == -1.0);

    const auto no_notes = SchemaConfig::parse("clinical,sm,labs");
    CHECK(build_schema(no_notes, battery).size() + 26 == schema.size());

    std::vector<int> wrong(3, 1);
    CHECK_ERRC(encode_features(r, derive_panel(r), wrong, all, battery), Errc::SchemaMismatch);
  }

  TEST_CASE("width is constant and kinds are respected across a cohort") {
    const auto battery = QuestionBattery::defaults();
    const auto cfg = SchemaConfig::parse("clinical,sm,labs,notes");
    const auto schema = build_schema(cfg, battery);
    auto cohort = generate(SynthConfig{}, 2);
    auto m = fit_imputer(cohort);
    for (const auto& raw : cohort) {
      auto r = impute(raw, m);
      std::vector<int> answers(battery.size(), -1);
      answers[0] = 1;
      auto v = encode_features(r, derive_panel(r), answers, cfg, battery);
      REQUIRE(v.values.size() == schema.size());
      for (std::size_t c = 0; c < schema.size(); ++c) {
        const double x = v.values[c];
        switch (schema.columns[c].kind) {
          case ColumnKind::binary:
          case ColumnKind::presence_flag:
            CHECK((x == 0.0 || x == 1.0));
            break;
          case ColumnKind::sentinel_numeric:
            CHECK((x >= 0.0 || x == -1.0));
            break;
          case ColumnKind::numeric:
            break;
        }
      }
    }
  }

  TEST_CASE("featurize matches per-record encoding") {
    const auto battery = QuestionBattery::defaults();
    const auto cfg = SchemaConfig::parse("clinical,sm,labs,notes");
    auto cohort = generate(SynthConfig{}, 4);
    auto m = fit_imputer(cohort);
    Cohort imputed;
    for (const auto& r : cohort) imputed.push_back(impute(r, m));
    ExtractionIndex answers;
    answers[imputed[3].patient_id] = std::vector<int>(battery.size(), 0);
    auto fm = featurize(imputed, answers, cfg, battery);
    REQUIRE(fm.size() == imputed.size());
    for (std::size_t i = 0; i < imputed.size(); ++i) {
      auto it = answers.find(imputed[i].patient_id);
      std::optional<std::vector<int>> a;
      if (it != answers.end()) a = it->second;
      CHECK(fm.rows[i] == encode_features(imputed[i], derive_panel(imputed[i]), a, cfg, battery).values);
      CHECK(fm.ids[i] == imputed[i].patient_id);
    }
  }

  TEST_CASE("tabular text") {
    PatientRecord r;
    r.patient_id = "t";
    r.age_years = 69;
    const auto text = serialize_tabular_text(r, derive_panel(r));
    CHECK(text.find("age: 69\n") != std::string::npos);
    CHECK(text.find("weight_kg: missing") != std::string::npos);
    CHECK(text.find("nlr: missing") != std::string::npos);
    CHECK(text.find("cxi: missing") != std::string::npos);
    CHECK(serialize_tabular_text(r, derive_panel(r)) == text);

    r.sex = Sex::female;
    const auto with_sex = serialize_tabular_text(r, derive_panel(r));
    CHECK(with_sex.find("sex: female") != std::string::npos);

    for (const auto& rec : generate(SynthConfig{}, 1)) {
      const auto t = "\n" + serialize_tabular_text(rec, derive_panel(rec));
      for (auto key : tabular_text_keys()) {
        const std::string needle = "\n" + std::string(key) + ": ";
        const auto first = t.find(needle);
        REQUIRE(first != std::string::npos);
        CHECK(t.find(needle, first + 1) == std::string::npos);
      }
    }
  }

  TEST_CASE("feature csv round trip") {
    test::TempDir dir("features");
    const auto battery = QuestionBattery::defaults();
    const auto cfg = SchemaConfig::parse("clinical,sm,labs");
    auto cohort = generate(SynthConfig{}, 6);
    auto m = fit_imputer(cohort);
    Cohort imputed;
    for (const auto& r : cohort) imputed.push_back(impute(r, m));
    auto fm = featurize(imputed, {}, cfg, battery);
    fm.config_hash = "abc123";
    write_feature_csv(fm, dir / "f.csv");
    auto back = read_feature_csv(dir / "f.csv");
    CHECK(back.schema == fm.schema);
    CHECK(back.ids == fm.ids);
    CHECK(back.rows == fm.rows);
    CHECK(back.config_hash == "abc123");
  }

  TEST_CASE("standardizer uses only its fitting rows") {
    std::vector<std::vector<double>> rows{{1, 5}, {3, 5}, {100, 5}};
    std::vector<std::size_t> subset{0, 1};
    auto s = Standardizer::fit(rows, subset);
    CHECK(s.mean[0] == doctest::Approx(2.0));
    auto t = s.transform(rows[0]);
    CHECK(t[0] == doctest::Approx(-1.0));
    CHECK(t[1] == doctest::Approx(0.0));
    auto back = Standardizer::from_json(nlohmann::json::parse(s.to_json().dump()));
    CHECK(back.transform(rows[2]) == s.transform(rows[2]));
  }

  TEST_CASE("schema fingerprint tracks columns") {
    const auto battery = QuestionBattery::defaults();
    auto a = build_schema(SchemaConfig::parse("clinical,sm"), battery);
    auto b = build_schema(SchemaConfig::parse("clinical,sm,labs"), battery);
    CHECK(a.fingerprint() != b.fingerprint());
    CHECK(a.fingerprint() == build_schema(SchemaConfig::parse("clinical,sm"), battery).fingerprint());
  }
}
