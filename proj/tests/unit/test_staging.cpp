#include "support.hpp"

#include "cachexia/staging.hpp"
#include "oracles.hpp"

using namespace cachexia;

namespace {

constexpr CachexiaStatus C = CachexiaStatus::cachectic;
constexpr CachexiaStatus N = CachexiaStatus::non_cachectic;

CachexiaStatus two_stage_oracle(double loss, double bmi) { return oracle::cachectic_two_stage(loss, bmi) ? C : N; }

PatientRecord with_loss(double loss_pct, double bmi) {
  PatientRecord r;
  r.patient_id = "T";
  r.height_m = 1.0;
  r.weight_kg = bmi;
  r.prior_weight_kg_6mo = bmi / (1.0 - loss_pct / 100.0);
  return r;
}

}  // namespace

TEST_SUITE("staging") {
  TEST_CASE("two-stage examples") {
    CHECK(stage_two(6.0, 25.0) == C);
    CHECK(stage_two(3.0, 19.0) == C);
    CHECK(stage_two(5.0, 25.0) == N);
    CHECK_ERRC(stage_two(std::nullopt, 25.0), Errc::MissingInput);
    CHECK_ERRC(stage_two(6.0, std::nullopt), Errc::MissingInput);
  }

  TEST_CASE("two-stage truth table with strict inequalities") {
    for (double loss : {-1.0, 0.0, 2.0, 2.01, 5.0, 5.01, 10.0})
      for (double bmi : {18.0, 19.99, 20.0, 25.0}) {
        CAPTURE(loss);
        CAPTURE(bmi);
        CHECK(stage_two(loss, bmi) == two_stage_oracle(loss, bmi));
      }
  }

  TEST_CASE("two-stage is monotone in weight loss") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> bmi(14.0, 40.0), loss(-5.0, 20.0);
    for (int i = 0; i < 500; ++i) {
      const double b = bmi(rng), l1 = loss(rng), l2 = l1 + std::abs(loss(rng));
      if (stage_two(l1, b) == C) CHECK(stage_two(l2, b) == C);
    }
  }

  TEST_CASE("four-stage default table") {
    const auto t = FourStageRuleTable::defaults();
    FourStageInputs refractory{std::set{BiochemFlag::hypoalbuminemia}, FoodIntake::decreased, 7.0, 3};
    CHECK(stage_four(refractory, t) == FourStage::refractory);

    FourStageInputs none{std::set<BiochemFlag>{}, FoodIntake::normal, 0.0, 0};
    CHECK(stage_four(none, t) == FourStage::non_cachectic);

    FourStageInputs missing{std::set<BiochemFlag>{}, FoodIntake::normal, std::nullopt, std::nullopt};
    CHECK_ERRC(stage_four(missing, t), Errc::InsufficientInformation);

    FourStageInputs cachectic{std::set<BiochemFlag>{}, FoodIntake::decreased, 6.0, 1};
    CHECK(stage_four(cachectic, t) == FourStage::cachectic);

    // Loss above 5 alone is not enough for cachectic without a flag or reduced intake.
    FourStageInputs loss_only{std::set<BiochemFlag>{}, FoodIntake::normal, 6.0, 1};
    CHECK(stage_four(loss_only, t) == FourStage::non_cachectic);

    FourStageInputs moderate{std::set<BiochemFlag>{}, FoodIntake::normal, 5.0, 0};
    CHECK(stage_four(moderate, t) == FourStage::pre_cachectic);
    FourStageInputs zero_loss{std::set<BiochemFlag>{}, FoodIntake::normal, 0.0, 0};
    CHECK(stage_four(zero_loss, t) == FourStage::non_cachectic);
  }

  TEST_CASE("assigned non-default stages carry a trace") {
    std::vector<std::string> trace;
    FourStageInputs in{std::set{BiochemFlag::anemia}, FoodIntake::normal, 1.0, 0};
    CHECK(stage_four(in, FourStageRuleTable::defaults(), &trace) == FourStage::pre_cachectic);
    CHECK_FALSE(trace.empty());
  }

  TEST_CASE("assign_stage fallback order") {
    StagingConfig cfg;
    PatientRecord full = with_loss(7.0, 25.0);
    full.ecog = 3;
    full.food_intake = FoodIntake::decreased;
    full.biochem_flags = std::set<BiochemFlag>{};
    auto a = assign_stage(full, cfg);
    CHECK(a.system_used == StagingSystem::four_stage);
    CHECK(a.four_stage == FourStage::refractory);
    CHECK(a.binary == C);

    auto b = assign_stage(with_loss(7.0, 25.0), cfg);
    CHECK(b.system_used == StagingSystem::two_stage);
    CHECK(b.two_stage == C);
    CHECK_FALSE(b.four_stage.has_value());

    PatientRecord bare;
    bare.patient_id = "bare";
    CHECK_ERRC(assign_stage(bare, cfg), Errc::Unstageable);
    bare.gold_label = N;
    auto g = assign_stage(bare, cfg);
    CHECK(g.system_used == StagingSystem::gold_label);
    CHECK(g.binary == N);
  }

  TEST_CASE("four-stage is never used with a required input absent") {
    StagingConfig cfg;
    PatientRecord base = with_loss(7.0, 25.0);
    base.ecog = 1;
    base.food_intake = FoodIntake::normal;
    base.biochem_flags = std::set{BiochemFlag::elevated_crp};
    CHECK(assign_stage(base, cfg).system_used == StagingSystem::four_stage);
    for (int drop = 0; drop < 3; ++drop) {
      PatientRecord r = base;
      if (drop == 0) r.ecog.reset();
      if (drop == 1) r.food_intake.reset();
      if (drop == 2) r.biochem_flags.reset();
      CHECK(assign_stage(r, cfg).system_used == StagingSystem::two_stage);
    }
  }

  TEST_CASE("albumin derives hypoalbuminemia") {
    StagingConfig cfg;
    PatientRecord r;
    r.labs.albumin_g_dl = 3.4;
    auto flags = derive_biochem_flags(r, cfg);
    REQUIRE(flags);
    CHECK(flags->count(BiochemFlag::hypoalbuminemia) == 1);
    r.labs.albumin_g_dl = 3.5;
    CHECK(derive_biochem_flags(r, cfg)->empty());
    r.labs.albumin_g_dl.reset();
    CHECK_FALSE(derive_biochem_flags(r, cfg).has_value());
  }

  TEST_CASE("collapse is total and idempotent") {
    CHECK(collapse_binary(FourStage::pre_cachectic) == N);
    CHECK(collapse_binary(FourStage::non_cachectic) == N);
    CHECK(collapse_binary(FourStage::refractory) == C);
    CHECK(collapse_binary(FourStage::cachectic) == C);
    for (auto s : {C, N}) CHECK(collapse_binary(collapse_binary(s)) == collapse_binary(s));
  }

  TEST_CASE("rule table round-trips through json") {
    const auto t = FourStageRuleTable::defaults();
    const auto back = FourStageRuleTable::from_json(nlohmann::json::parse(t.to_json().dump()));
    CHECK(back.to_json() == t.to_json());
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> loss(-2.0, 12.0);
    std::uniform_int_distribution<int> ecog(0, 5), bit(0, 1);
    for (int i = 0; i < 300; ++i) {
      std::set<BiochemFlag> flags;
      if (bit(rng)) flags.insert(BiochemFlag::anemia);
      FourStageInputs in{flags, bit(rng) ? FoodIntake::decreased : FoodIntake::normal, loss(rng), ecog(rng)};
      CHECK(stage_four(in, back) == stage_four(in, t));
    }
  }
}
