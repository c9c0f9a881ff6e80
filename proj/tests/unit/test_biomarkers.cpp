#include "support.hpp"

#include "cachexia/biomarkers.hpp"

using namespace cachexia;

TEST_SUITE("biomarkers") {
  TEST_CASE("ratio examples") {
    CHECK(*compute_nlr(4.0, 2.0) == 2.0);
    CHECK_FALSE(compute_nlr(4.0, std::nullopt));
    CHECK_FALSE(compute_nlr(4.0, 0.0));
    CHECK(*compute_ucr(20.0, 1.0) == 20.0);
    CHECK_FALSE(compute_ucr(std::nullopt, 1.0));
    CHECK_FALSE(compute_ucr(20.0, 0.0));
  }

  TEST_CASE("smi and composite indices") {
    // 120 / 1.7^2 = 120 / 2.89 = 41.5224913...
    CHECK(*compute_smi(120.0, 1.70) == doctest::Approx(41.522).epsilon(0.001 / 41.522));
    CHECK_FALSE(compute_smi(std::nullopt, 1.70));
    CHECK(*compute_smi(100.0, 1.0) == 100.0);
    CHECK(*compute_smi(std::nullopt, 1.70, 38.0) == 38.0);

    // 41.522 * 4 / 2 = 83.044
    CHECK(*compute_cxi(41.522, 4.0, 2.0) == doctest::Approx(83.044).epsilon(0.002 / 83.044));
    CHECK_FALSE(compute_cxi(41.522, 4.0, std::nullopt));
    CHECK(*compute_cxi(1.0, 1.0, 1.0) == 1.0);

    CHECK(*compute_mcxi(4.0, 2.0, 20.0) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK_FALSE(compute_mcxi(4.0, 2.0, std::nullopt));
    CHECK(*compute_mcxi(1.0, 1.0, 1.0) == 1.0);

    CHECK(*compute_bmi(72.25, 1.7) == doctest::Approx(25.0));
    CHECK_FALSE(compute_bmi(std::nullopt, 1.7));
  }

  TEST_CASE("scale coherence of NLR") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.1, 10.0);
    for (int i = 0; i < 100; ++i) {
      const double n = u(rng), l = u(rng), c = u(rng), alb = u(rng), smi = 10 * u(rng), ucr = u(rng);
      const double a = *compute_nlr(n, l), b = *compute_nlr(c * n, c * l);
      CHECK(test::close_rel(a, b, 1e-12));
      CHECK(test::close_rel(*compute_cxi(smi, alb, a), *compute_cxi(smi, alb, b), 1e-12));
      CHECK(*compute_cxi(smi, alb, a) > 0);
      CHECK(*compute_mcxi(alb, a, ucr) > 0);
    }
  }

  TEST_CASE("derive_panel propagates missing components") {
    PatientRecord full;
    full.height_m = 1.7;
    full.weight_kg = 70;
    full.labs = {4.0, 4.0, 2.0, 20.0, 1.0};
    full.sm.sma_cm2 = 120.0;
    full.sm.sm_hu_mean = -5.0;
    auto p = derive_panel(full);
    CHECK((p.nlr && p.ucr && p.cxi && p.mcxi && p.smi && p.bmi && p.sm_hu_mean));
    CHECK(*p.sm_hu_mean == -5.0);

    PatientRecord nolabs = full;
    nolabs.labs = {};
    auto q = derive_panel(nolabs);
    CHECK_FALSE((q.nlr || q.ucr || q.cxi || q.mcxi));
    auto v = q.sentinel_view();
    CHECK(v.nlr == -1.0);
    CHECK(v.ucr == -1.0);
    CHECK(v.cxi == -1.0);
    CHECK(v.mcxi == -1.0);
    CHECK(v.sm_hu_present);

    // No BUN: CXI survives, mCXI does not.
    PatientRecord nobun = full;
    nobun.labs.bun_mg_dl.reset();
    auto r = derive_panel(nobun);
    CHECK(r.cxi.has_value());
    CHECK_FALSE(r.mcxi.has_value());
  }

  TEST_CASE("bmi falls back to the ingested value") {
    PatientRecord r;
    r.bmi = 22.5;
    CHECK(*derive_panel(r).bmi == 22.5);
  }

  TEST_CASE("sentinel view is -1 exactly where absent") {
    std::mt19937_64 rng(8);
    std::bernoulli_distribution present(0.6);
    std::uniform_real_distribution<double> u(0.1, 5.0);
    for (int i = 0; i < 200; ++i) {
      PatientRecord r;
      auto maybe = [&](double scale) -> std::optional<double> {
        if (present(rng)) return u(rng) * scale;
        return std::nullopt;
      };
      r.height_m = maybe(0.4);
      r.weight_kg = maybe(20);
      r.labs = {maybe(1), maybe(1), maybe(1), maybe(5), maybe(0.3)};
      r.sm.sma_cm2 = maybe(30);
      r.sm.sm_hu_mean = present(rng) ? std::optional<double>(u(rng) - 3.0) : std::nullopt;
      const auto p = derive_panel(r);
      const auto v = p.sentinel_view();
      CHECK((v.nlr == -1.0) == !p.nlr);
      CHECK((v.ucr == -1.0) == !p.ucr);
      CHECK((v.cxi == -1.0) == !p.cxi);
      CHECK((v.mcxi == -1.0) == !p.mcxi);
      CHECK((v.smi == -1.0) == !p.smi);
      CHECK((v.bmi == -1.0) == !p.bmi);
      CHECK(v.sm_hu_present == p.sm_hu_mean.has_value());
      if (p.cxi) CHECK((p.smi && r.labs.albumin_g_dl && p.nlr && *p.nlr > 0));
      if (p.mcxi) CHECK((r.labs.albumin_g_dl && p.nlr && p.ucr));
    }
  }
}
