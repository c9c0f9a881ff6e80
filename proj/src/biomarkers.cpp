#include "cachexia/biomarkers.hpp"

#include <spdlog/spdlog.h>

namespace cachexia {
namespace {

Measure safe_ratio(Measure num, Measure den, const char* what) {
  if (!num || !den) return std::nullopt;
  if (*den <= 0.0) {
    spdlog::warn("{}: non-positive denominator {}, treating as missing", what, *den);
    return std::nullopt;
  }
  return *num / *den;
}

}  // namespace

Measure compute_nlr(Measure neutrophil, Measure lymphocyte) { return safe_ratio(neutrophil, lymphocyte, "NLR"); }

Measure compute_ucr(Measure bun, Measure creatinine) { return safe_ratio(bun, creatinine, "UCR"); }

Measure compute_smi(Measure sma, Measure height, Measure precomputed) {
  if (sma && height && *height > 0.0) return *sma / (*height * *height);
  return precomputed;
}

Measure compute_cxi(Measure smi, Measure albumin, Measure nlr) {
  if (!smi || !albumin || !nlr || *nlr <= 0.0) return std::nullopt;
  return *smi * *albumin / *nlr;
}

Measure compute_mcxi(Measure albumin, Measure nlr, Measure ucr) {
  if (!albumin || !nlr || !ucr) return std::nullopt;
  double den = *nlr * *ucr;
  if (den <= 0.0) return std::nullopt;
  return *albumin / den;
}

Measure compute_bmi(Measure weight, Measure height) {
  if (!weight || !height || *height <= 0.0) return std::nullopt;
  return *weight / (*height * *height);
}

SentinelView BiomarkerPanel::sentinel_view() const {
  return SentinelView{sentinel(nlr), sentinel(ucr),  sentinel(cxi),         sentinel(mcxi),
                      sentinel(smi), sentinel(bmi), sm_hu_mean.value_or(0.0), sm_hu_mean.has_value()};
}

BiomarkerPanel derive_panel(const PatientRecord& r) {
  BiomarkerPanel p;
  p.nlr = compute_nlr(r.labs.neutrophil_abs_k_ul, r.labs.lymphocyte_abs_k_ul);
  p.ucr = compute_ucr(r.labs.bun_mg_dl, r.labs.creatinine_mg_dl);
  p.smi = compute_smi(r.sm.sma_cm2, r.height_m, r.sm.smi_precomputed);
  p.cxi = compute_cxi(p.smi, r.labs.albumin_g_dl, p.nlr);
  p.mcxi = compute_mcxi(r.labs.albumin_g_dl, p.nlr, p.ucr);
  p.bmi = compute_bmi(r.weight_kg, r.height_m);
  if (!p.bmi) p.bmi = r.bmi;
  p.sm_hu_mean = r.sm.sm_hu_mean;
  return p;
}

}  // namespace cachexia
