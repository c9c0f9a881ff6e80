#pragma once

#include <optional>

#include "cachexia/cohort.hpp"

namespace cachexia {

/// Value written in place of an absent non-negative biomarker at encoding boundaries.
inline constexpr double kMissingSentinel = -1.0;

using Measure = std::optional<double>;

// Each ratio is absent when any input is absent or its denominator is not positive.
// A zero denominator additionally logs a warning.
Measure compute_nlr(Measure neutrophil_k_ul, Measure lymphocyte_k_ul);
Measure compute_ucr(Measure bun_mg_dl, Measure creatinine_mg_dl);

/// SMA / height^2 in cm^2/m^2. Falls back to `precomputed` when SMA or height is unusable.
Measure compute_smi(Measure sma_cm2, Measure height_m, Measure precomputed = std::nullopt);

/// Cachexia index: SMI * albumin / NLR.
Measure compute_cxi(Measure smi, Measure albumin_g_dl, Measure nlr);

/// Modified cachexia index: albumin / (NLR * UCR).
Measure compute_mcxi(Measure albumin_g_dl, Measure nlr, Measure ucr);

Measure compute_bmi(Measure weight_kg, Measure height_m);

/// Panel rendered for model input: absent non-negative fields become -1.
/// SM HU can be legitimately negative, so it carries a presence flag instead.
struct SentinelView {
  double nlr, ucr, cxi, mcxi, smi, bmi;
  double sm_hu_mean;  // 0 when absent
  bool sm_hu_present;
};

struct BiomarkerPanel {
  Measure nlr, ucr, cxi, mcxi, smi, bmi, sm_hu_mean;

  SentinelView sentinel_view() const;
  bool operator==(const BiomarkerPanel&) const = default;
};

inline double sentinel(Measure m) { return m ? *m : kMissingSentinel; }

BiomarkerPanel derive_panel(const PatientRecord& record);

}  // namespace cachexia
