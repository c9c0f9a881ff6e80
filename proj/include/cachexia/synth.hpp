#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "cachexia/cohort.hpp"
#include "cachexia/notes.hpp"

namespace cachexia {

/// How strongly each modality reflects the latent cachexia state.
///
/// Every patient gets an "apparent" state per modality that equals the latent state except for an
/// exactly allocated fraction (1 - reveal) of patients, where it is flipped. Measurements are then
/// drawn around class-specific centres with spread scaled by `noise`; at noise 0 a single-threshold
/// oracle on the modality recovers the apparent state, so its accuracy equals `reveal`.
///
/// With `discordance = ambiguous` the non-revealing patients are instead split exactly in half
/// between the two apparent states and drawn around centres pulled toward the class midpoint
/// (`ambiguous_shift` of the half gap) with spread widened by `ambiguous_spread`. Errors then come
/// from weak or conflicting evidence rather than from confidently wrong measurements.
enum class Discordance { flip, ambiguous };

struct SignalPlan {
  double noise = 1.0;
  double sm_reveal = 0.8;         // SMI and SM HU
  double labs_reveal = 0.85;      // albumin, NLR, UCR
  double notes_reveal = 0.8;      // yes/no answers in the notes
  double severity_reveal = 0.97;  // severity wording of positive mentions, visible only in note text
  double notes_mention_rate = 0.6;  // chance each question is addressed in a patient's notes
  double notes_blur = 0.5;        // at noise 1, P(yes | apparent cachectic) = 1 - notes_blur / 2
  double severity_blur = 0.3;
  Discordance discordance = Discordance::flip;
  double ambiguous_shift = 0.25;
  double ambiguous_spread = 1.0;  // spread multiplier for muted measurements

  /// Ambiguous discordance with modalities that each add evidence the previous ones lack.
  static SignalPlan complementary();

  nlohmann::ordered_json to_json() const;
  static SignalPlan from_json(const nlohmann::json& j);
};

enum class SignalModality { sm, labs, notes, severity };

struct SynthConfig {
  std::size_t n_patients = 236;
  double cachectic_fraction = 152.0 / 236.0;

  double age_mean = 69.05;
  double age_sd = 10.13;
  double weight_kg_mean = 166.95 * kKgPerLb;
  double weight_kg_sd = 37.88 * kKgPerLb;
  double height_m_mean = 1.69;
  double height_m_sd = 0.10;
  double female_fraction = 119.0 / 236.0;
  // non_hispanic_white, hispanic_latinx, non_hispanic_black, other
  std::array<double, 4> race_fractions{176.0 / 236.0, 36.0 / 236.0, 24.0 / 236.0, 0.0};
  // Counts for TNM codes 1..9 followed by missing.
  std::array<double, 10> tnm_weights{15, 27, 26, 1, 17, 16, 29, 71, 13, 21};

  // Lab availability: albumin, neutrophil, lymphocyte, BUN, creatinine.
  std::array<double, 5> lab_rates{216.0 / 236.0, 167.0 / 236.0, 170.0 / 236.0, 221.0 / 236.0, 218.0 / 236.0};
  double site_a_fraction = 131.0 / 236.0;  // CT measurements and image series
  double notes_fraction = 105.0 / 236.0;   // of the whole cohort; drawn from site A
  double four_stage_fraction = 0.6;        // records carrying ECOG, intake and biochemistry
  double prior_weight_missing_fraction = 0.03;
  double staging_agreement = 0.97;         // share whose staging inputs match the latent state

  SignalPlan signal;

  /// Throws Errc::InvalidConfig on fractions outside [0,1] or inconsistent subsets.
  void validate() const;

  nlohmann::ordered_json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
};

SynthConfig load_synth_config(const std::filesystem::path& path);

/// Largest-remainder split of n into parts proportional to `weights`.
std::vector<std::size_t> allocate_counts(std::size_t n, std::span<const double> weights);

/// Accuracy a single-threshold oracle on the modality's primary measurement should reach on
/// patients where the modality is observed.
double expected_oracle_accuracy(const SignalPlan& plan, SignalModality m);

/// Class centres and spreads behind the generated measurements.
namespace synth_model {
inline constexpr double kSmiNon = 50.0, kSmiCachectic = 38.0, kSmiSd = 4.0;
inline constexpr double kHuNon = 40.0, kHuCachectic = 30.0, kHuSd = 5.0;
inline constexpr double kAlbuminNon = 4.0, kAlbuminCachectic = 3.2, kAlbuminSd = 0.3;
inline constexpr double kNlrNon = 2.5, kNlrCachectic = 6.0;
inline constexpr double kUcrNon = 14.0, kUcrCachectic = 24.0, kUcrSd = 3.0;
}  // namespace synth_model

/// Deterministic synthetic cohort with gold labels. Notes use `battery` keywords.
Cohort generate(const SynthConfig& cfg, std::uint64_t seed, const QuestionBattery& battery = QuestionBattery::defaults());

}  // namespace cachexia
