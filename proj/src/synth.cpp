#include "cachexia/synth.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cstdlib>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "cachexia/error.hpp"
#include "cachexia/hashing.hpp"
#include "cachexia/mlp.hpp"

namespace cachexia {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

void require_fraction(double v, const char* name) {
  if (!(v >= 0.0 && v <= 1.0)) throw Error(Errc::InvalidConfig, fmt::format("{} must lie in [0, 1], got {}", name, v));
}

void require_nonnegative(double v, const char* name) {
  if (!(v >= 0.0) || !std::isfinite(v))
    throw Error(Errc::InvalidConfig, fmt::format("{} must be a finite non-negative number, got {}", name, v));
}

std::size_t count_of(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
}

double round_to(double x, int places) {
  const double f = std::pow(10.0, places);
  return std::round(x * f) / f;
}

double phi(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Marks exactly `count` of n positions, chosen by a seeded shuffle.
std::vector<bool> pick(std::size_t n, std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> out(n, false);
  for (std::size_t i = 0; i < std::min(count, n); ++i) out[order[i]] = true;
  return out;
}

// Category per position with exact counts from allocate_counts.
std::vector<std::size_t> assign_categories(std::size_t n, std::span<const double> weights, std::uint64_t seed) {
  auto counts = allocate_counts(n, weights);
  std::vector<std::size_t> cats;
  cats.reserve(n);
  for (std::size_t c = 0; c < counts.size(); ++c) cats.insert(cats.end(), counts[c], c);
  Rng rng(seed);
  std::shuffle(cats.begin(), cats.end(), rng);
  return cats;
}

constexpr std::string_view kSevere[] = {"severe", "marked", "significant"};
constexpr std::string_view kMild[] = {"mild", "slight", "minimal"};
constexpr std::string_view kFiller[] = {"Seen in clinic for follow-up.", "Vital signs reviewed.",
                                        "Plan discussed with the patient and family.", "Labs reviewed today.",
                                        "Will continue current regimen."};
constexpr NoteType kNoteTypes[] = {
    NoteType::nutrition_assessment_form, NoteType::nutrition_diagnosis_comments, NoteType::progress_note,
    NoteType::dietary_assessment,        NoteType::inter_visit_note,             NoteType::ambulatory_care_note,
    NoteType::history_and_physical,      NoteType::patient_assessment};

enum Stream : std::uint64_t {
  kLatent = 1,
  kSex,
  kRace,
  kTnm,
  kSiteA,
  kNotes,
  kLabBase,  // + lab index
  kFourStage = kLabBase + 8,
  kPriorMissing,
  kSmFlip,
  kLabsFlip,
  kNotesFlip,
  kSeverityFlip,
  kStageFlip,
  kPatient,
  kSmSide,
  kLabsSide,
  kNotesSide,
  kSeveritySide,
};

}  // namespace

ordered_json SignalPlan::to_json() const {
  return ordered_json{{"noise", noise},
                      {"sm_reveal", sm_reveal},
                      {"labs_reveal", labs_reveal},
                      {"notes_reveal", notes_reveal},
                      {"severity_reveal", severity_reveal},
                      {"notes_mention_rate", notes_mention_rate},
                      {"notes_blur", notes_blur},
                      {"severity_blur", severity_blur},
                      {"discordance", discordance == Discordance::flip ? "flip" : "ambiguous"},
                      {"ambiguous_shift", ambiguous_shift},
                      {"ambiguous_spread", ambiguous_spread}};
}

SignalPlan SignalPlan::complementary() {
  SignalPlan p;
  p.discordance = Discordance::ambiguous;
  p.sm_reveal = 0.6;
  p.labs_reveal = 0.7;
  p.notes_reveal = 0.85;
  p.severity_reveal = 0.97;
  return p;
}

SignalPlan SignalPlan::from_json(const json& j) {
  SignalPlan p;
  p.noise = j.value("noise", p.noise);
  p.sm_reveal = j.value("sm_reveal", p.sm_reveal);
  p.labs_reveal = j.value("labs_reveal", p.labs_reveal);
  p.notes_reveal = j.value("notes_reveal", p.notes_reveal);
  p.severity_reveal = j.value("severity_reveal", p.severity_reveal);
  p.notes_mention_rate = j.value("notes_mention_rate", p.notes_mention_rate);
  p.notes_blur = j.value("notes_blur", p.notes_blur);
  p.severity_blur = j.value("severity_blur", p.severity_blur);
  const auto mode = j.value("discordance", std::string("flip"));
  if (mode == "flip")
    p.discordance = Discordance::flip;
  else if (mode == "ambiguous")
    p.discordance = Discordance::ambiguous;
  else
    throw Error(Errc::InvalidConfig, "signal.discordance must be flip or ambiguous, got " + mode);
  p.ambiguous_shift = j.value("ambiguous_shift", p.ambiguous_shift);
  p.ambiguous_spread = j.value("ambiguous_spread", p.ambiguous_spread);
  return p;
}

void SynthConfig::validate() const {
  if (n_patients == 0) throw Error(Errc::InvalidConfig, "n_patients must be positive");
  require_fraction(cachectic_fraction, "cachectic_fraction");
  require_fraction(female_fraction, "female_fraction");
  for (double r : lab_rates) require_fraction(r, "lab availability rate");
  require_fraction(site_a_fraction, "site_a_fraction");
  require_fraction(notes_fraction, "notes_fraction");
  if (count_of(notes_fraction, n_patients) > count_of(site_a_fraction, n_patients))
    throw Error(Errc::InvalidConfig, "notes are drawn from site A and cannot outnumber it");
  require_fraction(four_stage_fraction, "four_stage_fraction");
  require_fraction(prior_weight_missing_fraction, "prior_weight_missing_fraction");
  require_fraction(staging_agreement, "staging_agreement");
  require_nonnegative(age_sd, "age_sd");
  require_nonnegative(weight_kg_sd, "weight_kg_sd");
  require_nonnegative(height_m_sd, "height_m_sd");
  if (!(weight_kg_mean > 0.0) || !(height_m_mean > 0.0) || !(age_mean >= 0.0))
    throw Error(Errc::InvalidConfig, "distribution means must be positive");
  for (double w : race_fractions) require_nonnegative(w, "race weight");
  for (double w : tnm_weights) require_nonnegative(w, "tnm weight");
  if (std::accumulate(race_fractions.begin(), race_fractions.end(), 0.0) <= 0.0)
    throw Error(Errc::InvalidConfig, "race weights sum to zero");
  if (std::accumulate(tnm_weights.begin(), tnm_weights.end(), 0.0) <= 0.0)
    throw Error(Errc::InvalidConfig, "tnm weights sum to zero");
  const auto& s = signal;
  require_nonnegative(s.noise, "signal.noise");
  require_fraction(s.sm_reveal, "signal.sm_reveal");
  require_fraction(s.labs_reveal, "signal.labs_reveal");
  require_fraction(s.notes_reveal, "signal.notes_reveal");
  require_fraction(s.severity_reveal, "signal.severity_reveal");
  require_fraction(s.notes_mention_rate, "signal.notes_mention_rate");
  require_fraction(s.notes_blur, "signal.notes_blur");
  require_fraction(s.severity_blur, "signal.severity_blur");
  require_fraction(s.ambiguous_shift, "signal.ambiguous_shift");
  if (!(s.ambiguous_spread >= 0.0)) throw Error(Errc::InvalidConfig, "signal.ambiguous_spread must be non-negative");
}

ordered_json SynthConfig::to_json() const {
  return ordered_json{{"n_patients", n_patients},
                      {"cachectic_fraction", cachectic_fraction},
                      {"age_mean", age_mean},
                      {"age_sd", age_sd},
                      {"weight_kg_mean", weight_kg_mean},
                      {"weight_kg_sd", weight_kg_sd},
                      {"height_m_mean", height_m_mean},
                      {"height_m_sd", height_m_sd},
                      {"female_fraction", female_fraction},
                      {"race_fractions", race_fractions},
                      {"tnm_weights", tnm_weights},
                      {"lab_rates", lab_rates},
                      {"site_a_fraction", site_a_fraction},
                      {"notes_fraction", notes_fraction},
                      {"four_stage_fraction", four_stage_fraction},
                      {"prior_weight_missing_fraction", prior_weight_missing_fraction},
                      {"staging_agreement", staging_agreement},
                      {"signal_plan", signal.to_json()}};
}

SynthConfig SynthConfig::from_json(const json& j) {
  SynthConfig c;
  try {
    c.n_patients = j.value("n_patients", c.n_patients);
    c.cachectic_fraction = j.value("cachectic_fraction", c.cachectic_fraction);
    c.age_mean = j.value("age_mean", c.age_mean);
    c.age_sd = j.value("age_sd", c.age_sd);
    c.weight_kg_mean = j.value("weight_kg_mean", c.weight_kg_mean);
    c.weight_kg_sd = j.value("weight_kg_sd", c.weight_kg_sd);
    c.height_m_mean = j.value("height_m_mean", c.height_m_mean);
    c.height_m_sd = j.value("height_m_sd", c.height_m_sd);
    c.female_fraction = j.value("female_fraction", c.female_fraction);
    c.race_fractions = j.value("race_fractions", c.race_fractions);
    c.tnm_weights = j.value("tnm_weights", c.tnm_weights);
    c.lab_rates = j.value("lab_rates", c.lab_rates);
    c.site_a_fraction = j.value("site_a_fraction", c.site_a_fraction);
    c.notes_fraction = j.value("notes_fraction", c.notes_fraction);
    c.four_stage_fraction = j.value("four_stage_fraction", c.four_stage_fraction);
    c.prior_weight_missing_fraction = j.value("prior_weight_missing_fraction", c.prior_weight_missing_fraction);
    c.staging_agreement = j.value("staging_agreement", c.staging_agreement);
    if (j.contains("signal_plan")) c.signal = SignalPlan::from_json(j.at("signal_plan"));
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidConfig, e.what());
  }
  c.validate();
  return c;
}

SynthConfig load_synth_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, fmt::format("cannot open {}", path.string()));
  try {
    return SynthConfig::from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw Error(Errc::InvalidConfig, fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::vector<std::size_t> allocate_counts(std::size_t n, std::span<const double> weights) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<std::size_t> counts(weights.size(), 0);
  if (total <= 0.0) return counts;
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t used = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    double exact = static_cast<double>(n) * weights[i] / total;
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    used += counts[i];
    remainders.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; used < n; ++r, ++used) ++counts[remainders[r % remainders.size()].second];
  return counts;
}

double expected_oracle_accuracy(const SignalPlan& plan, SignalModality m) {
  using namespace synth_model;
  double reveal = 0.0, half_gap = 0.0, sd = 0.0;
  switch (m) {
    case SignalModality::sm:
      reveal = plan.sm_reveal, half_gap = (kSmiNon - kSmiCachectic) / 2, sd = kSmiSd;
      break;
    case SignalModality::labs:
      reveal = plan.labs_reveal, half_gap = (kAlbuminNon - kAlbuminCachectic) / 2, sd = kAlbuminSd;
      break;
    case SignalModality::notes:
    case SignalModality::severity:
      if (plan.noise != 0.0)
        throw Error(Errc::InvalidConfig, "note-based oracle accuracy is only closed-form at noise 0");
      {
        const double r = m == SignalModality::notes ? plan.notes_reveal : plan.severity_reveal;
        return plan.discordance == Discordance::ambiguous ? r + (1.0 - r) / 2.0 : r;
      }
  }
  if (plan.discordance == Discordance::ambiguous) {
    // The discordant half-and-half split contributes exactly one half either way.
    const double q = plan.noise == 0.0 ? 1.0 : phi(half_gap / (sd * plan.noise));
    return reveal * q + (1.0 - reveal) / 2.0;
  }
  if (plan.noise == 0.0) return reveal;
  const double q = phi(half_gap / (sd * plan.noise));
  return reveal * q + (1.0 - reveal) * (1.0 - q);
}

Cohort generate(const SynthConfig& cfg, std::uint64_t seed, const QuestionBattery& battery) {
  using namespace synth_model;
  cfg.validate();
  const std::size_t n = cfg.n_patients;
  const auto& sp = cfg.signal;
  auto stream = [&](std::uint64_t tag) { return mix_seed(seed, tag); };

  const auto latent = pick(n, count_of(cfg.cachectic_fraction, n), stream(kLatent));
  const auto female = pick(n, count_of(cfg.female_fraction, n), stream(kSex));
  const auto race = assign_categories(n, cfg.race_fractions, stream(kRace));
  const auto tnm = assign_categories(n, cfg.tnm_weights, stream(kTnm));
  const auto site_a = pick(n, count_of(cfg.site_a_fraction, n), stream(kSiteA));

  std::vector<std::size_t> site_a_idx;
  for (std::size_t i = 0; i < n; ++i)
    if (site_a[i]) site_a_idx.push_back(i);
  std::vector<bool> has_notes(n, false);
  {
    auto chosen = pick(site_a_idx.size(), count_of(cfg.notes_fraction, n), stream(kNotes));
    for (std::size_t k = 0; k < site_a_idx.size(); ++k)
      if (chosen[k]) has_notes[site_a_idx[k]] = true;
  }
  std::array<std::vector<bool>, 5> lab_present;
  for (std::size_t l = 0; l < 5; ++l) lab_present[l] = pick(n, count_of(cfg.lab_rates[l], n), stream(kLabBase + l));
  const auto four_stage = pick(n, count_of(cfg.four_stage_fraction, n), stream(kFourStage));
  const auto prior_missing = pick(n, count_of(cfg.prior_weight_missing_fraction, n), stream(kPriorMissing));
  auto flips = [&](double reveal, Stream tag) { return pick(n, count_of(1.0 - reveal, n), stream(tag)); };
  const bool ambiguous = sp.discordance == Discordance::ambiguous;
  // Per modality: the patient's apparent state and whether it is drawn near the midpoint.
  struct Signal {
    std::vector<bool> apparent, muted;
  };
  auto signal = [&](const std::vector<bool>& latent_state, double reveal, Stream flip_tag, Stream side_tag) {
    Signal s{latent_state, std::vector<bool>(n, false)};
    const auto discordant = flips(reveal, flip_tag);
    if (!ambiguous) {
      for (std::size_t i = 0; i < n; ++i)
        if (discordant[i]) s.apparent[i] = !latent_state[i];
      return s;
    }
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < n; ++i)
      if (discordant[i]) idx.push_back(i);
    const auto side = pick(idx.size(), idx.size() / 2, stream(side_tag));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      s.muted[idx[k]] = true;
      if (side[k]) s.apparent[idx[k]] = !latent_state[idx[k]];
    }
    return s;
  };
  const auto sm_sig = signal(latent, sp.sm_reveal, kSmFlip, kSmSide);
  const auto labs_sig = signal(latent, sp.labs_reveal, kLabsFlip, kLabsSide);
  const auto notes_sig = signal(latent, sp.notes_reveal, kNotesFlip, kNotesSide);
  const auto sev_sig = signal(latent, sp.severity_reveal, kSeverityFlip, kSeveritySide);
  const auto stage_flip = flips(cfg.staging_agreement, kStageFlip);
  // Class centre for the apparent state, pulled toward the midpoint for muted patients.
  auto centre = [&](const Signal& s, std::size_t i, double cachectic, double non) {
    const double mid = (cachectic + non) / 2.0;
    const double c = s.apparent[i] ? cachectic : non;
    return s.muted[i] ? mid + sp.ambiguous_shift * (c - mid) : c;
  };
  auto spread = [&](const Signal& s, std::size_t i) { return s.muted[i] ? sp.noise * sp.ambiguous_spread : sp.noise; };
  auto pull = [&](const Signal& s, std::size_t i, double p_own) {
    return s.muted[i] && sp.noise > 0.0 ? 0.5 + sp.ambiguous_shift * (p_own - 0.5) : p_own;
  };

  const double noise = sp.noise;
  const double p_yes_own = std::clamp(1.0 - sp.notes_blur * noise / 2.0, 0.0, 1.0);
  const double p_sev_own = std::clamp(1.0 - sp.severity_blur * noise / 2.0, 0.0, 1.0);
  const int id_width = std::max<int>(4, static_cast<int>(std::to_string(n).size()));

  Cohort cohort;
  cohort.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(mix_seed(stream(kPatient), i));
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const bool y = latent[i];

    PatientRecord r;
    r.patient_id = fmt::format("P{:0{}}", i + 1, id_width);
    r.gold_label = y ? CachexiaStatus::cachectic : CachexiaStatus::non_cachectic;
    r.sex = female[i] ? Sex::female : Sex::male;
    r.race_ethnicity = kAllRaces[race[i]];
    if (tnm[i] < 9) r.tnm_stage_code = static_cast<int>(tnm[i]) + 1;
    r.age_years = round_to(std::clamp(cfg.age_mean + cfg.age_sd * z(rng), 18.0, 100.0), 1);
    const double h = round_to(std::clamp(cfg.height_m_mean + cfg.height_m_sd * z(rng), 1.40, 2.10), 2);
    const double w = round_to(std::clamp(cfg.weight_kg_mean + cfg.weight_kg_sd * z(rng), 35.0, 200.0), 1);
    r.height_m = h;
    r.weight_kg = w;
    r.bmi = round_to(w / (h * h), 1);

    // Staging inputs follow the staging state, which matches the latent state for most patients.
    const bool stage_state = stage_flip[i] ? !y : y;
    const double loss = stage_state ? 6.0 + 9.0 * u(rng) : -2.0 + 3.8 * u(rng);
    if (!prior_missing[i]) r.prior_weight_kg_6mo = round_to(w / (1.0 - loss / 100.0), 1);
    const double intake_draw = u(rng), ecog_draw = u(rng);
    if (four_stage[i]) {
      const bool decreased = stage_state ? intake_draw < 0.8 : intake_draw < 0.15;
      r.food_intake = decreased ? FoodIntake::decreased : FoodIntake::normal;
      r.ecog = static_cast<int>(std::floor(ecog_draw * (stage_state ? 5.0 : 3.0)));
      std::set<BiochemFlag> flags;
      if (stage_state && !decreased) flags.insert(BiochemFlag::elevated_crp);
      r.biochem_flags = flags;
    }

    if (site_a[i]) {
      const double smi = centre(sm_sig, i, kSmiCachectic, kSmiNon) + spread(sm_sig, i) * kSmiSd * z(rng);
      const double hu = centre(sm_sig, i, kHuCachectic, kHuNon) + spread(sm_sig, i) * kHuSd * z(rng);
      r.sm.sma_cm2 = round_to(std::max(smi, 10.0) * h * h, 1);
      r.sm.sm_hu_mean = round_to(hu, 1);
      std::size_t slices = 1 + static_cast<std::size_t>(u(rng) * 3.0);
      ImageRef img{fmt::format("CT-{}", r.patient_id), {}};
      for (std::size_t k = 0; k < std::min<std::size_t>(slices, 3); ++k)
        img.slices.push_back(fmt::format("{}/L3/{}", r.patient_id, k));
      r.image_ref = img;
    }

    {
      const double albumin =
          std::clamp(centre(labs_sig, i, kAlbuminCachectic, kAlbuminNon) + spread(labs_sig, i) * kAlbuminSd * z(rng), 1.5, 5.5);
      const double lymph = std::max(0.2, 1.6 * std::exp(noise * 0.3 * z(rng)));
      const double log_nlr = centre(labs_sig, i, std::log(kNlrCachectic), std::log(kNlrNon));
      const double nlr = std::exp(log_nlr + spread(labs_sig, i) * 0.35 * z(rng));
      const double creat = std::max(0.3, 0.9 * std::exp(noise * 0.2 * z(rng)));
      const double ucr = std::clamp(centre(labs_sig, i, kUcrCachectic, kUcrNon) + spread(labs_sig, i) * kUcrSd * z(rng), 4.0, 60.0);
      if (lab_present[0][i]) r.labs.albumin_g_dl = round_to(albumin, 2);
      if (lab_present[1][i]) r.labs.neutrophil_abs_k_ul = round_to(nlr * lymph, 2);
      if (lab_present[2][i]) r.labs.lymphocyte_abs_k_ul = round_to(lymph, 2);
      if (lab_present[3][i]) r.labs.bun_mg_dl = round_to(ucr * creat, 1);
      if (lab_present[4][i]) r.labs.creatinine_mg_dl = round_to(creat, 2);
    }

    if (has_notes[i]) {
      const bool s_notes = notes_sig.apparent[i];
      const bool s_sev = sev_sig.apparent[i];
      const double p_yes = pull(notes_sig, i, p_yes_own);
      const double p_sev = pull(sev_sig, i, p_sev_own);
      std::vector<std::string> sentences;
      for (const auto& q : battery.questions) {
        const double mention = u(rng), yes_draw = u(rng), sev_draw = u(rng), word_draw = u(rng);
        if (q.keywords.empty() || mention >= sp.notes_mention_rate) continue;
        const auto& kw = q.keywords.front();
        const bool yes = s_notes ? yes_draw < p_yes : yes_draw >= p_yes;
        if (!yes) {
          sentences.push_back(fmt::format("Patient denies {}.", kw));
          continue;
        }
        const bool severe = s_sev ? sev_draw < p_sev : sev_draw >= p_sev;
        const auto& words = severe ? kSevere : kMild;
        const auto word = words[static_cast<std::size_t>(word_draw * 3.0) % 3];
        sentences.push_back(fmt::format("Patient reports {} {}.", word, kw));
      }
      std::shuffle(sentences.begin(), sentences.end(), rng);
      const std::size_t note_count = 1 + static_cast<std::size_t>(u(rng) * 3.0) % 3;
      NotesBundle bundle;
      for (std::size_t k = 0; k < note_count; ++k) {
        ClinicalNote note;
        note.note_type = kNoteTypes[static_cast<std::size_t>(u(rng) * 8.0) % 8];
        note.date = fmt::format("2019-{:02}-{:02}", 1 + k * 3, 1 + static_cast<int>(u(rng) * 28.0));
        note.text = std::string(kFiller[static_cast<std::size_t>(u(rng) * 5.0) % 5]);
        bundle.notes.push_back(std::move(note));
      }
      for (std::size_t s = 0; s < sentences.size(); ++s) {
        auto& text = bundle.notes[s % note_count].text;
        text += ' ';
        text += sentences[s];
      }
      r.notes = std::move(bundle);
    }
    cohort.push_back(std::move(r));
  }
  return cohort;
}

}  // namespace cachexia
