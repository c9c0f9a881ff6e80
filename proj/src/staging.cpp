#include "cachexia/staging.hpp"

#include <fmt/format.h>

#include <stdexcept>

#include "cachexia/biomarkers.hpp"
#include "cachexia/error.hpp"

namespace cachexia {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr std::pair<FourStage, std::string_view> kFourStageNames[] = {
    {FourStage::non_cachectic, "non_cachectic"},
    {FourStage::pre_cachectic, "pre_cachectic"},
    {FourStage::cachectic, "cachectic"},
    {FourStage::refractory, "refractory"},
};

constexpr std::pair<StagingInput, std::string_view> kInputNames[] = {
    {StagingInput::weight_loss, "weight_loss"},
    {StagingInput::food_intake, "food_intake"},
    {StagingInput::ecog, "ecog"},
    {StagingInput::biochem, "biochem"},
};

constexpr std::pair<Criterion::Kind, std::string_view> kCriterionNames[] = {
    {Criterion::Kind::loss_gt, "loss_gt"},
    {Criterion::Kind::loss_in, "loss_in"},
    {Criterion::Kind::ecog_ge, "ecog_ge"},
    {Criterion::Kind::any_biochem_flag, "any_biochem_flag"},
    {Criterion::Kind::food_intake_decreased, "food_intake_decreased"},
};

template <typename E, std::size_t N>
E lookup(const std::pair<E, std::string_view> (&table)[N], std::string_view s, const char* what) {
  for (const auto& [e, n] : table)
    if (n == s) return e;
  throw Error(Errc::InvalidConfig, fmt::format("unknown {} '{}'", what, s));
}

template <typename E, std::size_t N>
std::string_view name_of(const std::pair<E, std::string_view> (&table)[N], E v) {
  for (const auto& [e, n] : table)
    if (e == v) return n;
  return "?";
}

bool has_input(const FourStageInputs& in, StagingInput which) {
  switch (which) {
    case StagingInput::weight_loss: return in.weight_loss_pct_6mo.has_value();
    case StagingInput::food_intake: return in.food_intake.has_value();
    case StagingInput::ecog: return in.ecog.has_value();
    case StagingInput::biochem: return in.biochem_flags.has_value();
  }
  return false;
}

Criterion crit(Criterion::Kind k, double lo = 0.0, double hi = 0.0) { return Criterion{k, lo, hi}; }

}  // namespace

std::string_view to_string(FourStage v) { return name_of(kFourStageNames, v); }

std::string_view to_string(StagingSystem v) {
  switch (v) {
    case StagingSystem::four_stage: return "four_stage";
    case StagingSystem::two_stage: return "two_stage";
    case StagingSystem::gold_label: return "gold_label";
  }
  return "?";
}

FourStage parse_four_stage(std::string_view s) { return lookup(kFourStageNames, s, "four-stage value"); }

CachexiaStatus collapse_binary(FourStage stage) {
  switch (stage) {
    case FourStage::non_cachectic:
    case FourStage::pre_cachectic: return CachexiaStatus::non_cachectic;
    case FourStage::cachectic:
    case FourStage::refractory: return CachexiaStatus::cachectic;
  }
  return CachexiaStatus::non_cachectic;
}

CachexiaStatus collapse_binary(CachexiaStatus two_stage) { return two_stage; }

CachexiaStatus stage_two(std::optional<double> loss, std::optional<double> bmi, std::vector<std::string>* trace) {
  if (!loss || !bmi) throw Error(Errc::MissingInput, "two-stage rule needs weight loss and BMI");
  bool cachectic = false;
  if (*bmi >= 20.0 && *loss > 5.0) {
    cachectic = true;
    if (trace) trace->push_back("weight_loss>5% with bmi>=20");
  } else if (*bmi < 20.0 && *loss > 2.0) {
    cachectic = true;
    if (trace) trace->push_back("weight_loss>2% with bmi<20");
  }
  return cachectic ? CachexiaStatus::cachectic : CachexiaStatus::non_cachectic;
}

bool Criterion::holds(const FourStageInputs& in) const {
  switch (kind) {
    case Kind::loss_gt: return in.weight_loss_pct_6mo && *in.weight_loss_pct_6mo > low;
    case Kind::loss_in:
      return in.weight_loss_pct_6mo && *in.weight_loss_pct_6mo > low && *in.weight_loss_pct_6mo <= high;
    case Kind::ecog_ge: return in.ecog && *in.ecog >= low;
    case Kind::any_biochem_flag: return in.biochem_flags && !in.biochem_flags->empty();
    case Kind::food_intake_decreased: return in.food_intake == FoodIntake::decreased;
  }
  return false;
}

std::string Criterion::describe() const {
  switch (kind) {
    case Kind::loss_gt: return fmt::format("weight_loss>{}%", low);
    case Kind::loss_in: return fmt::format("{}%<weight_loss<={}%", low, high);
    case Kind::ecog_ge: return fmt::format("ecog>={}", low);
    case Kind::any_biochem_flag: return "biochemical_marker";
    case Kind::food_intake_decreased: return "food_intake_decreased";
  }
  return "?";
}

FourStageRuleTable FourStageRuleTable::defaults() {
  using K = Criterion::Kind;
  FourStageRuleTable t;
  t.required = {StagingInput::weight_loss, StagingInput::food_intake, StagingInput::ecog, StagingInput::biochem};
  t.rules = {
      {FourStage::refractory, {{crit(K::ecog_ge, 3)}, {crit(K::loss_gt, 5)}}},
      {FourStage::cachectic, {{crit(K::loss_gt, 5)}, {crit(K::any_biochem_flag), crit(K::food_intake_decreased)}}},
      {FourStage::pre_cachectic,
       {{crit(K::loss_in, 0, 5), crit(K::any_biochem_flag), crit(K::food_intake_decreased)}}},
  };
  return t;
}

FourStageRuleTable FourStageRuleTable::from_json(const json& j) {
  FourStageRuleTable t;
  for (const auto& r : j.at("required")) t.required.insert(lookup(kInputNames, r.get<std::string>(), "staging input"));
  for (const auto& rj : j.at("rules")) {
    StageRule rule{parse_four_stage(rj.at("stage").get<std::string>()), {}};
    for (const auto& clause : rj.at("all_of")) {
      std::vector<Criterion> any_of;
      for (const auto& cj : clause) {
        Criterion c;
        c.kind = lookup(kCriterionNames, cj.at("kind").get<std::string>(), "criterion");
        c.low = cj.value("low", 0.0);
        c.high = cj.value("high", 0.0);
        any_of.push_back(c);
      }
      if (any_of.empty()) throw Error(Errc::InvalidConfig, "empty clause in staging rule");
      rule.all_of.push_back(std::move(any_of));
    }
    t.rules.push_back(std::move(rule));
  }
  return t;
}

ordered_json FourStageRuleTable::to_json() const {
  ordered_json j;
  j["required"] = ordered_json::array();
  for (auto r : required) j["required"].push_back(name_of(kInputNames, r));
  j["rules"] = ordered_json::array();
  for (const auto& rule : rules) {
    ordered_json rj;
    rj["stage"] = to_string(rule.stage);
    rj["all_of"] = ordered_json::array();
    for (const auto& clause : rule.all_of) {
      ordered_json cj = ordered_json::array();
      for (const auto& c : clause) cj.push_back({{"kind", name_of(kCriterionNames, c.kind)}, {"low", c.low}, {"high", c.high}});
      rj["all_of"].push_back(std::move(cj));
    }
    j["rules"].push_back(std::move(rj));
  }
  return j;
}

FourStage stage_four(const FourStageInputs& in, const FourStageRuleTable& table, std::vector<std::string>* trace) {
  for (auto req : table.required)
    if (!has_input(in, req))
      throw Error(Errc::InsufficientInformation, fmt::format("four-stage input '{}' absent", name_of(kInputNames, req)));
  for (const auto& rule : table.rules) {
    std::vector<std::string> fired;
    bool ok = true;
    for (const auto& clause : rule.all_of) {
      bool any = false;
      for (const auto& c : clause) {
        if (c.holds(in)) {
          any = true;
          fired.push_back(c.describe());
        }
      }
      if (!any) {
        ok = false;
        break;
      }
    }
    if (ok) {
      if (trace) trace->insert(trace->end(), fired.begin(), fired.end());
      return rule.stage;
    }
  }
  if (trace) trace->push_back("no criteria met");
  return FourStage::non_cachectic;
}

StagingConfig StagingConfig::from_json(const json& j) {
  StagingConfig cfg;
  if (j.contains("rule_table")) cfg.rules = FourStageRuleTable::from_json(j.at("rule_table"));
  cfg.hypoalbuminemia_below_g_dl = j.value("hypoalbuminemia_below_g_dl", cfg.hypoalbuminemia_below_g_dl);
  return cfg;
}

ordered_json StagingConfig::to_json() const {
  return ordered_json{{"rule_table", rules.to_json()}, {"hypoalbuminemia_below_g_dl", hypoalbuminemia_below_g_dl}};
}

std::optional<std::set<BiochemFlag>> derive_biochem_flags(const PatientRecord& r, const StagingConfig& cfg) {
  auto flags = r.biochem_flags;
  if (r.labs.albumin_g_dl) {
    if (!flags) flags.emplace();
    if (*r.labs.albumin_g_dl < cfg.hypoalbuminemia_below_g_dl) flags->insert(BiochemFlag::hypoalbuminemia);
  }
  return flags;
}

FourStageInputs four_stage_inputs(const PatientRecord& r, const StagingConfig& cfg) {
  return FourStageInputs{derive_biochem_flags(r, cfg), r.food_intake, r.weight_loss_pct_6mo(), r.ecog};
}

StageAssignment assign_stage(const PatientRecord& r, const StagingConfig& cfg) {
  StageAssignment a;
  try {
    a.four_stage = stage_four(four_stage_inputs(r, cfg), cfg.rules, &a.criteria_trace);
    a.system_used = StagingSystem::four_stage;
    a.binary = collapse_binary(*a.four_stage);
    return a;
  } catch (const Error& e) {
    if (e.code() != Errc::InsufficientInformation) throw;
    a.criteria_trace.clear();
  }
  auto bmi = derive_panel(r).bmi;
  auto loss = r.weight_loss_pct_6mo();
  if (loss && bmi) {
    a.two_stage = stage_two(loss, bmi, &a.criteria_trace);
    a.system_used = StagingSystem::two_stage;
    a.binary = collapse_binary(*a.two_stage);
    if (a.criteria_trace.empty()) a.criteria_trace.push_back("weight_loss below threshold");
    return a;
  }
  if (r.gold_label) {
    a.system_used = StagingSystem::gold_label;
    a.binary = *r.gold_label;
    a.criteria_trace.push_back("gold_label");
    return a;
  }
  throw Error(Errc::Unstageable, "insufficient data to stage " + r.patient_id);
}

}  // namespace cachexia
