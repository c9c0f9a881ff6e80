#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "cachexia/cohort.hpp"

namespace cachexia {

enum class FourStage { non_cachectic, pre_cachectic, cachectic, refractory };
enum class StagingSystem { four_stage, two_stage, gold_label };

std::string_view to_string(FourStage v);
std::string_view to_string(StagingSystem v);
FourStage parse_four_stage(std::string_view s);

struct StageAssignment {
  std::optional<FourStage> four_stage;
  std::optional<CachexiaStatus> two_stage;
  CachexiaStatus binary = CachexiaStatus::non_cachectic;
  StagingSystem system_used = StagingSystem::two_stage;
  std::vector<std::string> criteria_trace;
};

CachexiaStatus collapse_binary(FourStage stage);
CachexiaStatus collapse_binary(CachexiaStatus two_stage);

/// Weight-loss/BMI rule: cachectic iff (bmi >= 20 and loss > 5) or (bmi < 20 and loss > 2).
/// Throws Errc::MissingInput when either input is absent.
CachexiaStatus stage_two(std::optional<double> weight_loss_pct_6mo, std::optional<double> bmi,
                         std::vector<std::string>* trace = nullptr);

struct FourStageInputs {
  std::optional<std::set<BiochemFlag>> biochem_flags;
  std::optional<FoodIntake> food_intake;
  std::optional<double> weight_loss_pct_6mo;
  std::optional<int> ecog;
};

enum class StagingInput { weight_loss, food_intake, ecog, biochem };

/// One predicate over the four-stage inputs. Predicates on absent inputs are false.
struct Criterion {
  enum class Kind { loss_gt, loss_in, ecog_ge, any_biochem_flag, food_intake_decreased };
  Kind kind = Kind::loss_gt;
  double low = 0.0;   // loss_gt threshold, loss_in lower bound (exclusive), ecog_ge threshold
  double high = 0.0;  // loss_in upper bound (inclusive)

  bool holds(const FourStageInputs& in) const;
  std::string describe() const;
};

/// A rule fires when every clause has at least one holding criterion.
struct StageRule {
  FourStage stage;
  std::vector<std::vector<Criterion>> all_of;
};

/// Ordered rules, first match wins; no match means non_cachectic.
struct FourStageRuleTable {
  std::set<StagingInput> required;
  std::vector<StageRule> rules;

  static FourStageRuleTable defaults();
  static FourStageRuleTable from_json(const nlohmann::json& j);
  nlohmann::ordered_json to_json() const;
};

/// Throws Errc::InsufficientInformation when a required input is absent.
FourStage stage_four(const FourStageInputs& inputs, const FourStageRuleTable& rules,
                     std::vector<std::string>* trace = nullptr);

struct StagingConfig {
  FourStageRuleTable rules = FourStageRuleTable::defaults();
  double hypoalbuminemia_below_g_dl = 3.5;

  static StagingConfig from_json(const nlohmann::json& j);
  nlohmann::ordered_json to_json() const;
};

/// Biochemical flags from explicit flags plus lab-derived hypoalbuminemia; absent when neither source exists.
std::optional<std::set<BiochemFlag>> derive_biochem_flags(const PatientRecord& record, const StagingConfig& cfg);
FourStageInputs four_stage_inputs(const PatientRecord& record, const StagingConfig& cfg);

/// Four-stage first, then two-stage, then the gold label. Throws Errc::Unstageable otherwise.
StageAssignment assign_stage(const PatientRecord& record, const StagingConfig& cfg);

}  // namespace cachexia
