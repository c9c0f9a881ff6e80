#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cachexia/embedding.hpp"
#include "cachexia/features.hpp"
#include "cachexia/learner.hpp"
#include "cachexia/metrics.hpp"
#include "cachexia/notes.hpp"
#include "cachexia/staging.hpp"

namespace cachexia {

/// Per-patient inputs to late fusion, in kFusionOrder.
using PatientEmbeddings = std::map<std::string, FusionInputs>;

/// Embeds the serialized tabular record, the focused extraction text (when the patient has
/// answered questions), and the image series (when an image provider is given and the record
/// has one).
PatientEmbeddings embed_cohort(const Cohort& cohort, const std::map<std::string, ExtractionResult>& extractions,
                               const EmbeddingProvider& text, const EmbeddingProvider* image);

struct AblationConfig {
  std::string name;
  std::string modalities;  // human-readable
  SchemaConfig schema;     // used when !embeddings
  bool embeddings = false;
  bool image = false;

  nlohmann::ordered_json to_json() const;
  static AblationConfig from_json(const nlohmann::json& j);
};

/// The five experiments: clinical+SM; +labs; +notes answers; text embeddings; +image embeddings.
std::vector<AblationConfig> default_ablation_configs();

struct AblationSettings {
  LearnerConfig learner;
  SearchSpace space;
  std::size_t search_budget = 6;
  double test_fraction = 0.2;
  StagingConfig staging;
  std::size_t text_dim = 64;
  std::size_t image_dim = 32;
  std::uint64_t embedding_seed = 0;
  std::optional<double> variance_threshold;  // overrides the out-of-fold default
  bool keep_predictions = true;

  nlohmann::ordered_json to_json() const;
  static AblationSettings from_json(const nlohmann::json& j);
};

struct TestPrediction {
  std::string patient_id;
  int label = 0;
  int predicted = 0;
  double mean_prob = 0.0;
  double variance = 0.0;
  TriageVerdict verdict = TriageVerdict::auto_accept;
};

struct TriageStats {
  std::optional<double> incorrect_routed;  // share of incorrect predictions sent to review
  std::optional<double> correct_accepted;  // share of correct predictions auto-accepted
};

struct AblationRow {
  AblationConfig config;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::size_t input_dim = 0;
  ConfusionMatrix confusion;
  Metrics metrics;
  ConfidenceSeparation separation;
  double variance_threshold = 0.0;
  TriageStats triage;
  std::vector<TestPrediction> predictions;
};

struct AblationReport {
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<AblationRow> rows;

  nlohmann::ordered_json to_json() const;
  /// One line per row: config, modalities, metrics, variance statistics, triage shares.
  std::string to_csv() const;
};

inline constexpr int kAblationReportVersion = 1;

/// Stratified split: `test_fraction` of each class goes to the test set, chosen by seed.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};
Split stratified_split(std::span<const int> labels, double test_fraction, std::uint64_t seed);

/// Binary staging labels for every record. Throws Errc::Unstageable like assign_stage.
std::vector<int> staging_labels(const Cohort& cohort, const StagingConfig& cfg);

/// Runs each config on one stratified split: featurize or embed, search, ensemble, evaluate.
/// `extractor` defaults to the offline keyword extractor over `battery`.
AblationReport run_ablation(const Cohort& cohort, std::span<const AblationConfig> configs, std::uint64_t seed,
                            const AblationSettings& settings,
                            const QuestionBattery& battery = QuestionBattery::defaults(),
                            ChatClient* extractor = nullptr);

void save_ablation_report(const AblationReport& report, const std::filesystem::path& json_path,
                          const std::filesystem::path& csv_path);

}  // namespace cachexia
