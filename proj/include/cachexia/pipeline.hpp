#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cachexia/ablation.hpp"
#include "cachexia/chat_client.hpp"
#include "cachexia/embedding.hpp"
#include "cachexia/features.hpp"
#include "cachexia/learner.hpp"
#include "cachexia/staging.hpp"

namespace cachexia {

struct ProviderSettings {
  std::string kind = "stub";  // text: stub | http; image: none | stub | file
  std::size_t dim = 64;
  std::uint64_t seed = 0;
  std::string base_url = "http://127.0.0.1:11434";
  std::string model;
  std::filesystem::path path;  // precomputed vectors for kind "file"
  double timeout_s = 60.0;
  std::size_t token_limit = 512;

  static ProviderSettings image_defaults() {
    ProviderSettings s;
    s.kind = "none";
    s.dim = 32;
    return s;
  }

  nlohmann::ordered_json to_json() const;
  static ProviderSettings from_json(const nlohmann::json& j, const ProviderSettings& defaults,
                                    const std::filesystem::path& base);
};

/// One file drives a whole run. Relative paths resolve against the config file's directory.
struct PipelineConfig {
  std::filesystem::path cohort;
  std::string battery;  // path, or "builtin" for the shipped question set; empty when unused
  std::filesystem::path gold_answers;
  std::filesystem::path out_dir;

  SchemaConfig schema;
  bool notes_enabled = false;
  std::string notes_provider = "keyword";  // keyword | http
  ChatClientConfig chat;
  std::size_t max_inflight = 4;

  bool embeddings_enabled = false;
  ProviderSettings text_provider;
  ProviderSettings image_provider = ProviderSettings::image_defaults();

  StagingConfig staging;
  LearnerConfig learner;
  SearchSpace space;
  std::size_t search_budget = 6;
  std::uint64_t seed = 1;
  double test_fraction = 0.2;
  std::optional<double> variance_threshold;

  /// Throws Errc::ConfigInvalid naming the first problem.
  void validate() const;
  /// Canonical JSON; the output directory is excluded so relocated runs hash the same.
  nlohmann::ordered_json to_json() const;
  std::string hash() const;
  QuestionBattery load_battery() const;

  static PipelineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base = {});
};

/// Throws Errc::ConfigInvalid on unreadable or malformed files.
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

struct ArtifactEntry {
  std::string path;  // relative to the output directory
  std::string sha256;
};

struct StepRecord {
  std::string name;
  std::string status;  // ran | reused | skipped
  std::vector<ArtifactEntry> outputs;
};

struct RunManifest {
  std::string config_hash;
  std::vector<StepRecord> steps;
  nlohmann::ordered_json summary;

  nlohmann::ordered_json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

inline constexpr const char* kPipelineSteps[] = {"stage", "extract-notes", "featurize", "embed",
                                                 "train", "predict",       "evaluate"};

/// Runs the seven steps, reusing a previous run's artifacts when the config hash and file hashes
/// still match. `client` overrides the configured notes extractor. Throws Errc::ConfigInvalid or
/// Errc::StepFailed.
RunManifest run_pipeline(const PipelineConfig& cfg, ChatClient* client = nullptr);

// Artifact helpers shared by the pipeline and the single-step CLI commands.

struct StageRow {
  std::string patient_id;
  std::optional<StageAssignment> assignment;  // absent when unstageable
  std::optional<bool> in_test;                // absent when the record has no label
};

std::vector<StageRow> stage_cohort(const Cohort& cohort, const StagingConfig& cfg, double test_fraction,
                                   std::uint64_t seed);
void write_stages_csv(const std::vector<StageRow>& rows, const std::filesystem::path& path,
                      const std::string& config_hash);

struct StageLabels {
  std::map<std::string, int> label;  // stageable records only
  std::map<std::string, bool> in_test;
  std::string config_hash;
};
StageLabels read_stages_csv(const std::filesystem::path& path);

/// Writes extractions as JSON lines with a config_hash field; the reader checks it when `expect_hash` is non-empty.
void write_extractions(const std::vector<ExtractionResult>& results, const std::filesystem::path& path,
                       const std::string& config_hash);
std::vector<ExtractionResult> read_extractions(const std::filesystem::path& path, const std::string& expect_hash);

std::unique_ptr<EmbeddingProvider> make_text_provider(const ProviderSettings& s);
/// nullptr for kind "none".
std::unique_ptr<EmbeddingProvider> make_image_provider(const ProviderSettings& s);

/// Writes one EMB1 file per present source plus a `.meta.json` sidecar carrying the config hash.
void write_source_embeddings(const PatientEmbeddings& emb, EmbeddingSource source, std::size_t dim,
                             const std::filesystem::path& path, const std::string& config_hash);

/// Late-fusion matrix with columns <source>_<i> and <source>_present.
FeatureMatrix fused_matrix(const PatientEmbeddings& emb, const std::vector<std::string>& ids, const FusionDims& dims);

void write_predictions_csv(const std::vector<EnsemblePrediction>& preds, double variance_threshold,
                           const std::filesystem::path& path, const std::string& config_hash);

struct PredictionRow {
  std::string patient_id;
  double mean_prob = 0.0;
  double variance = 0.0;
  bool cachectic = false;
  TriageVerdict verdict = TriageVerdict::auto_accept;
};
std::vector<PredictionRow> read_predictions_csv(const std::filesystem::path& path, std::string* config_hash = nullptr);

/// Metrics, confidence separation and triage shares over the labelled rows (optionally test rows only).
nlohmann::ordered_json evaluate_predictions(const std::vector<PredictionRow>& preds, const StageLabels& labels,
                                            bool test_only);

/// Reads a feature CSV and refuses it when `expect_hash` is non-empty and differs. Throws ConfigHashMismatch.
FeatureMatrix read_features_checked(const std::filesystem::path& path, const std::string& expect_hash);

}  // namespace cachexia
