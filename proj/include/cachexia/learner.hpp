#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cachexia/features.hpp"
#include "cachexia/mlp.hpp"

namespace cachexia {

inline constexpr std::size_t kEnsembleSize = 5;

using Rows = std::vector<std::vector<double>>;

/// k disjoint validation index sets covering 0..n-1; sizes differ by at most one.
/// Throws Errc::TooFewSamples unless n >= k >= 2.
std::vector<std::vector<std::size_t>> kfold_split(std::size_t n, std::size_t k, std::uint64_t seed);

enum class Execution { serial, parallel };

struct LearnerConfig {
  TrainConfig train;
  std::size_t folds = 10;
  std::uint64_t split_seed = 0;
  Execution execution = Execution::parallel;

  nlohmann::ordered_json to_json() const;
  static LearnerConfig from_json(const nlohmann::json& j);
};

struct FoldModel {
  Standardizer scaler;  // fitted on the fold's training rows only
  Mlp net;
  double val_accuracy = 0.0;
  double val_loss = 0.0;
  std::size_t epochs = 0;

  double predict(std::span<const double> x) const;
};

struct ArchitectureResult {
  MlpArchitecture arch;
  std::vector<FoldModel> folds;
  std::vector<double> oof_prob;  // out-of-fold probability per training row
  double mean_cv_accuracy = 0.0;
  double mean_val_loss = 0.0;
};

/// One network per fold, seeded from (arch.seed, fold). Labels are 0/1.
ArchitectureResult train_architecture(const Rows& x, std::span<const int> labels, const MlpArchitecture& arch,
                                      const LearnerConfig& cfg);

/// Trains several architectures on the same folds. Parallel and serial execution give identical results.
std::vector<ArchitectureResult> train_architectures(const Rows& x, std::span<const int> labels,
                                                    std::span<const MlpArchitecture> archs, const LearnerConfig& cfg);

struct EnsembleMember {
  MlpArchitecture arch;
  std::vector<FoldModel> folds;
  double mean_cv_accuracy = 0.0;
};

struct TrainedEnsemble {
  std::vector<EnsembleMember> members;
  std::string schema_fingerprint;
  std::string config_hash;
  std::vector<std::string> feature_names;
  double variance_threshold = 0.0;
  // Out-of-fold variance statistics behind the default threshold.
  std::optional<double> oof_mean_var_correct;
  std::optional<double> oof_mean_var_incorrect;

  std::size_t network_count() const;
};

/// Throws Errc::WrongEnsembleSize unless exactly five architectures are given.
TrainedEnsemble ensemble_train(const Rows& x, std::span<const int> labels, std::span<const MlpArchitecture> archs,
                               const LearnerConfig& cfg);

/// Builds an ensemble from already-trained results (e.g. the winners of a search) without retraining.
/// All results must share the same folds.
TrainedEnsemble ensemble_from_results(std::vector<ArchitectureResult> results, std::span<const int> labels);

struct EnsemblePrediction {
  std::string patient_id;
  double mean_prob = 0.0;
  double variance = 0.0;
  bool cachectic = false;
  std::array<double, kEnsembleSize> per_architecture{};
};

/// Mean, population variance, and 0.5-threshold label of five per-architecture probabilities.
EnsemblePrediction combine_probs(const std::array<double, kEnsembleSize>& probs, std::string patient_id = {});

EnsemblePrediction ensemble_predict(const TrainedEnsemble& ens, std::span<const double> x);
/// Throws Errc::SchemaMismatch when the fingerprint differs from the one the ensemble was trained on.
EnsemblePrediction ensemble_predict(const TrainedEnsemble& ens, std::span<const double> x,
                                    std::string_view schema_fingerprint);
std::vector<EnsemblePrediction> ensemble_predict(const TrainedEnsemble& ens, const FeatureMatrix& m);

enum class TriageVerdict { auto_accept, expert_review };

std::string_view to_string(TriageVerdict v);

/// expert_review iff variance >= threshold.
TriageVerdict triage(const EnsemblePrediction& p, double variance_threshold);

/// Midpoint between the mean variance of correct and incorrect predictions. When one side is
/// empty the threshold sits just above every observed variance (all correct) or at the smallest
/// one (all incorrect).
double default_variance_threshold(std::span<const double> correct_var, std::span<const double> incorrect_var);

struct SearchSpace {
  std::vector<std::size_t> width_choices{4, 8, 12, 16, 24, 32};
  double dropout_min = 0.0;
  double dropout_max = 0.2;
  double lr_min = 5e-3;
  double lr_max = 5e-2;
  bool successive_halving = false;
  std::size_t halving_eta = 3;

  nlohmann::ordered_json to_json() const;
  static SearchSpace from_json(const nlohmann::json& j);
};

struct SearchTrial {
  MlpArchitecture arch;
  double mean_cv_accuracy = 0.0;
  double mean_val_loss = 0.0;
};

struct SearchResult {
  std::vector<SearchTrial> trials;     // in sampling order
  std::vector<ArchitectureResult> top;  // best five, fully trained

  std::vector<MlpArchitecture> best() const;
};

/// Seeded random search over widths (sorted descending, distinct per trial), dropout and
/// log-uniform learning rate, scored by mean CV accuracy. Throws Errc::BudgetTooSmall below 5.
SearchResult search_hyperparams(const Rows& x, std::span<const int> labels, const SearchSpace& space,
                                std::size_t budget, std::uint64_t seed, const LearnerConfig& cfg);

nlohmann::ordered_json ensemble_to_json(const TrainedEnsemble& ens);
TrainedEnsemble ensemble_from_json(const nlohmann::json& j);
void save_ensemble(const TrainedEnsemble& ens, const std::filesystem::path& path);
TrainedEnsemble load_ensemble(const std::filesystem::path& path);

}  // namespace cachexia
