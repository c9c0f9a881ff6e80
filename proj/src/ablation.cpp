#include "cachexia/ablation.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cachexia/biomarkers.hpp"
#include "cachexia/chat_client.hpp"
#include "cachexia/csv.hpp"
#include "cachexia/error.hpp"
#include "cachexia/hashing.hpp"

namespace cachexia {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

PatientEmbeddings embed_cohort(const Cohort& cohort, const std::map<std::string, ExtractionResult>& extractions,
                               const EmbeddingProvider& text, const EmbeddingProvider* image) {
  PatientEmbeddings out;
  for (const auto& r : cohort) {
    FusionInputs in;
    in[0] = embed_text(serialize_tabular_text(r, derive_panel(r)), text);
    if (auto it = extractions.find(r.patient_id); it != extractions.end()) {
      auto focused = focused_text(it->second);
      if (!focused.empty()) in[1] = embed_text(focused, text);
    }
    if (image && r.image_ref && !r.image_ref->slices.empty()) in[2] = embed_image_series(r.image_ref->slices, *image);
    out.emplace(r.patient_id, std::move(in));
  }
  return out;
}

ordered_json AblationConfig::to_json() const {
  return ordered_json{{"name", name},
                      {"modalities", modalities},
                      {"schema", schema.to_string()},
                      {"embeddings", embeddings},
                      {"image", image}};
}

AblationConfig AblationConfig::from_json(const json& j) {
  AblationConfig c;
  c.name = j.at("name").get<std::string>();
  c.modalities = j.value("modalities", c.name);
  c.schema = SchemaConfig::parse(j.value("schema", std::string("clinical,sm")));
  c.embeddings = j.value("embeddings", false);
  c.image = j.value("image", false);
  return c;
}

std::vector<AblationConfig> default_ablation_configs() {
  auto tab = [](std::string name, std::string mods, std::string schema) {
    return AblationConfig{std::move(name), std::move(mods), SchemaConfig::parse(schema), false, false};
  };
  return {
      tab("1_clinical_sm", "clinical + skeletal muscle", "clinical,sm"),
      tab("2_clinical_sm_labs", "clinical + skeletal muscle + labs", "clinical,sm,labs"),
      tab("3_clinical_sm_labs_notes", "clinical + skeletal muscle + labs + note answers", "clinical,sm,labs,notes"),
      AblationConfig{"4_text_embeddings", "tabular text + note text embeddings", SchemaConfig::parse("clinical,sm,labs,notes"),
                     true, false},
      AblationConfig{"5_text_image_embeddings", "tabular text + note text + image embeddings",
                     SchemaConfig::parse("clinical,sm,labs,notes"), true, true},
  };
}

ordered_json AblationSettings::to_json() const {
  ordered_json j{{"learner", learner.to_json()},
                 {"search_space", space.to_json()},
                 {"search_budget", search_budget},
                 {"test_fraction", test_fraction},
                 {"staging", staging.to_json()},
                 {"text_dim", text_dim},
                 {"image_dim", image_dim},
                 {"embedding_seed", embedding_seed}};
  j["variance_threshold"] = variance_threshold ? ordered_json(*variance_threshold) : ordered_json();
  return j;
}

AblationSettings AblationSettings::from_json(const json& j) {
  AblationSettings s;
  if (j.contains("learner")) s.learner = LearnerConfig::from_json(j.at("learner"));
  if (j.contains("search_space")) s.space = SearchSpace::from_json(j.at("search_space"));
  s.search_budget = j.value("search_budget", s.search_budget);
  s.test_fraction = j.value("test_fraction", s.test_fraction);
  if (j.contains("staging")) s.staging = StagingConfig::from_json(j.at("staging"));
  s.text_dim = j.value("text_dim", s.text_dim);
  s.image_dim = j.value("image_dim", s.image_dim);
  s.embedding_seed = j.value("embedding_seed", s.embedding_seed);
  if (j.contains("variance_threshold") && !j.at("variance_threshold").is_null())
    s.variance_threshold = j.at("variance_threshold").get<double>();
  if (!(s.test_fraction > 0.0 && s.test_fraction < 1.0))
    throw Error(Errc::InvalidConfig, "test_fraction must lie in (0, 1)");
  return s;
}

Split stratified_split(std::span<const int> labels, double test_fraction, std::uint64_t seed) {
  Split s;
  Rng rng(seed);
  for (int cls : {0, 1}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == cls) idx.push_back(i);
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(idx.size())));
    s.test.insert(s.test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
    s.train.insert(s.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

std::vector<int> staging_labels(const Cohort& cohort, const StagingConfig& cfg) {
  std::vector<int> y;
  y.reserve(cohort.size());
  for (const auto& r : cohort) y.push_back(assign_stage(r, cfg).binary == CachexiaStatus::cachectic ? 1 : 0);
  return y;
}

namespace {

AblationRow evaluate_config(const AblationConfig& cfg, const Rows& rows, const std::vector<std::string>& ids,
                            std::span<const int> labels, const Split& split, std::uint64_t seed,
                            const AblationSettings& settings) {
  Rows train_x, test_x;
  std::vector<int> train_y, test_y;
  for (auto i : split.train) {
    train_x.push_back(rows[i]);
    train_y.push_back(labels[i]);
  }
  for (auto i : split.test) {
    test_x.push_back(rows[i]);
    test_y.push_back(labels[i]);
  }
  LearnerConfig lc = settings.learner;
  lc.split_seed = mix_seed(seed, 0xF01D);
  auto search = search_hyperparams(train_x, train_y, settings.space, settings.search_budget, mix_seed(seed, 0x5EA4), lc);
  auto ens = ensemble_from_results(std::move(search.top), train_y);

  AblationRow row;
  row.config = cfg;
  row.n_train = train_x.size();
  row.n_test = test_x.size();
  row.input_dim = rows.empty() ? 0 : rows.front().size();
  row.variance_threshold = settings.variance_threshold.value_or(ens.variance_threshold);

  std::vector<int> preds;
  std::vector<double> vars;
  std::size_t incorrect = 0, routed = 0, correct = 0, accepted = 0;
  for (std::size_t t = 0; t < test_x.size(); ++t) {
    auto p = ensemble_predict(ens, test_x[t]);
    TestPrediction tp{ids[split.test[t]], test_y[t], p.cachectic ? 1 : 0, p.mean_prob, p.variance,
                      triage(p, row.variance_threshold)};
    preds.push_back(tp.predicted);
    vars.push_back(tp.variance);
    const bool review = tp.verdict == TriageVerdict::expert_review;
    if (tp.predicted == tp.label) {
      ++correct;
      accepted += !review;
    } else {
      ++incorrect;
      routed += review;
    }
    if (settings.keep_predictions) row.predictions.push_back(std::move(tp));
  }
  row.confusion = confusion(preds, test_y);
  row.metrics = metrics(row.confusion);
  row.separation = confidence_separation(vars, preds, test_y);
  if (incorrect) row.triage.incorrect_routed = static_cast<double>(routed) / static_cast<double>(incorrect);
  if (correct) row.triage.correct_accepted = static_cast<double>(accepted) / static_cast<double>(correct);
  return row;
}

}  // namespace

AblationReport run_ablation(const Cohort& cohort, std::span<const AblationConfig> configs, std::uint64_t seed,
                            const AblationSettings& settings, const QuestionBattery& battery, ChatClient* extractor) {
  if (cohort.empty()) throw Error(Errc::EmptyCohort, "ablation needs a non-empty cohort");
  const auto labels = staging_labels(cohort, settings.staging);
  const auto split = stratified_split(labels, settings.test_fraction, mix_seed(seed, 0x5117));

  const bool any_notes = std::any_of(configs.begin(), configs.end(),
                                     [](const auto& c) { return c.embeddings || c.schema.notes; });
  const bool any_embed = std::any_of(configs.begin(), configs.end(), [](const auto& c) { return c.embeddings; });
  const bool any_image = std::any_of(configs.begin(), configs.end(), [](const auto& c) { return c.image; });

  std::map<std::string, ExtractionResult> extractions;
  ExtractionIndex answers;
  if (any_notes) {
    KeywordChatClient keyword(battery);
    ChatClient& client = extractor ? *extractor : keyword;
    for (auto& e : extract_cohort(cohort, battery, client)) extractions.emplace(e.patient_id, std::move(e));
    for (const auto& r : cohort)
      if (r.notes && !r.notes->notes.empty()) answers.emplace(r.patient_id, tabularize(extractions.at(r.patient_id)));
  }

  PatientEmbeddings embeddings;
  if (any_embed) {
    HashingTextProvider text(settings.text_dim, settings.embedding_seed);
    HashingImageProvider image(settings.image_dim, settings.embedding_seed);
    embeddings = embed_cohort(cohort, extractions, text, any_image ? &image : nullptr);
  }

  Cohort train_records;
  for (auto i : split.train) train_records.push_back(cohort[i]);
  const auto imputer = fit_imputer(train_records, false);
  Cohort imputed;
  imputed.reserve(cohort.size());
  for (const auto& r : cohort) imputed.push_back(impute(r, imputer));

  std::vector<std::string> ids;
  for (const auto& r : cohort) ids.push_back(r.patient_id);

  AblationReport report;
  report.seed = seed;
  report.config_hash = sha256_hex(settings.to_json().dump());
  for (const auto& cfg : configs) {
    Rows rows;
    if (cfg.embeddings) {
      const FusionDims dims{settings.text_dim, settings.text_dim, cfg.image ? settings.image_dim : 0};
      for (const auto& id : ids) {
        auto in = embeddings.at(id);
        if (!cfg.image) in[2].reset();
        rows.push_back(fuse_concat(id, in, dims).fused);
      }
    } else {
      rows = featurize(imputed, answers, cfg.schema, battery).rows;
    }
    spdlog::info("ablation seed {}: {} ({} inputs)", seed, cfg.name, rows.front().size());
    report.rows.push_back(evaluate_config(cfg, rows, ids, labels, split, seed, settings));
    spdlog::info("ablation seed {}: {} accuracy {:.4f}", seed, cfg.name, report.rows.back().metrics.accuracy);
  }
  return report;
}

namespace {

ordered_json optional_number(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(); }

}  // namespace

ordered_json AblationReport::to_json() const {
  ordered_json j;
  j["format"] = "cachexia-ablation-report";
  j["version"] = kAblationReportVersion;
  j["seed"] = seed;
  j["config_hash"] = config_hash;
  j["rows"] = ordered_json::array();
  for (const auto& r : rows) {
    ordered_json jr;
    jr["config"] = r.config.to_json();
    jr["n_train"] = r.n_train;
    jr["n_test"] = r.n_test;
    jr["input_dim"] = r.input_dim;
    jr["confusion"] = {{"tp", r.confusion.tp}, {"fp", r.confusion.fp}, {"fn", r.confusion.fn}, {"tn", r.confusion.tn}};
    jr["metrics"] = r.metrics.to_json();
    jr["confidence"] = r.separation.to_json();
    jr["variance_threshold"] = r.variance_threshold;
    jr["triage"] = {{"incorrect_routed", optional_number(r.triage.incorrect_routed)},
                    {"correct_accepted", optional_number(r.triage.correct_accepted)}};
    if (!r.predictions.empty()) {
      auto& preds = jr["predictions"] = ordered_json::array();
      for (const auto& p : r.predictions)
        preds.push_back({{"patient_id", p.patient_id},
                         {"label", p.label},
                         {"predicted", p.predicted},
                         {"mean_prob", p.mean_prob},
                         {"variance", p.variance},
                         {"triage", to_string(p.verdict)}});
    }
    j["rows"].push_back(std::move(jr));
  }
  return j;
}

std::string AblationReport::to_csv() const {
  std::ostringstream out;
  out << "# config_hash: " << config_hash << '\n';
  out << "# seed: " << seed << '\n';
  csv::write_row(out, {"config", "modalities", "n_train", "n_test", "accuracy", "precision", "recall", "f1",
                       "mean_var_correct", "mean_var_incorrect", "median_var_correct", "median_var_incorrect",
                       "variance_threshold", "incorrect_routed", "correct_accepted"});
  auto num = [](const std::optional<double>& v) { return v ? csv::format_number(*v) : std::string(); };
  for (const auto& r : rows) {
    const auto& c = r.separation.correct;
    const auto& w = r.separation.incorrect;
    csv::write_row(out, {r.config.name, r.config.modalities, std::to_string(r.n_train), std::to_string(r.n_test),
                         csv::format_number(r.metrics.accuracy), csv::format_number(r.metrics.precision),
                         csv::format_number(r.metrics.recall), csv::format_number(r.metrics.f1),
                         num(c ? std::optional(c->mean) : std::nullopt), num(w ? std::optional(w->mean) : std::nullopt),
                         num(c ? std::optional(c->median) : std::nullopt),
                         num(w ? std::optional(w->median) : std::nullopt), csv::format_number(r.variance_threshold),
                         num(r.triage.incorrect_routed), num(r.triage.correct_accepted)});
  }
  return out.str();
}

void save_ablation_report(const AblationReport& report, const std::filesystem::path& json_path,
                          const std::filesystem::path& csv_path) {
  {
    std::ofstream out(json_path, std::ios::binary);
    if (!out) throw Error(Errc::Io, fmt::format("cannot write {}", json_path.string()));
    out << report.to_json().dump(2) << '\n';
  }
  std::ofstream out(csv_path, std::ios::binary);
  if (!out) throw Error(Errc::Io, fmt::format("cannot write {}", csv_path.string()));
  out << report.to_csv();
}

}  // namespace cachexia
