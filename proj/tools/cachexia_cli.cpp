// Command-line front end: one subcommand per pipeline stage plus `run` for a whole pipeline.

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "cachexia/ablation.hpp"
#include "cachexia/chat_client.hpp"
#include "cachexia/cohort.hpp"
#include "cachexia/csv.hpp"
#include "cachexia/emb_file.hpp"
#include "cachexia/error.hpp"
#include "cachexia/hashing.hpp"
#include "cachexia/learner.hpp"
#include "cachexia/pipeline.hpp"
#include "cachexia/synth.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;
using namespace cachexia;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitFailure = 3;

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::ConfigInvalid, fmt::format("cannot read {}", path));
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(Errc::ConfigInvalid, fmt::format("{}: {}", path, e.what()));
  }
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, fmt::format("cannot write {}", path));
  out << text;
}

// Lineage hash for artifacts produced by a single-step command.
std::string options_hash(const std::string& command, ordered_json options) {
  options["command"] = command;
  return sha256_hex(options.dump());
}

QuestionBattery battery_from(const std::string& spec) {
  if (spec.empty() || spec == "builtin") return QuestionBattery::defaults();
  return load_battery(spec);
}

StagingConfig staging_from(const std::string& path) {
  if (path.empty()) return {};
  return StagingConfig::from_json(read_json_file(path));
}

std::map<std::string, int> labels_from(const std::string& spec, const std::string& cohort_path,
                                       const std::string& staging_path, bool train_only) {
  if (spec == "from-staging") {
    if (cohort_path.empty()) throw Error(Errc::ConfigInvalid, "--labels from-staging needs --cohort");
    auto cohort = load_cohort(cohort_path);
    auto cfg = staging_from(staging_path);
    std::map<std::string, int> out;
    for (const auto& r : cohort) {
      try {
        out[r.patient_id] = assign_stage(r, cfg).binary == CachexiaStatus::cachectic;
      } catch (const Error& e) {
        if (e.code() != Errc::Unstageable) throw;
      }
    }
    return out;
  }
  auto s = read_stages_csv(spec);
  if (!train_only) return s.label;
  std::map<std::string, int> out;
  for (const auto& [id, y] : s.label) {
    auto it = s.in_test.find(id);
    if (it == s.in_test.end() || !it->second) out[id] = y;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("cachexia");
  spdlog::set_default_logger(logger);

  CLI::App app{"Cancer cachexia multimodal prediction toolkit"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  // generate-cohort
  auto* gen = app.add_subcommand("generate-cohort", "Write a synthetic cohort with gold labels");
  std::string gen_config, gen_out;
  std::uint64_t gen_seed = 7;
  gen->add_option("--config", gen_config, "Generator settings (JSON)");
  gen->add_option("--seed", gen_seed, "Random seed");
  gen->add_option("--out", gen_out, "Output cohort (JSON lines)")->required();

  // stage
  auto* stage = app.add_subcommand("stage", "Assign cachexia stages and the train/test split");
  std::string stage_cohort_path, stage_rules, stage_out;
  double stage_test_fraction = 0.2;
  std::uint64_t stage_seed = 1;
  stage->add_option("--cohort", stage_cohort_path)->required();
  stage->add_option("--staging", stage_rules, "Staging config with a four-stage rule table (JSON)");
  stage->add_option("--test-fraction", stage_test_fraction);
  stage->add_option("--seed", stage_seed);
  stage->add_option("--out", stage_out)->required();

  // featurize
  auto* feat = app.add_subcommand("featurize", "Impute and encode tabular features");
  std::string feat_cohort, feat_modalities = "clinical,sm,labs", feat_extractions, feat_battery, feat_stages, feat_out;
  feat->add_option("--cohort", feat_cohort)->required();
  feat->add_option("--modalities", feat_modalities, "Comma list of clinical, sm, labs, notes");
  feat->add_option("--extractions", feat_extractions, "Note extractions (needed for the notes group)");
  feat->add_option("--battery", feat_battery, "Question battery file or 'builtin'");
  feat->add_option("--stages", feat_stages, "Stage file; the imputer is fitted on its train split");
  feat->add_option("--out", feat_out)->required();

  // extract-notes
  auto* ext = app.add_subcommand("extract-notes", "Answer the question battery from each patient's notes");
  std::string ext_cohort, ext_battery = "builtin", ext_provider = "keyword", ext_out;
  ChatClientConfig ext_chat;
  std::size_t ext_inflight = 4;
  ext->add_option("--cohort", ext_cohort)->required();
  ext->add_option("--battery", ext_battery, "Question battery file or 'builtin'");
  ext->add_option("--provider", ext_provider, "keyword or http");
  ext->add_option("--base-url", ext_chat.base_url);
  ext->add_option("--model", ext_chat.model);
  ext->add_option("--timeout", ext_chat.timeout_s);
  ext->add_option("--max-inflight", ext_inflight);
  ext->add_option("--out", ext_out)->required();

  // score-extractions
  auto* score = app.add_subcommand("score-extractions", "Score extractions against a human answer key");
  std::string score_extractions, score_gold, score_out;
  std::optional<double> score_value;
  std::size_t score_questions = 26;
  score->add_option("--extractions,--pred", score_extractions);
  score->add_option("--gold", score_gold, "Answer key: {patient_id: [yes|no|not_given, ...]}");
  score->add_option("--score", score_value, "Convert a raw score to a percentage and exit");
  score->add_option("--questions", score_questions, "Battery size for --score");
  score->add_option("--out", score_out);

  // embed
  auto* emb = app.add_subcommand("embed", "Embed tabular text, note text and image series; write the fused matrix");
  std::string emb_cohort, emb_extractions, emb_out_dir, emb_out, emb_sources = "tabular,notes,image", emb_provider;
  ProviderSettings emb_text;
  ProviderSettings emb_image = ProviderSettings::image_defaults();
  std::string emb_image_file;
  emb->add_option("--cohort", emb_cohort)->required();
  emb->add_option("--extractions", emb_extractions);
  emb->add_option("--text-provider", emb_text.kind, "stub or http");
  emb->add_option("--text-dim", emb_text.dim);
  emb->add_option("--text-model", emb_text.model);
  emb->add_option("--base-url", emb_text.base_url);
  emb->add_option("--image-provider", emb_image.kind, "none, stub or file");
  emb->add_option("--image-dim", emb_image.dim);
  emb->add_option("--image-file", emb_image_file, "Precomputed per-slice vectors (EMB1 or CSV)");
  emb->add_option("--sources", emb_sources, "Comma list of tabular, notes, image");
  emb->add_option("--provider", emb_provider, "Shorthand: stub, file:<path> (image vectors) or http:<url> (text)");
  emb->add_option("--out", emb_out, "Fused vectors as EMB1, or a feature CSV when the name ends in .csv");
  emb->add_option("--out-dir", emb_out_dir, "Per-source EMB1 files plus fused.csv");

  // train
  auto* train = app.add_subcommand("train", "Search architectures and train the five-member ensemble");
  std::string train_features, train_labels, train_cohort, train_staging, train_settings, train_out;
  std::size_t train_budget = 6;
  std::uint64_t train_seed = 1;
  train->add_option("--features", train_features)->required();
  train->add_option("--labels", train_labels, "Stage file, or 'from-staging' with --cohort")->required();
  train->add_option("--cohort", train_cohort);
  train->add_option("--staging", train_staging);
  train->add_option("--settings", train_settings, "Learner and search settings (JSON)");
  train->add_option("--budget", train_budget);
  train->add_option("--seed", train_seed);
  train->add_option("--out", train_out)->required();

  // predict
  auto* pred = app.add_subcommand("predict", "Ensemble predictions with variance and triage");
  std::string pred_model, pred_features, pred_out;
  std::optional<double> pred_threshold;
  pred->add_option("--model", pred_model)->required();
  pred->add_option("--features", pred_features)->required();
  pred->add_option("--threshold", pred_threshold, "Variance threshold for expert review");
  pred->add_option("--out", pred_out)->required();

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "Metrics, confidence separation and triage shares");
  std::string eval_preds, eval_labels, eval_out;
  bool eval_test_only = false;
  eval->add_option("--predictions", eval_preds)->required();
  eval->add_option("--labels", eval_labels, "Stage file")->required();
  eval->add_flag("--test-only", eval_test_only, "Only rows in the stage file's test split");
  eval->add_option("--out", eval_out);

  // ablation
  auto* abl = app.add_subcommand("ablation", "Run the five-configuration modality ablation");
  std::string abl_cohort, abl_settings, abl_out, abl_csv, abl_battery = "builtin";
  std::vector<std::uint64_t> abl_seeds{1};
  std::vector<std::size_t> abl_configs;
  abl->add_option("--cohort", abl_cohort)->required();
  abl->add_option("--settings", abl_settings, "Ablation settings (JSON)");
  abl->add_option("--battery", abl_battery);
  abl->add_option("--seeds", abl_seeds, "One report per seed")->delimiter(',');
  abl->add_option("--configs", abl_configs, "Subset of experiments 1-5")->delimiter(',');
  abl->add_option("--out", abl_out, "Report JSON (with several seeds, seed number is appended)")->required();
  abl->add_option("--csv", abl_csv, "CSV mirror path (default: report path with .csv)");

  // run
  auto* run = app.add_subcommand("run", "Run the whole pipeline from one config file");
  std::string run_config, run_out;
  run->add_option("--config", run_config)->required();
  run->add_option("--out", run_out, "Override paths.out_dir");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (*gen) {
      SynthConfig cfg = gen_config.empty() ? SynthConfig{} : SynthConfig::from_json(read_json_file(gen_config));
      auto cohort = generate(cfg, gen_seed);
      save_cohort(cohort, gen_out);
      spdlog::info("wrote {} patients to {}", cohort.size(), gen_out);
    } else if (*stage) {
      auto cohort = load_cohort(stage_cohort_path);
      auto hash = options_hash("stage", {{"cohort_sha256", sha256_file(stage_cohort_path)},
                                         {"staging", staging_from(stage_rules).to_json()},
                                         {"test_fraction", stage_test_fraction},
                                         {"seed", stage_seed}});
      auto rows = stage_cohort(cohort, staging_from(stage_rules), stage_test_fraction, stage_seed);
      write_stages_csv(rows, stage_out, hash);
    } else if (*feat) {
      auto schema = SchemaConfig::parse(feat_modalities);
      if (schema.notes && feat_extractions.empty())
        throw Error(Errc::ConfigInvalid, "the notes group needs --extractions");
      auto cohort = load_cohort(feat_cohort);
      auto battery = battery_from(feat_battery);
      Cohort train;
      if (!feat_stages.empty()) {
        auto s = read_stages_csv(feat_stages);
        for (const auto& r : cohort)
          if (auto it = s.in_test.find(r.patient_id); it != s.in_test.end() && !it->second) train.push_back(r);
      } else {
        train = cohort;
      }
      auto imputer = fit_imputer(train, false);
      Cohort imputed;
      for (const auto& r : cohort) imputed.push_back(impute(r, imputer));
      ExtractionIndex answers;
      if (!feat_extractions.empty())
        for (const auto& e : read_extractions(feat_extractions, "")) answers.emplace(e.patient_id, tabularize(e));
      for (const auto& r : cohort)
        if (!r.notes || r.notes->notes.empty()) answers.erase(r.patient_id);
      auto m = featurize(imputed, answers, schema, battery);
      m.config_hash = options_hash(
          "featurize", {{"cohort_sha256", sha256_file(feat_cohort)},
                        {"modalities", schema.to_string()},
                        {"battery", battery.version()},
                        {"extractions_sha256", feat_extractions.empty() ? "" : sha256_file(feat_extractions)},
                        {"stages_sha256", feat_stages.empty() ? "" : sha256_file(feat_stages)}});
      write_feature_csv(m, feat_out);
    } else if (*ext) {
      auto cohort = load_cohort(ext_cohort);
      auto battery = battery_from(ext_battery);
      std::unique_ptr<ChatClient> client;
      if (ext_provider == "http")
        client = std::make_unique<HttpChatClient>(ext_chat);
      else if (ext_provider == "keyword")
        client = std::make_unique<KeywordChatClient>(battery);
      else
        throw Error(Errc::ConfigInvalid, fmt::format("unknown provider '{}'", ext_provider));
      auto results = extract_cohort(cohort, battery, *client, ext_inflight);
      auto hash = options_hash("extract-notes", {{"cohort_sha256", sha256_file(ext_cohort)},
                                                 {"battery", battery.version()},
                                                 {"model", client->model_name()}});
      write_extractions(results, ext_out, hash);
    } else if (*score) {
      if (score_value) {
        std::cout << fmt::format("{:.2f}\n", score_percent(*score_value, score_questions));
        return 0;
      }
      if (score_extractions.empty() || score_gold.empty())
        throw Error(Errc::ConfigInvalid, "need --extractions and --gold, or --score");
      auto gold = load_gold_answers(score_gold);
      ordered_json out = ordered_json::object();
      double total = 0.0;
      std::size_t n = 0, questions = 0;
      for (const auto& e : read_extractions(score_extractions, "")) {
        auto it = gold.find(e.patient_id);
        if (it == gold.end()) continue;
        auto s = score_against_gold(answers_of(e), it->second);
        out[e.patient_id] = {{"score", s.score}, {"percent", s.percent}};
        total += s.score;
        questions = it->second.size();
        ++n;
      }
      ordered_json report{{"patients", n},
                          {"mean_score", n ? ordered_json(total / static_cast<double>(n)) : ordered_json()},
                          {"mean_percent", n ? ordered_json(score_percent(total / static_cast<double>(n), questions))
                                             : ordered_json()},
                          {"per_patient", out}};
      if (score_out.empty())
        std::cout << report.dump(2) << '\n';
      else
        write_file(score_out, report.dump(2) + "\n");
    } else if (*emb) {
      if (emb_out.empty() && emb_out_dir.empty()) throw Error(Errc::ConfigInvalid, "embed needs --out or --out-dir");
      std::set<std::string> sources;
      std::istringstream list(emb_sources);
      for (std::string item; std::getline(list, item, ',');) {
        if (item != "tabular" && item != "notes" && item != "image")
          throw Error(Errc::ConfigInvalid, fmt::format("unknown embedding source '{}'", item));
        sources.insert(item);
      }
      if (!sources.count("tabular")) throw Error(Errc::ConfigInvalid, "the tabular source is always embedded");
      if (emb_provider == "stub") {
        emb_text.kind = "stub";
        if (sources.count("image") && emb_image.kind == "none") emb_image.kind = "stub";
      } else if (emb_provider.rfind("file:", 0) == 0) {
        emb_image.kind = "file";
        emb_image_file = emb_provider.substr(5);
      } else if (emb_provider.rfind("http:", 0) == 0) {
        emb_text.kind = "http";
        emb_text.base_url = emb_provider.substr(5);
      } else if (!emb_provider.empty()) {
        throw Error(Errc::ConfigInvalid, fmt::format("unknown provider '{}'", emb_provider));
      }
      if (!sources.count("notes")) emb_extractions.clear();
      if (!sources.count("image")) emb_image.kind = "none";
      if (!emb_image_file.empty()) emb_image.path = emb_image_file;
      auto cohort = load_cohort(emb_cohort);
      std::map<std::string, ExtractionResult> extractions;
      if (!emb_extractions.empty())
        for (auto& e : read_extractions(emb_extractions, "")) extractions.emplace(e.patient_id, std::move(e));
      auto text = make_text_provider(emb_text);
      auto image = make_image_provider(emb_image);
      auto embeddings = embed_cohort(cohort, extractions, *text, image.get());
      const FusionDims dims{text->dimension(), emb_extractions.empty() ? 0 : text->dimension(),
                            image ? image->dimension() : 0};
      auto hash = options_hash("embed", {{"cohort_sha256", sha256_file(emb_cohort)},
                                         {"extractions_sha256", emb_extractions.empty() ? "" : sha256_file(emb_extractions)},
                                         {"text", emb_text.to_json()},
                                         {"image", emb_image.to_json()}});
      std::vector<std::string> ids;
      for (const auto& r : cohort) ids.push_back(r.patient_id);
      auto m = fused_matrix(embeddings, ids, dims);
      m.config_hash = hash;
      if (!emb_out_dir.empty()) {
        fs::create_directories(emb_out_dir);
        const fs::path dir(emb_out_dir);
        write_source_embeddings(embeddings, EmbeddingSource::tabular_text, dims[0], dir / "tabular_text.emb1", hash);
        if (dims[1])
          write_source_embeddings(embeddings, EmbeddingSource::notes_text, dims[1], dir / "notes_text.emb1", hash);
        if (dims[2]) write_source_embeddings(embeddings, EmbeddingSource::image, dims[2], dir / "image.emb1", hash);
        write_feature_csv(m, dir / "fused.csv");
      }
      if (!emb_out.empty()) {
        if (fs::path(emb_out).extension() == ".csv") {
          write_feature_csv(m, emb_out);
        } else {
          EmbeddingFile file;
          file.dimension = static_cast<std::uint32_t>(m.schema.size());
          for (std::size_t i = 0; i < m.size(); ++i) {
            EmbeddingRecord rec;
            rec.key = id_hash16(m.ids[i]);
            for (double v : m.rows[i]) rec.values.push_back(static_cast<float>(v));
            file.records.push_back(std::move(rec));
          }
          write_emb1(file, emb_out);
        }
      }
    } else if (*train) {
      auto m = read_feature_csv(train_features);
      auto labels = labels_from(train_labels, train_cohort, train_staging, true);
      AblationSettings settings;
      if (!train_settings.empty()) settings = AblationSettings::from_json(read_json_file(train_settings));
      Rows x;
      std::vector<int> y;
      for (std::size_t i = 0; i < m.size(); ++i)
        if (auto it = labels.find(m.ids[i]); it != labels.end()) {
          x.push_back(m.rows[i]);
          y.push_back(it->second);
        }
      spdlog::info("training on {} labelled rows with {} features", x.size(), m.schema.size());
      LearnerConfig lc = settings.learner;
      lc.split_seed = mix_seed(train_seed, 0xF01D);
      auto search = search_hyperparams(x, y, settings.space, train_budget, mix_seed(train_seed, 0x5EA4), lc);
      auto ens = ensemble_from_results(std::move(search.top), y);
      ens.schema_fingerprint = m.schema.fingerprint();
      ens.config_hash = m.config_hash;
      ens.feature_names = m.schema.names();
      if (settings.variance_threshold) ens.variance_threshold = *settings.variance_threshold;
      save_ensemble(ens, train_out);
      spdlog::info("ensemble of {} networks, variance threshold {:.6g}", ens.network_count(), ens.variance_threshold);
    } else if (*pred) {
      auto ens = load_ensemble(pred_model);
      auto m = read_features_checked(pred_features, ens.config_hash);
      auto preds = ensemble_predict(ens, m);
      write_predictions_csv(preds, pred_threshold.value_or(ens.variance_threshold), pred_out, ens.config_hash);
    } else if (*eval) {
      auto preds = read_predictions_csv(eval_preds);
      auto labels = read_stages_csv(eval_labels);
      auto report = evaluate_predictions(preds, labels, eval_test_only);
      if (eval_out.empty())
        std::cout << report.dump(2) << '\n';
      else
        write_file(eval_out, report.dump(2) + "\n");
    } else if (*abl) {
      auto cohort = load_cohort(abl_cohort);
      AblationSettings settings;
      if (!abl_settings.empty()) settings = AblationSettings::from_json(read_json_file(abl_settings));
      auto all = default_ablation_configs();
      std::vector<AblationConfig> configs;
      if (abl_configs.empty()) configs = all;
      for (auto c : abl_configs) {
        if (c < 1 || c > all.size()) throw Error(Errc::ConfigInvalid, fmt::format("no experiment {}", c));
        configs.push_back(all[c - 1]);
      }
      auto battery = battery_from(abl_battery);
      for (auto seed : abl_seeds) {
        auto report = run_ablation(cohort, configs, seed, settings, battery);
        fs::path json_path(abl_out);
        if (abl_seeds.size() > 1)
          json_path = json_path.parent_path() / fmt::format("{}_seed{}{}", json_path.stem().string(), seed,
                                                            json_path.extension().string());
        fs::path csv_path = abl_csv.empty() || abl_seeds.size() > 1 ? fs::path(json_path).replace_extension(".csv")
                                                                     : fs::path(abl_csv);
        save_ablation_report(report, json_path, csv_path);
        for (const auto& r : report.rows)
          spdlog::info("seed {} {}: accuracy {:.4f}", seed, r.config.name, r.metrics.accuracy);
      }
    } else if (*run) {
      auto cfg = load_pipeline_config(run_config);
      if (!run_out.empty()) cfg.out_dir = run_out;
      auto manifest = run_pipeline(cfg);
      std::cout << manifest.to_json().dump(2) << '\n';
    }
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    switch (e.code()) {
      case Errc::ConfigInvalid:
      case Errc::InvalidConfig:
      case Errc::ConfigHashMismatch:
      case Errc::BudgetTooSmall:
        return kExitConfig;
      default:
        return kExitFailure;
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitFailure;
  }
  return 0;
}
