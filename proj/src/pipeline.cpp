#include "cachexia/pipeline.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <functional>
#include <set>

#include "cachexia/csv.hpp"
#include "cachexia/emb_file.hpp"
#include "cachexia/error.hpp"
#include "cachexia/hashing.hpp"
#include "cachexia/metrics.hpp"

namespace cachexia {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

[[noreturn]] void invalid(const std::string& msg) { throw Error(Errc::ConfigInvalid, msg); }

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* section) {
  if (!j.is_object()) invalid(fmt::format("section '{}' must be an object", section));
  for (const auto& [k, v] : j.items())
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }))
      invalid(fmt::format("unknown key '{}' in section '{}'", k, section));
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, fmt::format("cannot write {}", path.string()));
  out << text;
  if (!out) throw Error(Errc::Io, fmt::format("write failed for {}", path.string()));
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, fmt::format("cannot read {}", path.string()));
  return json::parse(in);
}

void check_hash(const std::string& found, const std::string& expect, const fs::path& path) {
  if (!expect.empty() && found != expect)
    throw Error(Errc::ConfigHashMismatch,
                fmt::format("{} was produced under config {} but this run is {}", path.string(),
                            found.empty() ? "<none>" : found, expect));
}

}  // namespace

ordered_json ProviderSettings::to_json() const {
  return ordered_json{{"kind", kind},       {"dim", dim},   {"seed", seed},           {"base_url", base_url},
                      {"model", model},     {"path", path.string()}, {"timeout_s", timeout_s},
                      {"token_limit", token_limit}};
}

ProviderSettings ProviderSettings::from_json(const json& j, const ProviderSettings& d, const fs::path& base) {
  check_keys(j, {"kind", "dim", "seed", "base_url", "model", "path", "timeout_s", "token_limit"}, "provider");
  ProviderSettings s = d;
  s.kind = j.value("kind", d.kind);
  s.dim = j.value("dim", d.dim);
  s.seed = j.value("seed", d.seed);
  s.base_url = j.value("base_url", d.base_url);
  s.model = j.value("model", d.model);
  s.path = resolve(base, j.value("path", std::string()));
  s.timeout_s = j.value("timeout_s", d.timeout_s);
  s.token_limit = j.value("token_limit", d.token_limit);
  return s;
}

void PipelineConfig::validate() const {
  if (cohort.empty()) invalid("paths.cohort is required");
  if (!fs::exists(cohort)) invalid(fmt::format("cohort file {} does not exist", cohort.string()));
  if (out_dir.empty()) invalid("paths.out_dir is required");
  if (notes_enabled) {
    if (battery.empty()) invalid("notes are enabled but paths.battery is missing");
    if (battery != "builtin" && !fs::exists(battery))
      invalid(fmt::format("battery file {} does not exist", battery));
    if (notes_provider != "keyword" && notes_provider != "http")
      invalid(fmt::format("unknown notes provider '{}'", notes_provider));
  }
  if (schema.notes && !notes_enabled) invalid("modality 'notes' requires notes.enabled");
  if (!gold_answers.empty() && !fs::exists(gold_answers))
    invalid(fmt::format("gold answer file {} does not exist", gold_answers.string()));
  if (!schema.clinical && !schema.sm && !schema.labs && !schema.notes && !embeddings_enabled)
    invalid("no modality enabled");
  if (embeddings_enabled) {
    if (text_provider.kind != "stub" && text_provider.kind != "http")
      invalid(fmt::format("unknown text provider '{}'", text_provider.kind));
    if (text_provider.dim == 0) invalid("text provider dimension must be positive");
    if (text_provider.kind == "http" && text_provider.model.empty()) invalid("http text provider needs a model");
    const auto& ik = image_provider.kind;
    if (ik != "none" && ik != "stub" && ik != "file") invalid(fmt::format("unknown image provider '{}'", ik));
    if (ik == "stub" && image_provider.dim == 0) invalid("image provider dimension must be positive");
    if (ik == "file" && !fs::exists(image_provider.path))
      invalid(fmt::format("image embedding file {} does not exist", image_provider.path.string()));
  }
  if (search_budget < kEnsembleSize) invalid(fmt::format("search budget must be at least {}", kEnsembleSize));
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) invalid("test_fraction must lie in (0, 1)");
  if (variance_threshold && !(*variance_threshold > 0.0)) invalid("variance_threshold must be positive");
  if (learner.folds < 2) invalid("learner.folds must be at least 2");
}

ordered_json PipelineConfig::to_json() const {
  ordered_json j;
  j["paths"] = {{"cohort", cohort.string()}, {"battery", battery}, {"gold_answers", gold_answers.string()}};
  j["modalities"] = schema.to_string();
  j["notes"] = {{"enabled", notes_enabled},       {"provider", notes_provider}, {"base_url", chat.base_url},
                {"model", chat.model},            {"timeout_s", chat.timeout_s}, {"temperature", chat.temperature},
                {"max_inflight", max_inflight}};
  j["embeddings"] = {
      {"enabled", embeddings_enabled}, {"text", text_provider.to_json()}, {"image", image_provider.to_json()}};
  j["staging"] = staging.to_json();
  j["learner"] = learner.to_json();
  j["search"] = {{"budget", search_budget}, {"space", space.to_json()}};
  j["seed"] = seed;
  j["test_fraction"] = test_fraction;
  j["variance_threshold"] = variance_threshold ? ordered_json(*variance_threshold) : ordered_json();
  return j;
}

std::string PipelineConfig::hash() const { return sha256_hex(to_json().dump()); }

QuestionBattery PipelineConfig::load_battery() const {
  if (battery.empty() || battery == "builtin") return QuestionBattery::defaults();
  return cachexia::load_battery(battery);
}

PipelineConfig PipelineConfig::from_json(const json& j, const fs::path& base) {
  PipelineConfig c;
  try {
    check_keys(j, {"paths", "modalities", "notes", "embeddings", "staging", "learner", "search", "seed",
                   "test_fraction", "variance_threshold"},
               "root");
    const auto& p = j.at("paths");
    check_keys(p, {"cohort", "battery", "gold_answers", "out_dir"}, "paths");
    c.cohort = resolve(base, p.value("cohort", std::string()));
    auto battery = p.value("battery", std::string());
    c.battery = battery.empty() || battery == "builtin" ? battery : resolve(base, battery).string();
    c.gold_answers = resolve(base, p.value("gold_answers", std::string()));
    c.out_dir = resolve(base, p.value("out_dir", std::string()));
    if (j.contains("modalities")) c.schema = SchemaConfig::parse(j.at("modalities").get<std::string>());
    if (j.contains("notes")) {
      const auto& n = j.at("notes");
      check_keys(n, {"enabled", "provider", "base_url", "model", "timeout_s", "temperature", "max_inflight"}, "notes");
      c.notes_enabled = n.value("enabled", false);
      c.notes_provider = n.value("provider", c.notes_provider);
      c.chat.base_url = n.value("base_url", c.chat.base_url);
      c.chat.model = n.value("model", c.chat.model);
      c.chat.timeout_s = n.value("timeout_s", c.chat.timeout_s);
      c.chat.temperature = n.value("temperature", c.chat.temperature);
      c.max_inflight = n.value("max_inflight", c.max_inflight);
    }
    if (j.contains("embeddings")) {
      const auto& e = j.at("embeddings");
      check_keys(e, {"enabled", "text", "image"}, "embeddings");
      c.embeddings_enabled = e.value("enabled", false);
      if (e.contains("text")) c.text_provider = ProviderSettings::from_json(e.at("text"), c.text_provider, base);
      if (e.contains("image")) c.image_provider = ProviderSettings::from_json(e.at("image"), c.image_provider, base);
    }
    if (j.contains("staging")) c.staging = StagingConfig::from_json(j.at("staging"));
    if (j.contains("learner")) c.learner = LearnerConfig::from_json(j.at("learner"));
    if (j.contains("search")) {
      const auto& s = j.at("search");
      check_keys(s, {"budget", "space"}, "search");
      c.search_budget = s.value("budget", c.search_budget);
      if (s.contains("space")) c.space = SearchSpace::from_json(s.at("space"));
    }
    c.seed = j.value("seed", c.seed);
    c.test_fraction = j.value("test_fraction", c.test_fraction);
    if (j.contains("variance_threshold") && !j.at("variance_threshold").is_null())
      c.variance_threshold = j.at("variance_threshold").get<double>();
  } catch (const json::exception& e) {
    invalid(e.what());
  } catch (const std::invalid_argument& e) {
    invalid(e.what());
  } catch (const Error& e) {
    if (e.code() == Errc::ConfigInvalid) throw;
    invalid(e.what());
  }
  return c;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) invalid(fmt::format("cannot read config {}", path.string()));
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    invalid(fmt::format("{}: {}", path.string(), e.what()));
  }
  return PipelineConfig::from_json(j, path.parent_path());
}

ordered_json RunManifest::to_json() const {
  ordered_json j;
  j["format"] = "cachexia-run-manifest";
  j["version"] = 1;
  j["config_hash"] = config_hash;
  j["steps"] = ordered_json::array();
  for (const auto& s : steps) {
    ordered_json outs = ordered_json::array();
    for (const auto& o : s.outputs) outs.push_back({{"path", o.path}, {"sha256", o.sha256}});
    j["steps"].push_back({{"name", s.name}, {"status", s.status}, {"outputs", std::move(outs)}});
  }
  j["summary"] = summary;
  return j;
}

RunManifest RunManifest::from_json(const json& j) {
  RunManifest m;
  m.config_hash = j.at("config_hash").get<std::string>();
  for (const auto& s : j.at("steps")) {
    StepRecord r{s.at("name").get<std::string>(), s.at("status").get<std::string>(), {}};
    for (const auto& o : s.at("outputs"))
      r.outputs.push_back({o.at("path").get<std::string>(), o.at("sha256").get<std::string>()});
    m.steps.push_back(std::move(r));
  }
  m.summary = j.value("summary", ordered_json::object());
  return m;
}

std::vector<StageRow> stage_cohort(const Cohort& cohort, const StagingConfig& cfg, double test_fraction,
                                   std::uint64_t seed) {
  std::vector<StageRow> rows;
  std::vector<int> labels;
  std::vector<std::size_t> labelled;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    StageRow row{cohort[i].patient_id, std::nullopt, std::nullopt};
    try {
      row.assignment = assign_stage(cohort[i], cfg);
      labelled.push_back(i);
      labels.push_back(row.assignment->binary == CachexiaStatus::cachectic ? 1 : 0);
    } catch (const Error& e) {
      if (e.code() != Errc::Unstageable) throw;
      spdlog::warn("{}: unstageable, excluded from training and evaluation", cohort[i].patient_id);
    }
    rows.push_back(std::move(row));
  }
  auto split = stratified_split(labels, test_fraction, mix_seed(seed, 0x5117));
  for (auto k : split.train) rows[labelled[k]].in_test = false;
  for (auto k : split.test) rows[labelled[k]].in_test = true;
  return rows;
}

void write_stages_csv(const std::vector<StageRow>& rows, const fs::path& path, const std::string& config_hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, fmt::format("cannot write {}", path.string()));
  out << "# config_hash: " << config_hash << '\n';
  csv::write_row(out, {"patient_id", "system_used", "four_stage", "two_stage", "status", "label", "split"});
  for (const auto& r : rows) {
    if (!r.assignment) {
      csv::write_row(out, {r.patient_id, "unstageable", "", "", "", "", ""});
      continue;
    }
    const auto& a = *r.assignment;
    csv::write_row(out, {r.patient_id, std::string(to_string(a.system_used)),
                         a.four_stage ? std::string(to_string(*a.four_stage)) : std::string(),
                         a.two_stage ? std::string(to_string(*a.two_stage)) : std::string(),
                         std::string(to_string(a.binary)), a.binary == CachexiaStatus::cachectic ? "1" : "0",
                         r.in_test ? (*r.in_test ? "test" : "train") : ""});
  }
}

StageLabels read_stages_csv(const fs::path& path) {
  auto t = csv::read_file(path.string());
  auto id = t.column("patient_id"), label = t.column("label"), split = t.column("split");
  if (!id || !label) throw Error(Errc::SchemaMismatch, fmt::format("{} lacks patient_id/label columns", path.string()));
  StageLabels s;
  s.config_hash = t.meta("config_hash").value_or("");
  for (const auto& row : t.rows) {
    const auto& l = row.at(*label);
    if (l.empty()) continue;
    s.label[row.at(*id)] = l == "1" ? 1 : 0;
    if (split && !row.at(*split).empty()) s.in_test[row.at(*id)] = row.at(*split) == "test";
  }
  return s;
}

void write_extractions(const std::vector<ExtractionResult>& results, const fs::path& path,
                       const std::string& config_hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, fmt::format("cannot write {}", path.string()));
  for (const auto& r : results) {
    auto j = extraction_to_json(r);
    j["config_hash"] = config_hash;
    out << j.dump() << '\n';
  }
}

std::vector<ExtractionResult> read_extractions(const fs::path& path, const std::string& expect_hash) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, fmt::format("cannot read {}", path.string()));
  std::vector<ExtractionResult> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto j = json::parse(line);
    check_hash(j.value("config_hash", ""), expect_hash, path);
    out.push_back(extraction_from_json(j));
  }
  return out;
}

std::unique_ptr<EmbeddingProvider> make_text_provider(const ProviderSettings& s) {
  if (s.kind == "stub") return std::make_unique<HashingTextProvider>(s.dim, s.seed, s.token_limit);
  if (s.kind == "http")
    return std::make_unique<HttpEmbeddingProvider>(
        HttpEmbeddingConfig{s.base_url, "/api/embed", s.model, s.dim, s.token_limit, s.timeout_s});
  throw Error(Errc::ConfigInvalid, fmt::format("unknown text provider '{}'", s.kind));
}

std::unique_ptr<EmbeddingProvider> make_image_provider(const ProviderSettings& s) {
  if (s.kind == "none") return nullptr;
  if (s.kind == "stub") return std::make_unique<HashingImageProvider>(s.dim, s.seed);
  if (s.kind == "file")
    return std::make_unique<StoredImageProvider>(std::make_shared<const EmbeddingStore>(EmbeddingStore::load(s.path)));
  throw Error(Errc::ConfigInvalid, fmt::format("unknown image provider '{}'", s.kind));
}

void write_source_embeddings(const PatientEmbeddings& emb, EmbeddingSource source, std::size_t dim,
                             const fs::path& path, const std::string& config_hash) {
  const auto slot = static_cast<std::size_t>(source);
  EmbeddingFile file;
  file.dimension = static_cast<std::uint32_t>(dim);
  std::size_t present = 0;
  for (const auto& [id, parts] : emb) {
    if (!parts[slot]) continue;
    EmbeddingRecord rec;
    rec.key = id_hash16(id);
    for (double v : *parts[slot]) rec.values.push_back(static_cast<float>(v));
    file.records.push_back(std::move(rec));
    ++present;
  }
  write_emb1(file, path);
  ordered_json meta{{"config_hash", config_hash},
                    {"source", to_string(source)},
                    {"dimension", dim},
                    {"records", present},
                    {"sha256", sha256_file(path)}};
  write_text(fs::path(path.string() + ".meta.json"), meta.dump(2) + "\n");
}

FeatureMatrix fused_matrix(const PatientEmbeddings& emb, const std::vector<std::string>& ids, const FusionDims& dims) {
  FeatureMatrix m;
  for (std::size_t s = 0; s < kFusionOrder.size(); ++s)
    for (std::size_t i = 0; i < dims[s]; ++i)
      m.schema.columns.push_back({fmt::format("{}_{}", to_string(kFusionOrder[s]), i), ColumnKind::numeric});
  for (std::size_t s = 0; s < kFusionOrder.size(); ++s)
    if (dims[s] > 0)
      m.schema.columns.push_back({fmt::format("{}_present", to_string(kFusionOrder[s])), ColumnKind::presence_flag});
  for (const auto& id : ids) {
    auto in = emb.at(id);
    for (std::size_t s = 0; s < 3; ++s)
      if (dims[s] == 0) in[s].reset();
    m.ids.push_back(id);
    m.rows.push_back(fuse_concat(id, in, dims).fused);
  }
  return m;
}

void write_predictions_csv(const std::vector<EnsemblePrediction>& preds, double threshold, const fs::path& path,
                           const std::string& config_hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, fmt::format("cannot write {}", path.string()));
  out << "# config_hash: " << config_hash << '\n';
  out << "# variance_threshold: " << csv::format_number(threshold) << '\n';
  csv::write_row(out, {"patient_id", "mean_prob", "variance", "label", "triage"});
  for (const auto& p : preds)
    csv::write_row(out, {p.patient_id, csv::format_number(p.mean_prob), csv::format_number(p.variance),
                         p.cachectic ? "cachectic" : "non_cachectic", std::string(to_string(triage(p, threshold)))});
}

std::vector<PredictionRow> read_predictions_csv(const fs::path& path, std::string* config_hash) {
  auto t = csv::read_file(path.string());
  if (config_hash) *config_hash = t.meta("config_hash").value_or("");
  auto id = t.column("patient_id"), prob = t.column("mean_prob"), var = t.column("variance"),
       label = t.column("label"), tri = t.column("triage");
  if (!id || !prob || !var || !label || !tri)
    throw Error(Errc::SchemaMismatch, fmt::format("{} is not a prediction file", path.string()));
  std::vector<PredictionRow> out;
  for (const auto& r : t.rows)
    out.push_back({r.at(*id), std::stod(r.at(*prob)), std::stod(r.at(*var)), r.at(*label) == "cachectic",
                   r.at(*tri) == "expert_review" ? TriageVerdict::expert_review : TriageVerdict::auto_accept});
  return out;
}

ordered_json evaluate_predictions(const std::vector<PredictionRow>& preds, const StageLabels& labels, bool test_only) {
  std::vector<int> p, y;
  std::vector<double> v;
  std::size_t incorrect = 0, routed = 0, correct = 0, accepted = 0;
  for (const auto& r : preds) {
    auto it = labels.label.find(r.patient_id);
    if (it == labels.label.end()) continue;
    if (test_only) {
      auto t = labels.in_test.find(r.patient_id);
      if (t == labels.in_test.end() || !t->second) continue;
    }
    p.push_back(r.cachectic ? 1 : 0);
    y.push_back(it->second);
    v.push_back(r.variance);
    const bool review = r.verdict == TriageVerdict::expert_review;
    if (p.back() == y.back()) {
      ++correct;
      accepted += !review;
    } else {
      ++incorrect;
      routed += review;
    }
  }
  ordered_json j;
  j["n"] = p.size();
  if (p.empty()) {
    j["metrics"] = nullptr;
    return j;
  }
  auto cm = confusion(p, y);
  j["confusion"] = {{"tp", cm.tp}, {"fp", cm.fp}, {"fn", cm.fn}, {"tn", cm.tn}};
  j["metrics"] = metrics(cm).to_json();
  j["confidence"] = confidence_separation(v, p, y).to_json();
  j["triage"] = {
      {"incorrect_routed", incorrect ? ordered_json(static_cast<double>(routed) / static_cast<double>(incorrect))
                                     : ordered_json()},
      {"correct_accepted",
       correct ? ordered_json(static_cast<double>(accepted) / static_cast<double>(correct)) : ordered_json()}};
  return j;
}

FeatureMatrix read_features_checked(const fs::path& path, const std::string& expect_hash) {
  auto m = read_feature_csv(path);
  check_hash(m.config_hash, expect_hash, path);
  return m;
}

namespace {

class Runner {
 public:
  Runner(const PipelineConfig& cfg, ChatClient* client) : cfg_(cfg), client_(client), hash_(cfg.hash()) {}

  RunManifest run() {
    fs::create_directories(cfg_.out_dir);
    load_previous();
    manifest_.config_hash = hash_;
    step("stage", true, {"stages.csv"}, [&] { stage(); });
    std::vector<std::string> extract_outputs{"extractions.jsonl"};
    if (!cfg_.gold_answers.empty()) extract_outputs.push_back("extraction_scores.json");
    step("extract-notes", cfg_.notes_enabled, extract_outputs, [&] { extract(); });
    step("featurize", true, {"imputer.json", "features.csv"}, [&] { featurize_step(); });
    step("embed", cfg_.embeddings_enabled, embed_outputs(), [&] { embed(); });
    step("train", true, {"model.json"}, [&] { train(); });
    step("predict", true, {"predictions.csv"}, [&] { predict(); });
    step("evaluate", true, {"evaluation.json"}, [&] { evaluate(); });
    manifest_.summary = read_json(path("evaluation.json"));
    save_manifest();
    return manifest_;
  }

 private:
  fs::path path(const std::string& name) const { return cfg_.out_dir / name; }

  void load_previous() {
    const auto mp = path("manifest.json");
    if (!fs::exists(mp)) return;
    try {
      auto prev = RunManifest::from_json(read_json(mp));
      if (prev.config_hash == hash_) previous_ = std::move(prev);
    } catch (const std::exception& e) {
      spdlog::warn("ignoring unreadable manifest {}: {}", mp.string(), e.what());
    }
  }

  bool reusable(const std::string& name, const std::vector<std::string>& outputs) const {
    if (!previous_) return false;
    for (const auto& s : previous_->steps) {
      if (s.name != name || s.status == "skipped" || s.outputs.size() != outputs.size()) continue;
      for (std::size_t i = 0; i < outputs.size(); ++i) {
        if (s.outputs[i].path != outputs[i]) return false;
        const auto p = path(outputs[i]);
        if (!fs::exists(p) || sha256_file(p) != s.outputs[i].sha256) return false;
      }
      return true;
    }
    return false;
  }

  void step(const std::string& name, bool enabled, const std::vector<std::string>& outputs,
            const std::function<void()>& body) {
    StepRecord rec{name, "skipped", {}};
    if (enabled) {
      if (!upstream_ran_ && reusable(name, outputs)) {
        rec.status = "reused";
        spdlog::info("step {}: reusing previous artifacts", name);
      } else {
        spdlog::info("step {}: running", name);
        try {
          body();
        } catch (const std::exception& e) {
          save_manifest();
          throw Error(Errc::StepFailed, fmt::format("step {} failed: {}", name, e.what()));
        }
        rec.status = "ran";
        upstream_ran_ = true;
      }
      for (const auto& o : outputs) rec.outputs.push_back({o, sha256_file(path(o))});
    }
    manifest_.steps.push_back(std::move(rec));
    save_manifest();
  }

  void save_manifest() const { write_text(path("manifest.json"), manifest_.to_json().dump(2) + "\n"); }

  const Cohort& cohort() {
    if (!cohort_) cohort_ = load_cohort(cfg_.cohort);
    return *cohort_;
  }

  const QuestionBattery& battery() {
    if (!battery_) battery_ = cfg_.load_battery();
    return *battery_;
  }

  std::vector<std::string> embed_outputs() const {
    std::vector<std::string> out{"tabular_text.emb1", "tabular_text.emb1.meta.json"};
    if (cfg_.notes_enabled) {
      out.push_back("notes_text.emb1");
      out.push_back("notes_text.emb1.meta.json");
    }
    if (cfg_.image_provider.kind != "none") {
      out.push_back("image.emb1");
      out.push_back("image.emb1.meta.json");
    }
    out.push_back("fused.csv");
    return out;
  }

  StageLabels labels() {
    auto s = read_stages_csv(path("stages.csv"));
    check_hash(s.config_hash, hash_, path("stages.csv"));
    return s;
  }

  std::map<std::string, ExtractionResult> extractions() {
    std::map<std::string, ExtractionResult> out;
    if (!cfg_.notes_enabled) return out;
    for (auto& e : read_extractions(path("extractions.jsonl"), hash_)) out.emplace(e.patient_id, std::move(e));
    return out;
  }

  void stage() {
    write_stages_csv(stage_cohort(cohort(), cfg_.staging, cfg_.test_fraction, cfg_.seed), path("stages.csv"), hash_);
  }

  void extract() {
    std::unique_ptr<ChatClient> owned;
    ChatClient* client = client_;
    if (!client) {
      if (cfg_.notes_provider == "http")
        owned = std::make_unique<HttpChatClient>(cfg_.chat);
      else
        owned = std::make_unique<KeywordChatClient>(battery());
      client = owned.get();
    }
    auto results = extract_cohort(cohort(), battery(), *client, cfg_.max_inflight);
    write_extractions(results, path("extractions.jsonl"), hash_);
    if (cfg_.gold_answers.empty()) return;
    auto gold = load_gold_answers(cfg_.gold_answers);
    ordered_json scores = ordered_json::object();
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& r : results) {
      auto it = gold.find(r.patient_id);
      if (it == gold.end()) continue;
      auto s = score_against_gold(answers_of(r), it->second);
      scores[r.patient_id] = {{"score", s.score}, {"percent", s.percent}};
      total += s.score;
      ++n;
    }
    ordered_json j{{"config_hash", hash_},
                   {"questions", battery().size()},
                   {"patients", n},
                   {"mean_score", n ? ordered_json(total / static_cast<double>(n)) : ordered_json()},
                   {"mean_percent", n ? ordered_json(score_percent(total / static_cast<double>(n), battery().size()))
                                      : ordered_json()},
                   {"per_patient", scores}};
    write_text(path("extraction_scores.json"), j.dump(2) + "\n");
  }

  void featurize_step() {
    const auto stages = labels();
    Cohort train;
    for (const auto& r : cohort()) {
      auto it = stages.in_test.find(r.patient_id);
      if (it != stages.in_test.end() && !it->second) train.push_back(r);
    }
    auto imputer = fit_imputer(train, false);
    auto j = imputer.to_json();
    j["config_hash"] = hash_;
    write_text(path("imputer.json"), j.dump(2) + "\n");
    Cohort imputed;
    for (const auto& r : cohort()) imputed.push_back(impute(r, imputer));
    ExtractionIndex answers;
    for (const auto& [id, e] : extractions()) answers.emplace(id, tabularize(e));
    // Records without notes keep no entry so their answers encode as missing.
    for (const auto& r : cohort())
      if (!r.notes || r.notes->notes.empty()) answers.erase(r.patient_id);
    auto m = featurize(imputed, answers, cfg_.schema, battery());
    m.config_hash = hash_;
    write_feature_csv(m, path("features.csv"));
  }

  void embed() {
    auto text = make_text_provider(cfg_.text_provider);
    auto image = make_image_provider(cfg_.image_provider);
    auto emb = embed_cohort(cohort(), extractions(), *text, image.get());
    const FusionDims dims{cfg_.text_provider.dim, cfg_.notes_enabled ? cfg_.text_provider.dim : 0,
                          image ? image->dimension() : 0};
    write_source_embeddings(emb, EmbeddingSource::tabular_text, dims[0], path("tabular_text.emb1"), hash_);
    if (dims[1]) write_source_embeddings(emb, EmbeddingSource::notes_text, dims[1], path("notes_text.emb1"), hash_);
    if (image) write_source_embeddings(emb, EmbeddingSource::image, dims[2], path("image.emb1"), hash_);
    std::vector<std::string> ids;
    for (const auto& r : cohort()) ids.push_back(r.patient_id);
    auto m = fused_matrix(emb, ids, dims);
    m.config_hash = hash_;
    write_feature_csv(m, path("fused.csv"));
  }

  FeatureMatrix model_inputs() {
    return read_features_checked(path(cfg_.embeddings_enabled ? "fused.csv" : "features.csv"), hash_);
  }

  void train() {
    const auto stages = labels();
    const auto m = model_inputs();
    Rows x;
    std::vector<int> y;
    for (std::size_t i = 0; i < m.size(); ++i) {
      auto t = stages.in_test.find(m.ids[i]);
      if (t == stages.in_test.end() || t->second) continue;
      x.push_back(m.rows[i]);
      y.push_back(stages.label.at(m.ids[i]));
    }
    LearnerConfig lc = cfg_.learner;
    lc.split_seed = mix_seed(cfg_.seed, 0xF01D);
    auto search = search_hyperparams(x, y, cfg_.space, cfg_.search_budget, mix_seed(cfg_.seed, 0x5EA4), lc);
    auto ens = ensemble_from_results(std::move(search.top), y);
    ens.schema_fingerprint = m.schema.fingerprint();
    ens.config_hash = hash_;
    ens.feature_names = m.schema.names();
    if (cfg_.variance_threshold) ens.variance_threshold = *cfg_.variance_threshold;
    save_ensemble(ens, path("model.json"));
  }

  void predict() {
    auto ens = load_ensemble(path("model.json"));
    check_hash(ens.config_hash, hash_, path("model.json"));
    auto preds = ensemble_predict(ens, model_inputs());
    write_predictions_csv(preds, ens.variance_threshold, path("predictions.csv"), hash_);
  }

  void evaluate() {
    std::string found;
    auto preds = read_predictions_csv(path("predictions.csv"), &found);
    check_hash(found, hash_, path("predictions.csv"));
    const auto stages = labels();
    ordered_json j;
    j["config_hash"] = hash_;
    j["test"] = evaluate_predictions(preds, stages, true);
    j["all_labelled"] = evaluate_predictions(preds, stages, false);
    write_text(path("evaluation.json"), j.dump(2) + "\n");
  }

  const PipelineConfig& cfg_;
  ChatClient* client_;
  std::string hash_;
  RunManifest manifest_;
  bool upstream_ran_ = false;  // once a step reruns, later steps cannot reuse stale outputs
  std::optional<RunManifest> previous_;
  std::optional<Cohort> cohort_;
  std::optional<QuestionBattery> battery_;
};

}  // namespace

RunManifest run_pipeline(const PipelineConfig& cfg, ChatClient* client) {
  cfg.validate();
  return Runner(cfg, client).run();
}

}  // namespace cachexia
