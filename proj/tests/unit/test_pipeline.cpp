#include <cstdlib>
#include <fstream>
#include <sys/wait.h>

#include "support.hpp"

#include "cachexia/emb_file.hpp"
#include "cachexia/pipeline.hpp"
#include "cachexia/synth.hpp"
#include "cohort_tools.hpp"

using namespace cachexia;
namespace fs = std::filesystem;

namespace {

Cohort small_cohort(std::size_t n = 60, std::uint64_t seed = 4) {
  SynthConfig sc;
  sc.n_patients = n;
  return generate(sc, seed);
}

PipelineConfig config_for(const test::TempDir& dir, const Cohort& cohort, const std::string& name) {
  save_cohort(cohort, dir / (name + ".jsonl"));
  return PipelineConfig::from_json(cohort_tools::small_run_config(dir / (name + ".jsonl"), dir / name));
}

std::size_t feature_width(const fs::path& out) { return read_feature_csv(out / "features.csv").schema.columns.size(); }

int run_cli(const std::string& args) {
  const char* cli = std::getenv("CACHEXIA_CLI");
  REQUIRE(cli != nullptr);
  const int rc = std::system((std::string(cli) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("config validation") {
    test::TempDir dir("cfg");
    auto cohort = small_cohort(20);
    auto cfg = config_for(dir, cohort, "a");
    CHECK_NOTHROW(cfg.validate());

    auto j = cohort_tools::small_run_config(dir / "a.jsonl", dir / "a");
    j["paths"].erase("battery");
    CHECK_ERRC(PipelineConfig::from_json(j).validate(), Errc::ConfigInvalid);

    j = cohort_tools::small_run_config(dir / "a.jsonl", dir / "a");
    j["surprise"] = 1;
    CHECK_ERRC(PipelineConfig::from_json(j), Errc::ConfigInvalid);

    j = cohort_tools::small_run_config(dir / "missing.jsonl", dir / "a");
    CHECK_ERRC(PipelineConfig::from_json(j).validate(), Errc::ConfigInvalid);

    // The output directory is not part of the hash.
    auto moved = cfg;
    moved.out_dir = dir / "elsewhere";
    CHECK(moved.hash() == cfg.hash());
    moved.seed = 99;
    CHECK(moved.hash() != cfg.hash());
  }

  TEST_CASE("shipped configs parse") {
    const fs::path root = CACHEXIA_SOURCE_DIR;
    auto run = load_pipeline_config(root / "config" / "run.json");
    CHECK(run.notes_enabled);
    CHECK(run.learner.folds == 10);
    CHECK(run.cohort == root / "config" / "../data/cohort.jsonl");
    auto synth = load_synth_config(root / "config" / "synth-complementary.json");
    CHECK(synth.signal.to_json() == SignalPlan::complementary().to_json());
  }

  TEST_CASE("full run and reuse") {
    test::TempDir dir("run");
    auto cfg = config_for(dir, small_cohort(), "out");
    auto first = run_pipeline(cfg);
    REQUIRE(first.steps.size() == 7);
    for (std::size_t i = 0; i < 7; ++i) CHECK(first.steps[i].name == kPipelineSteps[i]);
    CHECK(first.steps[3].status == "skipped");
    for (std::size_t i : {0, 1, 2, 4, 5, 6}) CHECK(first.steps[i].status == "ran");
    CHECK(first.summary["test"].contains("metrics"));
    CHECK(fs::exists(cfg.out_dir / "manifest.json"));

    auto second = run_pipeline(cfg);
    for (std::size_t i = 0; i < 7; ++i) {
      CHECK(second.steps[i].status == (i == 3 ? "skipped" : "reused"));
      CHECK(second.steps[i].outputs.size() == first.steps[i].outputs.size());
      for (std::size_t k = 0; k < first.steps[i].outputs.size(); ++k)
        CHECK(second.steps[i].outputs[k].sha256 == first.steps[i].outputs[k].sha256);
    }

    // A fresh directory reproduces the same artifacts.
    auto again = cfg;
    again.out_dir = dir / "again";
    auto third = run_pipeline(again);
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t k = 0; k < first.steps[i].outputs.size(); ++k)
        CHECK(third.steps[i].outputs[k].sha256 == first.steps[i].outputs[k].sha256);

    // A tampered artifact is rebuilt.
    { std::ofstream(cfg.out_dir / "predictions.csv", std::ios::app) << "\n"; }
    auto fourth = run_pipeline(cfg);
    CHECK(fourth.steps[4].status == "reused");
    CHECK(fourth.steps[5].status == "ran");
    // Everything downstream of a rebuilt step is rebuilt too.
    CHECK(fourth.steps[6].status == "ran");
  }

  TEST_CASE("embedding run") {
    test::TempDir dir("emb");
    save_cohort(small_cohort(40), dir / "c.jsonl");
    auto j = cohort_tools::small_run_config(dir / "c.jsonl", dir / "out");
    j["embeddings"] = {{"enabled", true}, {"text", {{"kind", "stub"}, {"dim", 8}}}, {"image", {{"kind", "stub"}, {"dim", 4}}}};
    auto m = run_pipeline(PipelineConfig::from_json(j));
    CHECK(m.steps[3].status == "ran");
    auto fused = read_feature_csv(dir / "out" / "fused.csv");
    CHECK(fused.schema.columns.size() == 8 + 8 + 4 + 3);
  }

  TEST_CASE("runs complete with any modality absent at a fixed width") {
    test::TempDir dir("miss");
    const auto base = small_cohort(40, 6);
    auto cfg = config_for(dir, base, "full");
    run_pipeline(cfg);
    const auto width = feature_width(cfg.out_dir);
    for (const char* modality : cohort_tools::kModalities) {
      CAPTURE(modality);
      auto c = config_for(dir, cohort_tools::drop_modality(base, modality), modality);
      auto m = run_pipeline(c);
      CHECK(m.steps.size() == 7);
      CHECK(feature_width(c.out_dir) == width);
    }
  }

  TEST_CASE("stale artifacts are refused") {
    test::TempDir dir("stale");
    FeatureMatrix m;
    m.schema.columns.push_back({"a", ColumnKind::numeric});
    m.ids = {"P1"};
    m.rows = {{1.0}};
    m.config_hash = "aaaa";
    write_feature_csv(m, dir / "f.csv");
    CHECK_NOTHROW(read_features_checked(dir / "f.csv", "aaaa"));
    CHECK_NOTHROW(read_features_checked(dir / "f.csv", ""));
    CHECK_ERRC(read_features_checked(dir / "f.csv", "bbbb"), Errc::ConfigHashMismatch);
  }

  TEST_CASE("cli exit codes") {
    if (!std::getenv("CACHEXIA_CLI")) {
      MESSAGE("CACHEXIA_CLI not set; run through ctest to exercise the CLI");
      return;
    }
    test::TempDir dir("cli");
    const auto d = dir.path().string();
    CHECK(run_cli("generate-cohort --seed 2 --out " + d + "/c.jsonl") == 0);
    CHECK(fs::exists(dir / "c.jsonl"));
    CHECK(run_cli("score-extractions --score 24.6 --questions 26") == 0);
    CHECK(run_cli("no-such-command") == 2);
    CHECK(run_cli("stage --cohort " + d + "/absent.jsonl --out " + d + "/s.csv") == 3);

    std::ofstream(dir / "bad.json") << "{ not json";
    CHECK(run_cli("run --config " + d + "/bad.json") == 2);

    std::ofstream(dir / "broken.jsonl") << "{\"patient_id\": \"P1\"}\nnot a record\n";
    std::ofstream(dir / "broken.json") << cohort_tools::small_run_config(dir / "broken.jsonl", dir / "o").dump();
    CHECK(run_cli("run --config " + d + "/broken.json") == 3);

    auto cohort = small_cohort(40);
    save_cohort(cohort, dir / "ok.jsonl");
    std::ofstream(dir / "ok.json") << cohort_tools::small_run_config(dir / "ok.jsonl", dir / "ok").dump();
    CHECK(run_cli("run --config " + d + "/ok.json") == 0);
    CHECK(fs::exists(dir / "ok" / "evaluation.json"));

    CHECK(run_cli("embed --cohort " + d + "/ok.jsonl --sources tabular,image --provider stub --out " + d + "/f.emb") == 0);
    auto fused = read_embedding_file(dir / "f.emb");
    CHECK(fused.records.size() == cohort.size());
    CHECK(run_cli("embed --cohort " + d + "/ok.jsonl --sources tabular,smell --out " + d + "/g.emb") == 2);
    CHECK(run_cli("embed --cohort " + d + "/ok.jsonl") == 2);
  }
}
