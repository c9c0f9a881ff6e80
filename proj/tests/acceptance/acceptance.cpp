// Acceptance run: one PASS/FAIL line per criterion. Exit status is the number of failures.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "cachexia/ablation.hpp"
#include "cachexia/biomarkers.hpp"
#include "cachexia/chat_client.hpp"
#include "cachexia/embedding.hpp"
#include "cachexia/learner.hpp"
#include "cachexia/mlp.hpp"
#include "cachexia/notes.hpp"
#include "cachexia/pipeline.hpp"
#include "cachexia/staging.hpp"
#include "cachexia/synth.hpp"
#include "cohort_tools.hpp"
#include "oracles.hpp"

using namespace cachexia;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

bool rel_close(double a, double b, double rel) {
  return std::abs(a - b) <= rel * std::max({std::abs(a), std::abs(b), 1e-300});
}

// Formula oracle suite: 1e-9 relative on random inputs, exact absence and sentinel.
Outcome formulas() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> pos(0.1, 200.0);
  std::bernoulli_distribution gone(0.15);
  std::size_t cases = 0, bad = 0;
  auto maybe = [&]() -> oracle::Opt { return gone(rng) ? oracle::Opt() : oracle::Opt(pos(rng)); };
  auto agree = [&](Measure got, oracle::Opt want) {
    ++cases;
    if (got.has_value() != want.has_value()) return ++bad, void();
    if (!want) {
      if (sentinel(got) != -1.0) ++bad;
      return;
    }
    if (!rel_close(*got, *want, 1e-9)) ++bad;
  };
  for (int i = 0; i < 200; ++i) {
    auto n = maybe(), l = maybe(), b = maybe(), c = maybe(), sma = maybe(), alb = maybe(), w = maybe();
    oracle::Opt h = gone(rng) ? oracle::Opt() : oracle::Opt(1.4 + pos(rng) / 400.0);
    agree(compute_nlr(n, l), oracle::nlr(n, l));
    agree(compute_ucr(b, c), oracle::ucr(b, c));
    agree(compute_smi(sma, h), oracle::smi(sma, h));
    agree(compute_bmi(w, h), oracle::bmi(w, h));
    const auto s = oracle::smi(sma, h), r = oracle::nlr(n, l), u = oracle::ucr(b, c);
    agree(compute_cxi(s, alb, r), oracle::cxi(s, alb, r));
    agree(compute_mcxi(alb, r, u), oracle::mcxi(alb, r, u));
  }
  // Zero denominators are absent, not infinite.
  agree(compute_nlr(5.0, 0.0), std::nullopt);
  agree(compute_ucr(12.0, 0.0), std::nullopt);
  const double secs = seconds_since(t0);
  return {bad == 0 && secs < 1.0, fmt::format("{} cases, {} mismatches, {:.3f}s (limit 1s)", cases, bad, secs)};
}

// Staging grid plus the four-stage to two-stage fallback.
Outcome staging() {
  std::size_t bad = 0, grid = 0;
  for (double loss : {-1.0, 0.0, 2.0, 2.01, 5.0, 5.01, 10.0})
    for (double bmi : {18.0, 19.99, 20.0, 25.0}) {
      ++grid;
      const auto want = oracle::cachectic_two_stage(loss, bmi) ? CachexiaStatus::cachectic : CachexiaStatus::non_cachectic;
      if (stage_two(loss, bmi) != want) ++bad;
    }

  StagingConfig cfg;
  std::size_t combos = 0, misrouted = 0;
  for (int mask = 0; mask < 16; ++mask) {
    PatientRecord r;
    r.patient_id = "X";
    r.height_m = 1.7;
    r.weight_kg = 60.0;
    r.gold_label = CachexiaStatus::non_cachectic;
    const bool loss = mask & 1, intake = mask & 2, ecog = mask & 4, biochem = mask & 8;
    if (loss) r.prior_weight_kg_6mo = 66.0;
    if (intake) r.food_intake = FoodIntake::decreased;
    if (ecog) r.ecog = 2;
    if (biochem) r.biochem_flags = std::set{BiochemFlag::elevated_crp};
    const auto a = assign_stage(r, cfg);
    const bool all = loss && intake && ecog && biochem;
    ++combos;
    if ((a.system_used == StagingSystem::four_stage) != all) ++misrouted;
    if (!all && loss && a.system_used != StagingSystem::two_stage) ++misrouted;
  }
  return {bad == 0 && misrouted == 0,
          fmt::format("grid {}/{} match, fallback {}/{} routed correctly", grid - bad, grid, combos - misrouted, combos)};
}

// Extraction arithmetic and tabularize through a canned HTTP endpoint.
Outcome extraction() {
  bool ok = true;
  std::string detail;
  for (auto [raw, want] : {std::pair{24.6, 94.62}, std::pair{23.0, 88.46}, std::pair{21.2, 81.54}}) {
    const double got = score_percent(raw, 26);
    ok &= std::round(got * 100) == std::round(want * 100);
    detail += fmt::format("{}->{:.2f}% ", raw, got);
  }

  const auto battery = QuestionBattery::defaults();
  nlohmann::json items = nlohmann::json::array();
  std::vector<int> expected;
  for (std::size_t i = 0; i < battery.size(); ++i) {
    // Every fourth question is left out of the reply and must come back as not_given.
    if (i % 4 == 3) {
      expected.push_back(-1);
      continue;
    }
    static const char* words[] = {"yes", "no", "not_given"};
    items.push_back({{"id", battery.questions[i].id}, {"answer", words[i % 3]}, {"reasoning", "r"}, {"reference", ""}});
    expected.push_back(i % 3 == 0 ? 1 : i % 3 == 1 ? 0 : -1);
  }
  const std::string reply = nlohmann::json{{"message", {{"role", "assistant"}, {"content", items.dump()}}}}.dump();

  httplib::Server server;
  server.Post("/api/chat", [&](const httplib::Request&, httplib::Response& res) {
    res.set_content(reply, "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ChatClientConfig cc;
  cc.base_url = fmt::format("http://127.0.0.1:{}", port);
  cc.timeout_s = 10;
  HttpChatClient client(cc);
  NotesBundle bundle{{ClinicalNote{NoteType::progress_note, "Reports fatigue.", std::nullopt}}};
  std::vector<int> got;
  try {
    got = tabularize(extract_answers("P1", bundle, battery, client));
  } catch (const std::exception& e) {
    detail += fmt::format("extraction threw: {}", e.what());
  }
  server.stop();
  th.join();
  const bool matrix_ok = got == expected;
  detail += fmt::format("| tabularize {}", matrix_ok ? "exact" : "differs");
  return {ok && matrix_ok, detail};
}

// Embedding oracle over 1,000 texts and the chunk arithmetic.
Outcome embeddings() {
  HashingTextProvider p(32, 11, 512);
  std::size_t bad = 0;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const auto text = oracle::random_text(1 + (s * 131) % 1600, s);
    if (embed_text(text, p) != oracle::chunk_and_average(text, p)) ++bad;
  }
  std::vector<std::size_t> sizes;
  for (const auto& c : chunk_tokens(oracle::random_text(1030, 5), 512, p)) sizes.push_back(c.size());
  const bool chunks_ok = sizes == std::vector<std::size_t>{512, 512, 6};
  return {bad == 0 && chunks_ok,
          fmt::format("{} of 1000 texts differ from the oracle; 1030 tokens -> {}", bad, fmt::join(sizes, ","))};
}

// Gradient check on 20 random four-hidden-layer networks.
Outcome gradients() {
  const auto t0 = Clock::now();
  Rng rng(99);
  std::uniform_int_distribution<std::size_t> width(1, 16), dim(1, 8);
  std::normal_distribution<double> z;
  double worst = 0;
  for (int t = 0; t < 20; ++t) {
    MlpArchitecture a;
    a.input_dim = dim(rng);
    for (auto& w : a.hidden) w = width(rng);
    Mlp net = Mlp::initialized(a, rng);
    auto params = net.flatten();
    for (auto& p : params) p += 0.1 * z(rng);
    net.unflatten(params);
    std::vector<std::vector<double>> xs(8, std::vector<double>(a.input_dim));
    std::vector<double> ys;
    for (auto& x : xs) {
      for (auto& v : x) v = z(rng);
      ys.push_back(static_cast<double>(rng() % 2));
    }
    worst = std::max(worst, oracle::max_gradient_error(net, xs, ys, 1e-5));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 30.0, fmt::format("max relative error {:.2e} (limit 1e-4), {:.1f}s (limit 30s)", worst, secs)};
}

// Ensemble contract: shape, variance arithmetic, determinism across execution modes.
Outcome ensemble() {
  const auto example = combine_probs({0.9, 0.8, 0.85, 0.9, 0.8});
  const bool example_ok = std::abs(example.variance - 0.002) <= 1e-15;

  SynthConfig sc;
  sc.n_patients = 120;
  const auto cohort = generate(sc, 3);
  const auto labels = staging_labels(cohort, StagingConfig{});
  const auto battery = QuestionBattery::defaults();
  auto imputer = fit_imputer(cohort);
  Cohort imputed;
  for (const auto& r : cohort) imputed.push_back(impute(r, imputer));
  auto m = featurize(imputed, {}, SchemaConfig::parse("clinical,sm,labs"), battery);

  std::vector<MlpArchitecture> archs;
  for (std::size_t i = 0; i < kEnsembleSize; ++i) {
    MlpArchitecture a;
    a.input_dim = m.schema.columns.size();
    a.hidden = {16 - i, 12, 8, 4};
    a.dropout = {0.1, 0.1, 0.1, 0.1};
    a.learning_rate = 0.02;
    a.seed = 100 + i;
    archs.push_back(a);
  }
  LearnerConfig cfg;
  cfg.train.max_epochs = 20;
  cfg.execution = Execution::parallel;
  auto a = ensemble_train(m.rows, labels, archs, cfg);
  auto b = ensemble_train(m.rows, labels, archs, cfg);
  cfg.execution = Execution::serial;
  auto c = ensemble_train(m.rows, labels, archs, cfg);

  bool identical = true;
  for (std::size_t i = 0; i < kEnsembleSize; ++i)
    for (std::size_t f = 0; f < a.members[i].folds.size(); ++f)
      identical &= a.members[i].folds[f].net == b.members[i].folds[f].net &&
                   a.members[i].folds[f].net == c.members[i].folds[f].net;

  double worst = 0;
  for (const auto& row : m.rows) {
    auto p = ensemble_predict(a, row);
    std::vector<double> per;
    for (const auto& mem : a.members) {
      double s = 0;
      for (const auto& fm : mem.folds) s += fm.predict(row);
      per.push_back(s / static_cast<double>(mem.folds.size()));
    }
    worst = std::max(worst, std::abs(p.variance - oracle::pvariance(per)));
  }
  const bool ok = a.network_count() == 50 && example_ok && identical && worst <= 1e-15;
  return {ok, fmt::format("{} networks; example variance {:.17g}; max |var - oracle| {:.1e}; "
                          "parallel/serial/repeat {}",
                          a.network_count(), example.variance, worst, identical ? "bit-identical" : "differ")};
}

struct AblationRuns {
  std::vector<AblationReport> reports;
  double seconds = 0;
};

AblationRuns run_ablations() {
  SynthConfig sc;
  sc.signal = SignalPlan::complementary();
  const auto cohort = generate(sc, 7);
  auto configs = default_ablation_configs();
  configs.resize(4);
  AblationRuns out;
  const auto t0 = Clock::now();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) out.reports.push_back(run_ablation(cohort, configs, seed, AblationSettings{}));
  out.seconds = seconds_since(t0);
  return out;
}

// Ablation trend across configs 1 to 4.
Outcome ablation_trend(const AblationRuns& runs) {
  std::vector<double> mean(4, 0.0);
  for (const auto& r : runs.reports)
    for (std::size_t i = 0; i < 4; ++i) mean[i] += r.rows[i].metrics.accuracy / 5.0;
  bool monotone = true;
  for (std::size_t i = 1; i < 4; ++i) monotone &= mean[i] >= mean[i - 1];
  const double gain = 100.0 * (mean[3] - mean[0]);
  return {monotone && gain >= 10.0 && runs.seconds < 600.0,
          fmt::format("mean accuracy {:.4f} {:.4f} {:.4f} {:.4f}; gain {:.1f} points (floor 10); {:.0f}s (limit 600s)",
                      mean[0], mean[1], mean[2], mean[3], gain, runs.seconds)};
}

// Confidence separation and triage on the same runs, pooled over configs per seed.
Outcome confidence(const AblationRuns& runs) {
  std::size_t mean_wins = 0, median_wins = 0;
  std::size_t incorrect = 0, routed = 0, correct = 0, accepted = 0;
  for (const auto& r : runs.reports) {
    std::vector<double> var;
    std::vector<int> pred, label;
    for (const auto& row : r.rows)
      for (const auto& p : row.predictions) {
        var.push_back(p.variance);
        pred.push_back(p.predicted);
        label.push_back(p.label);
        const bool review = p.verdict == TriageVerdict::expert_review;
        if (p.predicted == p.label)
          ++correct, accepted += !review;
        else
          ++incorrect, routed += review;
      }
    auto s = confidence_separation(var, pred, label);
    if (s.correct && s.incorrect) {
      mean_wins += s.incorrect->mean > s.correct->mean;
      median_wins += s.incorrect->median > s.correct->median;
    }
  }
  const double routed_share = incorrect ? static_cast<double>(routed) / static_cast<double>(incorrect) : 0.0;
  const double accepted_share = correct ? static_cast<double>(accepted) / static_cast<double>(correct) : 0.0;
  const bool ok = mean_wins >= 4 && median_wins >= 4 && routed_share >= 0.5 && accepted_share >= 0.7;
  return {ok, fmt::format("incorrect variance higher: mean {}/5, median {}/5 seeds (floor 4); "
                          "routed {:.1f}% of incorrect (floor 50%), accepted {:.1f}% of correct (floor 70%)",
                          mean_wins, median_wins, 100 * routed_share, 100 * accepted_share)};
}

// Missing-data robustness through the full pipeline.
Outcome robustness() {
  const auto root = fs::temp_directory_path() / fmt::format("cachexia-acceptance-{}", std::random_device{}());
  fs::create_directories(root);
  SynthConfig sc;
  sc.n_patients = 80;
  const auto mixed = generate(sc, 21);

  std::size_t crashes = 0, runs = 0;
  std::set<std::size_t> tab_widths, fused_widths;
  std::string failures;
  auto attempt = [&](const std::string& name, const Cohort& cohort) {
    ++runs;
    try {
      save_cohort(cohort, root / (name + ".jsonl"));
      auto j = cohort_tools::small_run_config(root / (name + ".jsonl"), root / name);
      j["embeddings"] = {{"enabled", true},
                         {"text", {{"kind", "stub"}, {"dim", 8}}},
                         {"image", {{"kind", "stub"}, {"dim", 4}}}};
      auto manifest = run_pipeline(PipelineConfig::from_json(j));
      if (manifest.steps.size() != 7) throw std::runtime_error("incomplete manifest");
      tab_widths.insert(read_feature_csv(root / name / "features.csv").schema.columns.size());
      fused_widths.insert(read_feature_csv(root / name / "fused.csv").schema.columns.size());
    } catch (const std::exception& e) {
      ++crashes;
      failures += fmt::format(" [{}: {}]", name, e.what());
    }
  };
  attempt("mixed", mixed);
  for (const char* m : cohort_tools::kModalities) attempt(std::string("no-") + m, cohort_tools::drop_modality(mixed, m));
  std::error_code ec;
  fs::remove_all(root, ec);
  const bool ok = crashes == 0 && tab_widths.size() == 1 && fused_widths.size() == 1;
  return {ok, fmt::format("{} runs, {} crashes, tabular widths {{{}}}, fused widths {{{}}}{}", runs, crashes,
                          fmt::join(tab_widths, ","), fmt::join(fused_widths, ","), failures)};
}

// Synthetic cohort fidelity.
Outcome fidelity() {
  SynthConfig sc;
  const auto c = generate(sc, 7);
  std::size_t cachectic = 0, no_albumin = 0;
  double age = 0, weight = 0, height = 0;
  std::size_t na = 0, nw = 0, nh = 0;
  for (const auto& r : c) {
    cachectic += r.gold_label == CachexiaStatus::cachectic;
    no_albumin += !r.labs.albumin_g_dl;
    if (r.age_years) age += *r.age_years, ++na;
    if (r.weight_kg) weight += *r.weight_kg, ++nw;
    if (r.height_m) height += *r.height_m, ++nh;
  }
  age /= static_cast<double>(na), weight /= static_cast<double>(nw), height /= static_cast<double>(nh);
  const double weight_lb = weight / kKgPerLb;
  const bool ok = cachectic == 152 && c.size() - cachectic == 84 && no_albumin == 20 &&
                  rel_close(age, 69.05, 0.05) && rel_close(weight_lb, 166.95, 0.05);
  return {ok, fmt::format("labels {}/{}, missing albumin {}, mean age {:.2f} (69.05), mean weight {:.1f} lb (166.95)",
                          cachectic, c.size() - cachectic, no_albumin, age, weight_lb)};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::err);
  int failures = 0;
  auto report = [&](int n, const char* name, const std::function<Outcome()>& f) {
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, fmt::format("threw: {}", e.what())};
    }
    failures += !o.pass;
    std::printf("criterion %2d %-22s %s  %s\n", n, name, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  };
  report(1, "formulas", formulas);
  report(2, "staging", staging);
  report(3, "extraction", extraction);
  report(4, "embedding", embeddings);
  report(5, "gradients", gradients);
  report(6, "ensemble", ensemble);
  AblationRuns runs;
  bool ran = false;
  std::string why;
  try {
    runs = run_ablations();
    ran = true;
  } catch (const std::exception& e) {
    why = e.what();
  }
  report(7, "ablation-trend", [&] { return ran ? ablation_trend(runs) : Outcome{false, "ablation threw: " + why}; });
  report(8, "confidence", [&] { return ran ? confidence(runs) : Outcome{false, "ablation threw: " + why}; });
  report(9, "missing-data", robustness);
  report(10, "synthetic-fidelity", fidelity);
  std::printf("%d of 10 criteria failed\n", failures);
  return failures;
}
