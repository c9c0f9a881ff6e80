#include "cachexia/learner.hpp"

#include <fmt/format.h>
#include <omp.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include "cachexia/error.hpp"
#include "cachexia/hashing.hpp"

namespace cachexia {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::vector<std::vector<std::size_t>> kfold_split(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2 || n < k) throw Error(Errc::TooFewSamples, fmt::format("{} samples cannot fill {} folds", n, k));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> folds(k);
  const std::size_t base = n / k, extra = n % k;
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    std::size_t len = base + (f < extra ? 1 : 0);
    folds[f].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                    order.begin() + static_cast<std::ptrdiff_t>(pos + len));
    std::sort(folds[f].begin(), folds[f].end());
    pos += len;
  }
  return folds;
}

ordered_json LearnerConfig::to_json() const {
  return ordered_json{{"train", train.to_json()},
                      {"folds", folds},
                      {"split_seed", split_seed},
                      {"execution", execution == Execution::serial ? "serial" : "parallel"}};
}

LearnerConfig LearnerConfig::from_json(const json& j) {
  LearnerConfig c;
  if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
  c.folds = j.value("folds", c.folds);
  c.split_seed = j.value("split_seed", c.split_seed);
  auto ex = j.value("execution", std::string("parallel"));
  if (ex == "serial")
    c.execution = Execution::serial;
  else if (ex == "parallel")
    c.execution = Execution::parallel;
  else
    throw Error(Errc::InvalidConfig, fmt::format("unknown execution mode '{}'", ex));
  return c;
}

double FoldModel::predict(std::span<const double> x) const {
  auto z = scaler.transform(x);
  return forward(net, z);
}

namespace {

struct FoldOutcome {
  FoldModel model;
  std::vector<double> val_prob;  // aligned with the fold's validation indices
};

void check_inputs(const Rows& x, std::span<const int> labels) {
  if (x.size() != labels.size()) throw Error(Errc::LengthMismatch, "features and labels differ in length");
  for (int y : labels)
    if (y != 0 && y != 1) throw Error(Errc::InvalidConfig, "labels must be 0 or 1");
  if (!x.empty()) {
    const auto d = x.front().size();
    for (const auto& r : x)
      if (r.size() != d) throw Error(Errc::DimensionMismatch, "ragged feature rows");
  }
}

FoldOutcome run_fold(const Rows& x, std::span<const int> labels, const std::vector<std::vector<std::size_t>>& folds,
                     std::size_t f, const MlpArchitecture& arch, const TrainConfig& tc) {
  const auto& val = folds[f];
  std::vector<std::size_t> train;
  train.reserve(x.size() - val.size());
  for (std::size_t g = 0; g < folds.size(); ++g)
    if (g != f) train.insert(train.end(), folds[g].begin(), folds[g].end());
  std::sort(train.begin(), train.end());

  FoldOutcome out;
  out.model.scaler = Standardizer::fit(x, train);
  Rows tx, vx;
  std::vector<double> ty, vy;
  for (auto i : train) {
    tx.push_back(out.model.scaler.transform(x[i]));
    ty.push_back(labels[i]);
  }
  for (auto i : val) {
    vx.push_back(out.model.scaler.transform(x[i]));
    vy.push_back(labels[i]);
  }
  auto trained = train_network(arch, tx, ty, vx, vy, tc, mix_seed(arch.seed, f));
  out.model.net = std::move(trained.net);
  out.model.epochs = trained.epochs_run;
  std::size_t correct = 0;
  double loss = 0.0;
  for (std::size_t i = 0; i < vx.size(); ++i) {
    double p = forward(out.model.net, vx[i]);
    out.val_prob.push_back(p);
    loss += bce(p, vy[i]);
    if ((p >= 0.5) == (vy[i] == 1.0)) ++correct;
  }
  out.model.val_accuracy = static_cast<double>(correct) / static_cast<double>(vx.size());
  out.model.val_loss = loss / static_cast<double>(vx.size());
  return out;
}

std::vector<ArchitectureResult> train_many(const Rows& x, std::span<const int> labels,
                                           std::span<const MlpArchitecture> archs, const LearnerConfig& cfg) {
  check_inputs(x, labels);
  const auto folds = kfold_split(x.size(), cfg.folds, cfg.split_seed);
  const std::size_t k = folds.size();
  for (const auto& a : archs) a.validate();
  for (const auto& a : archs)
    if (a.input_dim != x.front().size())
      throw Error(Errc::DimensionMismatch,
                  fmt::format("architecture expects {} inputs, features have {}", a.input_dim, x.front().size()));

  const std::size_t jobs = archs.size() * k;
  std::vector<FoldOutcome> outcomes(jobs);
  if (cfg.execution == Execution::serial) {
    for (std::size_t j = 0; j < jobs; ++j) outcomes[j] = run_fold(x, labels, folds, j % k, archs[j / k], cfg.train);
  } else {
    std::vector<std::exception_ptr> errors(jobs);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(jobs); ++j) {
      auto u = static_cast<std::size_t>(j);
      try {
        outcomes[u] = run_fold(x, labels, folds, u % k, archs[u / k], cfg.train);
      } catch (...) {
        errors[u] = std::current_exception();
      }
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  std::vector<ArchitectureResult> results(archs.size());
  for (std::size_t a = 0; a < archs.size(); ++a) {
    auto& r = results[a];
    r.arch = archs[a];
    r.oof_prob.assign(x.size(), 0.0);
    for (std::size_t f = 0; f < k; ++f) {
      auto& o = outcomes[a * k + f];
      for (std::size_t i = 0; i < folds[f].size(); ++i) r.oof_prob[folds[f][i]] = o.val_prob[i];
      r.mean_cv_accuracy += o.model.val_accuracy;
      r.mean_val_loss += o.model.val_loss;
      r.folds.push_back(std::move(o.model));
    }
    r.mean_cv_accuracy /= static_cast<double>(k);
    r.mean_val_loss /= static_cast<double>(k);
  }
  return results;
}

}  // namespace

ArchitectureResult train_architecture(const Rows& x, std::span<const int> labels, const MlpArchitecture& arch,
                                      const LearnerConfig& cfg) {
  return std::move(train_many(x, labels, std::span(&arch, 1), cfg).front());
}

std::vector<ArchitectureResult> train_architectures(const Rows& x, std::span<const int> labels,
                                                    std::span<const MlpArchitecture> archs, const LearnerConfig& cfg) {
  return train_many(x, labels, archs, cfg);
}

std::size_t TrainedEnsemble::network_count() const {
  std::size_t n = 0;
  for (const auto& m : members) n += m.folds.size();
  return n;
}

TrainedEnsemble ensemble_train(const Rows& x, std::span<const int> labels, std::span<const MlpArchitecture> archs,
                               const LearnerConfig& cfg) {
  if (archs.size() != kEnsembleSize)
    throw Error(Errc::WrongEnsembleSize, fmt::format("ensemble needs {} architectures, got {}", kEnsembleSize, archs.size()));
  return ensemble_from_results(train_many(x, labels, archs, cfg), labels);
}

TrainedEnsemble ensemble_from_results(std::vector<ArchitectureResult> results, std::span<const int> labels) {
  if (results.size() != kEnsembleSize)
    throw Error(Errc::WrongEnsembleSize,
                fmt::format("ensemble needs {} architectures, got {}", kEnsembleSize, results.size()));
  const auto k = results.front().folds.size();
  for (const auto& r : results) {
    if (r.folds.size() != k) throw Error(Errc::InvalidConfig, "architectures trained with different fold counts");
    if (r.oof_prob.size() != labels.size()) throw Error(Errc::LengthMismatch, "out-of-fold predictions do not match labels");
  }
  TrainedEnsemble ens;
  std::vector<double> correct, incorrect;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::array<double, kEnsembleSize> p{};
    for (std::size_t a = 0; a < kEnsembleSize; ++a) p[a] = results[a].oof_prob[i];
    auto pred = combine_probs(p);
    (pred.cachectic == (labels[i] == 1) ? correct : incorrect).push_back(pred.variance);
  }
  auto mean = [](const std::vector<double>& v) -> std::optional<double> {
    if (v.empty()) return std::nullopt;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  ens.oof_mean_var_correct = mean(correct);
  ens.oof_mean_var_incorrect = mean(incorrect);
  ens.variance_threshold = default_variance_threshold(correct, incorrect);
  for (auto& r : results) ens.members.push_back({r.arch, std::move(r.folds), r.mean_cv_accuracy});
  return ens;
}

EnsemblePrediction combine_probs(const std::array<double, kEnsembleSize>& probs, std::string patient_id) {
  EnsemblePrediction p;
  p.patient_id = std::move(patient_id);
  p.per_architecture = probs;
  // Shifted by the first value so identical inputs give exactly zero variance.
  const double shift = probs[0];
  double s = 0.0;
  for (double v : probs) s += v - shift;
  const double mean_dev = s / static_cast<double>(kEnsembleSize);
  p.mean_prob = shift + mean_dev;
  double ss = 0.0;
  for (double v : probs) ss += (v - shift - mean_dev) * (v - shift - mean_dev);
  p.variance = ss / static_cast<double>(kEnsembleSize);
  p.cachectic = p.mean_prob >= 0.5;
  return p;
}

EnsemblePrediction ensemble_predict(const TrainedEnsemble& ens, std::span<const double> x) {
  if (ens.members.size() != kEnsembleSize) throw Error(Errc::WrongEnsembleSize, "ensemble is incomplete");
  std::array<double, kEnsembleSize> probs{};
  for (std::size_t a = 0; a < kEnsembleSize; ++a) {
    const auto& folds = ens.members[a].folds;
    double s = 0.0;
    for (const auto& f : folds) s += f.predict(x);
    probs[a] = s / static_cast<double>(folds.size());
  }
  return combine_probs(probs);
}

EnsemblePrediction ensemble_predict(const TrainedEnsemble& ens, std::span<const double> x,
                                    std::string_view schema_fingerprint) {
  if (schema_fingerprint != ens.schema_fingerprint)
    throw Error(Errc::SchemaMismatch, fmt::format("features have schema {}, model expects {}", schema_fingerprint,
                                                  ens.schema_fingerprint));
  return ensemble_predict(ens, x);
}

std::vector<EnsemblePrediction> ensemble_predict(const TrainedEnsemble& ens, const FeatureMatrix& m) {
  const auto fp = m.schema.fingerprint();
  std::vector<EnsemblePrediction> out;
  out.reserve(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    auto p = ensemble_predict(ens, m.rows[i], fp);
    p.patient_id = m.ids[i];
    out.push_back(std::move(p));
  }
  return out;
}

std::string_view to_string(TriageVerdict v) {
  return v == TriageVerdict::auto_accept ? "auto_accept" : "expert_review";
}

TriageVerdict triage(const EnsemblePrediction& p, double variance_threshold) {
  return p.variance >= variance_threshold ? TriageVerdict::expert_review : TriageVerdict::auto_accept;
}

double default_variance_threshold(std::span<const double> correct_var, std::span<const double> incorrect_var) {
  constexpr double kFloor = 1e-12;
  auto mean = [](std::span<const double> v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  double t;
  if (!correct_var.empty() && !incorrect_var.empty()) {
    t = 0.5 * (mean(correct_var) + mean(incorrect_var));
  } else if (!correct_var.empty()) {
    double mx = *std::max_element(correct_var.begin(), correct_var.end());
    t = std::nextafter(mx, std::numeric_limits<double>::infinity());
  } else if (!incorrect_var.empty()) {
    t = *std::min_element(incorrect_var.begin(), incorrect_var.end());
  } else {
    t = kFloor;
  }
  return std::max(t, kFloor);
}

ordered_json SearchSpace::to_json() const {
  return ordered_json{{"width_choices", width_choices}, {"dropout_min", dropout_min},
                      {"dropout_max", dropout_max},     {"lr_min", lr_min},
                      {"lr_max", lr_max},               {"successive_halving", successive_halving},
                      {"halving_eta", halving_eta}};
}

SearchSpace SearchSpace::from_json(const json& j) {
  SearchSpace s;
  if (j.contains("width_choices")) s.width_choices = j.at("width_choices").get<std::vector<std::size_t>>();
  s.dropout_min = j.value("dropout_min", s.dropout_min);
  s.dropout_max = j.value("dropout_max", s.dropout_max);
  s.lr_min = j.value("lr_min", s.lr_min);
  s.lr_max = j.value("lr_max", s.lr_max);
  s.successive_halving = j.value("successive_halving", s.successive_halving);
  s.halving_eta = j.value("halving_eta", s.halving_eta);
  if (s.width_choices.empty() || std::count(s.width_choices.begin(), s.width_choices.end(), 0u))
    throw Error(Errc::InvalidConfig, "width choices must be non-empty and positive");
  if (!(0.0 <= s.dropout_min && s.dropout_min <= s.dropout_max && s.dropout_max < 1.0))
    throw Error(Errc::InvalidConfig, "dropout range must satisfy 0 <= min <= max < 1");
  if (!(0.0 < s.lr_min && s.lr_min <= s.lr_max)) throw Error(Errc::InvalidConfig, "learning-rate range invalid");
  if (s.halving_eta < 2) throw Error(Errc::InvalidConfig, "halving_eta must be >= 2");
  return s;
}

std::vector<MlpArchitecture> SearchResult::best() const {
  std::vector<MlpArchitecture> out;
  for (const auto& r : top) out.push_back(r.arch);
  return out;
}

namespace {

bool better(const SearchTrial& a, std::size_t ia, const SearchTrial& b, std::size_t ib) {
  if (a.mean_cv_accuracy != b.mean_cv_accuracy) return a.mean_cv_accuracy > b.mean_cv_accuracy;
  if (a.mean_val_loss != b.mean_val_loss) return a.mean_val_loss < b.mean_val_loss;
  return ia < ib;
}

std::vector<std::size_t> ranking(const std::vector<SearchTrial>& trials, std::span<const std::size_t> subset) {
  std::vector<std::size_t> idx(subset.begin(), subset.end());
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return better(trials[a], a, trials[b], b); });
  return idx;
}

}  // namespace

SearchResult search_hyperparams(const Rows& x, std::span<const int> labels, const SearchSpace& space,
                                std::size_t budget, std::uint64_t seed, const LearnerConfig& cfg) {
  if (budget < kEnsembleSize)
    throw Error(Errc::BudgetTooSmall, fmt::format("search budget {} cannot yield {} architectures", budget, kEnsembleSize));
  check_inputs(x, labels);
  if (x.empty()) throw Error(Errc::TooFewSamples, "no samples to search on");
  const std::size_t dim = x.front().size();

  // Distinct sorted width tuples available in the space.
  const std::set<std::size_t> choice_set(space.width_choices.begin(), space.width_choices.end());
  const std::size_t c = choice_set.size();
  // Multisets of size 4 from c choices: C(c+3, 4).
  const std::size_t tuples = (c + 3) * (c + 2) * (c + 1) * c / 24;
  if (tuples < budget)
    throw Error(Errc::BudgetTooSmall, fmt::format("search space has only {} distinct width tuples", tuples));

  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, space.width_choices.size() - 1);
  std::uniform_real_distribution<double> drop(space.dropout_min, space.dropout_max);
  std::uniform_real_distribution<double> loglr(std::log(space.lr_min), std::log(space.lr_max));
  std::set<std::array<std::size_t, kHiddenLayers>> seen;
  std::vector<MlpArchitecture> candidates;
  while (candidates.size() < budget) {
    MlpArchitecture a;
    a.input_dim = dim;
    for (auto& w : a.hidden) w = space.width_choices[pick(rng)];
    std::sort(a.hidden.begin(), a.hidden.end(), std::greater<>());
    for (auto& d : a.dropout) d = space.dropout_max > space.dropout_min ? drop(rng) : space.dropout_min;
    a.learning_rate = space.lr_max > space.lr_min ? std::exp(loglr(rng)) : space.lr_min;
    a.seed = mix_seed(seed, candidates.size());
    if (!seen.insert(a.hidden).second) continue;
    candidates.push_back(a);
  }

  SearchResult result;
  result.trials.resize(budget);
  std::vector<std::size_t> all(budget);
  std::iota(all.begin(), all.end(), 0);

  std::vector<std::size_t> finalists = all;
  if (space.successive_halving) {
    LearnerConfig short_cfg = cfg;
    short_cfg.train.max_epochs = std::max<std::size_t>(1, cfg.train.max_epochs / space.halving_eta);
    auto rung = train_many(x, labels, candidates, short_cfg);
    for (std::size_t i = 0; i < budget; ++i)
      result.trials[i] = {candidates[i], rung[i].mean_cv_accuracy, rung[i].mean_val_loss};
    std::size_t keep = std::max(kEnsembleSize, (budget + space.halving_eta - 1) / space.halving_eta);
    auto ranked = ranking(result.trials, all);
    finalists.assign(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(keep));
    std::sort(finalists.begin(), finalists.end());
  }

  std::vector<MlpArchitecture> final_archs;
  for (auto i : finalists) final_archs.push_back(candidates[i]);
  auto full = train_many(x, labels, final_archs, cfg);
  for (std::size_t j = 0; j < finalists.size(); ++j)
    result.trials[finalists[j]] = {candidates[finalists[j]], full[j].mean_cv_accuracy, full[j].mean_val_loss};

  auto ranked = ranking(result.trials, finalists);
  for (std::size_t r = 0; r < kEnsembleSize; ++r) {
    auto pos = static_cast<std::size_t>(std::find(finalists.begin(), finalists.end(), ranked[r]) - finalists.begin());
    result.top.push_back(std::move(full[pos]));
  }
  spdlog::debug("search: {} trials, best CV accuracy {:.4f}", budget, result.top.front().mean_cv_accuracy);
  return result;
}

namespace {

constexpr const char* kModelFormat = "cachexia-ensemble";
constexpr int kModelVersion = 1;

}  // namespace

ordered_json ensemble_to_json(const TrainedEnsemble& ens) {
  ordered_json j;
  j["format"] = kModelFormat;
  j["version"] = kModelVersion;
  j["config_hash"] = ens.config_hash;
  j["schema_fingerprint"] = ens.schema_fingerprint;
  j["feature_names"] = ens.feature_names;
  j["variance_threshold"] = ens.variance_threshold;
  j["oof_mean_var_correct"] = ens.oof_mean_var_correct ? ordered_json(*ens.oof_mean_var_correct) : ordered_json();
  j["oof_mean_var_incorrect"] = ens.oof_mean_var_incorrect ? ordered_json(*ens.oof_mean_var_incorrect) : ordered_json();
  j["members"] = ordered_json::array();
  for (const auto& m : ens.members) {
    ordered_json jm;
    jm["architecture"] = m.arch.to_json();
    jm["mean_cv_accuracy"] = m.mean_cv_accuracy;
    jm["folds"] = ordered_json::array();
    for (const auto& f : m.folds)
      jm["folds"].push_back({{"val_accuracy", f.val_accuracy},
                             {"val_loss", f.val_loss},
                             {"epochs", f.epochs},
                             {"scaler", f.scaler.to_json()},
                             {"network", f.net.to_json()}});
    j["members"].push_back(std::move(jm));
  }
  return j;
}

TrainedEnsemble ensemble_from_json(const json& j) {
  if (j.value("format", std::string()) != kModelFormat || j.value("version", 0) != kModelVersion)
    throw Error(Errc::SchemaMismatch, "not a supported ensemble model file");
  TrainedEnsemble ens;
  ens.config_hash = j.at("config_hash").get<std::string>();
  ens.schema_fingerprint = j.at("schema_fingerprint").get<std::string>();
  ens.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  ens.variance_threshold = j.at("variance_threshold").get<double>();
  if (!j.at("oof_mean_var_correct").is_null()) ens.oof_mean_var_correct = j.at("oof_mean_var_correct").get<double>();
  if (!j.at("oof_mean_var_incorrect").is_null())
    ens.oof_mean_var_incorrect = j.at("oof_mean_var_incorrect").get<double>();
  for (const auto& jm : j.at("members")) {
    EnsembleMember m;
    m.arch = MlpArchitecture::from_json(jm.at("architecture"));
    m.mean_cv_accuracy = jm.at("mean_cv_accuracy").get<double>();
    for (const auto& jf : jm.at("folds")) {
      FoldModel f;
      f.val_accuracy = jf.at("val_accuracy").get<double>();
      f.val_loss = jf.at("val_loss").get<double>();
      f.epochs = jf.at("epochs").get<std::size_t>();
      f.scaler = Standardizer::from_json(jf.at("scaler"));
      f.net = Mlp::from_json(jf.at("network"));
      m.folds.push_back(std::move(f));
    }
    ens.members.push_back(std::move(m));
  }
  if (ens.members.size() != kEnsembleSize) throw Error(Errc::WrongEnsembleSize, "model file lacks five architectures");
  return ens;
}

void save_ensemble(const TrainedEnsemble& ens, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, fmt::format("cannot write {}", path.string()));
  out << ensemble_to_json(ens).dump() << '\n';
  if (!out) throw Error(Errc::Io, fmt::format("write failed for {}", path.string()));
}

TrainedEnsemble load_ensemble(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, fmt::format("cannot read {}", path.string()));
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(Errc::SchemaMismatch, fmt::format("{}: {}", path.string(), e.what()));
  }
  return ensemble_from_json(j);
}

}  // namespace cachexia
