#include "cachexia/metrics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <numeric>
#include <vector>

#include "cachexia/error.hpp"

namespace cachexia {

using ordered_json = nlohmann::ordered_json;

ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> labels) {
  if (preds.size() != labels.size())
    throw Error(Errc::LengthMismatch, fmt::format("{} predictions vs {} labels", preds.size(), labels.size()));
  ConfusionMatrix m;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool p = preds[i] != 0, y = labels[i] != 0;
    if (p && y)
      ++m.tp;
    else if (p)
      ++m.fp;
    else if (y)
      ++m.fn;
    else
      ++m.tn;
  }
  return m;
}

Metrics metrics(const ConfusionMatrix& m) {
  if (m.total() == 0) throw Error(Errc::EmptyMatrix, "confusion matrix is empty");
  Metrics r;
  r.accuracy = static_cast<double>(m.tp + m.tn) / static_cast<double>(m.total());
  if (m.tp + m.fp > 0)
    r.precision = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
  else
    r.precision_undefined = true;
  if (m.tp + m.fn > 0)
    r.recall = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
  else
    r.recall_undefined = true;
  if (r.precision + r.recall > 0)
    r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  else
    r.f1_undefined = true;
  return r;
}

ordered_json Metrics::to_json() const {
  ordered_json j{{"accuracy", accuracy}, {"precision", precision}, {"recall", recall}, {"f1", f1}};
  ordered_json undefined = ordered_json::array();
  if (precision_undefined) undefined.push_back("precision");
  if (recall_undefined) undefined.push_back("recall");
  if (f1_undefined) undefined.push_back("f1");
  j["undefined"] = undefined;
  return j;
}

std::optional<VarianceStats> variance_stats(std::span<const double> values) {
  if (values.empty()) return std::nullopt;
  VarianceStats s;
  s.count = values.size();
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  s.median = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  return s;
}

ConfidenceSeparation confidence_separation(std::span<const double> variances, std::span<const int> preds,
                                           std::span<const int> labels) {
  if (variances.size() != preds.size() || preds.size() != labels.size())
    throw Error(Errc::LengthMismatch, "variances, predictions and labels differ in length");
  std::vector<double> c, w;
  for (std::size_t i = 0; i < preds.size(); ++i) ((preds[i] != 0) == (labels[i] != 0) ? c : w).push_back(variances[i]);
  return {variance_stats(c), variance_stats(w)};
}

ordered_json ConfidenceSeparation::to_json() const {
  auto side = [](const std::optional<VarianceStats>& s) -> ordered_json {
    if (!s) return nullptr;
    return ordered_json{{"count", s->count}, {"mean_variance", s->mean}, {"median_variance", s->median}};
  };
  return ordered_json{{"correct", side(correct)}, {"incorrect", side(incorrect)}};
}

}  // namespace cachexia
