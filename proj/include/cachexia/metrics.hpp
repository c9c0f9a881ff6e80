#pragma once

#include <optional>
#include <span>

#include <json.hpp>

namespace cachexia {

/// Cachectic is the positive class.
struct ConfusionMatrix {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;

  std::size_t total() const { return tp + fp + fn + tn; }
  bool operator==(const ConfusionMatrix&) const = default;
};

/// Throws Errc::LengthMismatch on unequal lengths.
ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> labels);

struct Metrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  // Set when the metric's denominator was zero and the value was defined as 0.
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool f1_undefined = false;

  nlohmann::ordered_json to_json() const;
};

/// Throws Errc::EmptyMatrix on an empty matrix.
Metrics metrics(const ConfusionMatrix& m);

struct VarianceStats {
  double mean = 0.0;
  double median = 0.0;
  std::size_t count = 0;
};

struct ConfidenceSeparation {
  std::optional<VarianceStats> correct;
  std::optional<VarianceStats> incorrect;

  nlohmann::ordered_json to_json() const;
};

/// Partitions variances by whether the prediction matched the gold label.
ConfidenceSeparation confidence_separation(std::span<const double> variances, std::span<const int> preds,
                                           std::span<const int> labels);

std::optional<VarianceStats> variance_stats(std::span<const double> values);

}  // namespace cachexia
