#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <json.hpp>

namespace cachexia {

inline constexpr std::size_t kHiddenLayers = 4;
inline constexpr std::size_t kLayers = kHiddenLayers + 1;
inline constexpr double kProbEpsilon = 1e-7;

using Rng = std::mt19937_64;

struct MlpArchitecture {
  std::size_t input_dim = 0;
  std::array<std::size_t, kHiddenLayers> hidden{32, 16, 16, 8};
  std::array<double, kHiddenLayers> dropout{};  // each in [0, 1)
  double learning_rate = 0.01;
  std::uint64_t seed = 0;

  /// Throws Errc::InvalidConfig on zero widths, dropout outside [0,1), or lr <= 0.
  void validate() const;

  nlohmann::ordered_json to_json() const;
  static MlpArchitecture from_json(const nlohmann::json& j);

  bool operator==(const MlpArchitecture&) const = default;
};

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weights;  // out x in, row-major
  std::vector<double> bias;

  bool operator==(const DenseLayer&) const = default;
};

using LayerStack = std::array<DenseLayer, kLayers>;

/// Four ReLU hidden layers and a sigmoid output unit.
class Mlp {
 public:
  Mlp() = default;
  /// All weights and biases zero.
  explicit Mlp(const MlpArchitecture& arch);
  /// He-uniform hidden layers, Glorot-uniform output layer, zero biases.
  static Mlp initialized(const MlpArchitecture& arch, Rng& rng);

  const MlpArchitecture& architecture() const { return arch_; }
  std::size_t input_dim() const { return arch_.input_dim; }
  std::size_t parameter_count() const;

  /// Parameters in layer order, weights before bias.
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> params);

  LayerStack layers;

  nlohmann::ordered_json to_json() const;
  static Mlp from_json(const nlohmann::json& j);

  bool operator==(const Mlp&) const = default;

 private:
  MlpArchitecture arch_;
};

/// Inverted-dropout keep multipliers per hidden unit: 0 or 1/(1-p).
struct DropoutMasks {
  std::array<std::vector<double>, kHiddenLayers> keep;
};

DropoutMasks draw_masks(const MlpArchitecture& arch, Rng& rng);

/// Probability of the positive class. In train mode masks are drawn from `rng`.
/// Throws Errc::DimensionMismatch when x does not match the input width.
double forward(const Mlp& net, std::span<const double> x, bool train_mode = false, Rng* rng = nullptr);
double forward_masked(const Mlp& net, std::span<const double> x, const DropoutMasks* masks);

/// Mean binary cross-entropy with predictions clamped to [eps, 1-eps] for the loss value.
double bce(double prob, double label);

struct LossAndGradients {
  double loss = 0.0;
  LayerStack grad;
};

/// Mean BCE over the batch and its exact gradient. `masks`, when given, fixes one dropout
/// mask per sample; otherwise evaluation mode.
LossAndGradients loss_and_gradients(const Mlp& net, std::span<const std::vector<double>> xs,
                                    std::span<const double> labels, std::span<const DropoutMasks> masks = {});

struct TrainConfig {
  std::size_t max_epochs = 100;
  std::size_t batch_size = 16;
  double momentum = 0.9;
  std::size_t patience = 20;

  nlohmann::ordered_json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainedNetwork {
  Mlp net;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::vector<double> epoch_train_loss;  // mean mini-batch loss per epoch
};

/// Mini-batch SGD with momentum. With a validation set, stops after `patience` epochs without
/// improvement and restores the best-validation parameters.
TrainedNetwork train_network(const MlpArchitecture& arch, std::span<const std::vector<double>> train_x,
                             std::span<const double> train_y, std::span<const std::vector<double>> val_x,
                             std::span<const double> val_y, const TrainConfig& cfg, std::uint64_t seed);

}  // namespace cachexia
