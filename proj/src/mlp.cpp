#include "cachexia/mlp.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cachexia/error.hpp"

namespace cachexia {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

std::array<std::size_t, kLayers + 1> widths(const MlpArchitecture& a) {
  return {a.input_dim, a.hidden[0], a.hidden[1], a.hidden[2], a.hidden[3], 1};
}

LayerStack zero_stack(const MlpArchitecture& arch) {
  LayerStack s;
  auto w = widths(arch);
  for (std::size_t l = 0; l < kLayers; ++l) {
    s[l].in = w[l];
    s[l].out = w[l + 1];
    s[l].weights.assign(w[l] * w[l + 1], 0.0);
    s[l].bias.assign(w[l + 1], 0.0);
  }
  return s;
}

// Per-sample activations reused across a batch.
struct Workspace {
  std::array<std::vector<double>, kLayers> act;    // act[0] = input copy, act[l] = masked output of hidden l-1
  std::array<std::vector<double>, kHiddenLayers> pre;  // pre-activations of hidden layers
  std::array<std::vector<double>, kLayers> delta;  // dL/d(act[l])

  explicit Workspace(const MlpArchitecture& a) {
    auto w = widths(a);
    for (std::size_t l = 0; l < kLayers; ++l) {
      act[l].resize(w[l]);
      delta[l].resize(w[l]);
    }
    for (std::size_t l = 0; l < kHiddenLayers; ++l) pre[l].resize(w[l + 1]);
  }
};

double run_forward(const Mlp& net, std::span<const double> x, const DropoutMasks* masks, Workspace& ws) {
  if (x.size() != net.input_dim())
    throw Error(Errc::DimensionMismatch, fmt::format("network expects {} inputs, got {}", net.input_dim(), x.size()));
  std::copy(x.begin(), x.end(), ws.act[0].begin());
  for (std::size_t l = 0; l < kHiddenLayers; ++l) {
    const auto& L = net.layers[l];
    const double* in = ws.act[l].data();
    for (std::size_t o = 0; o < L.out; ++o) {
      const double* row = L.weights.data() + o * L.in;
      double z = L.bias[o];
      for (std::size_t i = 0; i < L.in; ++i) z += row[i] * in[i];
      ws.pre[l][o] = z;
      double h = z > 0.0 ? z : 0.0;
      if (masks) h *= masks->keep[l][o];
      ws.act[l + 1][o] = h;
    }
  }
  const auto& O = net.layers[kHiddenLayers];
  double z = O.bias[0];
  for (std::size_t i = 0; i < O.in; ++i) z += O.weights[i] * ws.act[kHiddenLayers][i];
  return sigmoid(z);
}

void accumulate_backward(const Mlp& net, const DropoutMasks* masks, double dz_out, Workspace& ws, LayerStack& g) {
  {
    auto& G = g[kHiddenLayers];
    const auto& O = net.layers[kHiddenLayers];
    G.bias[0] += dz_out;
    for (std::size_t i = 0; i < O.in; ++i) {
      G.weights[i] += dz_out * ws.act[kHiddenLayers][i];
      ws.delta[kHiddenLayers][i] = O.weights[i] * dz_out;
    }
  }
  for (std::size_t l = kHiddenLayers; l-- > 0;) {
    const auto& L = net.layers[l];
    auto& G = g[l];
    auto& d_in = ws.delta[l];
    if (l > 0) std::fill(d_in.begin(), d_in.end(), 0.0);
    const double* in = ws.act[l].data();
    for (std::size_t o = 0; o < L.out; ++o) {
      double d = ws.delta[l + 1][o];
      if (masks) d *= masks->keep[l][o];
      if (ws.pre[l][o] <= 0.0) d = 0.0;
      if (d == 0.0) continue;
      G.bias[o] += d;
      double* grow = G.weights.data() + o * L.in;
      for (std::size_t i = 0; i < L.in; ++i) grow[i] += d * in[i];
      if (l > 0) {
        const double* row = L.weights.data() + o * L.in;
        for (std::size_t i = 0; i < L.in; ++i) d_in[i] += row[i] * d;
      }
    }
  }
}

}  // namespace

void MlpArchitecture::validate() const {
  if (input_dim == 0) throw Error(Errc::InvalidConfig, "input_dim must be positive");
  for (std::size_t l = 0; l < kHiddenLayers; ++l) {
    if (hidden[l] == 0) throw Error(Errc::InvalidConfig, "hidden widths must be >= 1");
    if (!(dropout[l] >= 0.0 && dropout[l] < 1.0)) throw Error(Errc::InvalidConfig, "dropout must lie in [0, 1)");
  }
  if (!(learning_rate > 0.0)) throw Error(Errc::InvalidConfig, "learning rate must be positive");
}

ordered_json MlpArchitecture::to_json() const {
  return ordered_json{{"input_dim", input_dim},
                      {"hidden", hidden},
                      {"dropout", dropout},
                      {"learning_rate", learning_rate},
                      {"seed", seed}};
}

MlpArchitecture MlpArchitecture::from_json(const json& j) {
  MlpArchitecture a;
  a.input_dim = j.at("input_dim").get<std::size_t>();
  a.hidden = j.at("hidden").get<std::array<std::size_t, kHiddenLayers>>();
  a.dropout = j.at("dropout").get<std::array<double, kHiddenLayers>>();
  a.learning_rate = j.at("learning_rate").get<double>();
  a.seed = j.at("seed").get<std::uint64_t>();
  return a;
}

Mlp::Mlp(const MlpArchitecture& arch) : layers(zero_stack(arch)), arch_(arch) { arch_.validate(); }

Mlp Mlp::initialized(const MlpArchitecture& arch, Rng& rng) {
  Mlp net(arch);
  for (std::size_t l = 0; l < kLayers; ++l) {
    auto& L = net.layers[l];
    double limit = l < kHiddenLayers ? std::sqrt(6.0 / static_cast<double>(L.in))
                                     : std::sqrt(6.0 / static_cast<double>(L.in + L.out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (auto& w : L.weights) w = dist(rng);
  }
  return net;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& L : layers) n += L.weights.size() + L.bias.size();
  return n;
}

std::vector<double> Mlp::flatten() const {
  std::vector<double> p;
  p.reserve(parameter_count());
  for (const auto& L : layers) {
    p.insert(p.end(), L.weights.begin(), L.weights.end());
    p.insert(p.end(), L.bias.begin(), L.bias.end());
  }
  return p;
}

void Mlp::unflatten(std::span<const double> p) {
  if (p.size() != parameter_count()) throw Error(Errc::DimensionMismatch, "parameter vector size mismatch");
  std::size_t k = 0;
  for (auto& L : layers) {
    for (auto& w : L.weights) w = p[k++];
    for (auto& b : L.bias) b = p[k++];
  }
}

ordered_json Mlp::to_json() const {
  ordered_json j;
  j["architecture"] = arch_.to_json();
  j["layers"] = ordered_json::array();
  for (const auto& L : layers) j["layers"].push_back({{"in", L.in}, {"out", L.out}, {"weights", L.weights}, {"bias", L.bias}});
  return j;
}

Mlp Mlp::from_json(const json& j) {
  Mlp net(MlpArchitecture::from_json(j.at("architecture")));
  const auto& ls = j.at("layers");
  if (ls.size() != kLayers) throw Error(Errc::SchemaMismatch, "model layer count mismatch");
  for (std::size_t l = 0; l < kLayers; ++l) {
    auto w = ls[l].at("weights").get<std::vector<double>>();
    auto b = ls[l].at("bias").get<std::vector<double>>();
    if (w.size() != net.layers[l].weights.size() || b.size() != net.layers[l].bias.size())
      throw Error(Errc::SchemaMismatch, "model layer shape mismatch");
    net.layers[l].weights = std::move(w);
    net.layers[l].bias = std::move(b);
  }
  return net;
}

DropoutMasks draw_masks(const MlpArchitecture& arch, Rng& rng) {
  DropoutMasks m;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t l = 0; l < kHiddenLayers; ++l) {
    const double p = arch.dropout[l];
    m.keep[l].resize(arch.hidden[l]);
    const double scale = 1.0 / (1.0 - p);
    for (auto& k : m.keep[l]) k = p > 0.0 ? (u(rng) >= p ? scale : 0.0) : 1.0;
  }
  return m;
}

double forward_masked(const Mlp& net, std::span<const double> x, const DropoutMasks* masks) {
  Workspace ws(net.architecture());
  return run_forward(net, x, masks, ws);
}

double forward(const Mlp& net, std::span<const double> x, bool train_mode, Rng* rng) {
  if (!train_mode) return forward_masked(net, x, nullptr);
  if (!rng) throw Error(Errc::InvalidConfig, "train-mode forward needs an rng");
  auto masks = draw_masks(net.architecture(), *rng);
  return forward_masked(net, x, &masks);
}

double bce(double prob, double label) {
  double p = std::clamp(prob, kProbEpsilon, 1.0 - kProbEpsilon);
  return -(label * std::log(p) + (1.0 - label) * std::log(1.0 - p));
}

LossAndGradients loss_and_gradients(const Mlp& net, std::span<const std::vector<double>> xs,
                                    std::span<const double> labels, std::span<const DropoutMasks> masks) {
  if (xs.size() != labels.size()) throw Error(Errc::LengthMismatch, "batch inputs and labels differ in length");
  if (!masks.empty() && masks.size() != xs.size()) throw Error(Errc::LengthMismatch, "one dropout mask per sample");
  LossAndGradients out;
  out.grad = zero_stack(net.architecture());
  if (xs.empty()) return out;
  Workspace ws(net.architecture());
  const double inv_n = 1.0 / static_cast<double>(xs.size());
  for (std::size_t s = 0; s < xs.size(); ++s) {
    const DropoutMasks* m = masks.empty() ? nullptr : &masks[s];
    double p = run_forward(net, xs[s], m, ws);
    out.loss += bce(p, labels[s]) * inv_n;
    // d(BCE)/dz for a sigmoid output; the clamp only guards the reported loss.
    accumulate_backward(net, m, (p - labels[s]) * inv_n, ws, out.grad);
  }
  return out;
}

ordered_json TrainConfig::to_json() const {
  return ordered_json{
      {"max_epochs", max_epochs}, {"batch_size", batch_size}, {"momentum", momentum}, {"patience", patience}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.momentum = j.value("momentum", c.momentum);
  c.patience = j.value("patience", c.patience);
  return c;
}

TrainedNetwork train_network(const MlpArchitecture& arch, std::span<const std::vector<double>> train_x,
                             std::span<const double> train_y, std::span<const std::vector<double>> val_x,
                             std::span<const double> val_y, const TrainConfig& cfg, std::uint64_t seed) {
  if (train_x.empty()) throw Error(Errc::TooFewSamples, "no training samples");
  if (cfg.batch_size == 0) throw Error(Errc::InvalidConfig, "batch size must be positive");
  Rng rng(seed);
  TrainedNetwork result;
  result.net = Mlp::initialized(arch, rng);
  Mlp& net = result.net;
  LayerStack velocity = zero_stack(arch);

  std::vector<std::size_t> order(train_x.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::vector<double>> bx;
  std::vector<double> by;
  std::vector<DropoutMasks> bm;
  const bool use_dropout = std::any_of(arch.dropout.begin(), arch.dropout.end(), [](double p) { return p > 0.0; });

  auto val_loss = [&] {
    double l = 0.0;
    Workspace ws(arch);
    for (std::size_t i = 0; i < val_x.size(); ++i) l += bce(run_forward(net, val_x[i], nullptr, ws), val_y[i]);
    return l / static_cast<double>(val_x.size());
  };

  Mlp best = net;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::size_t end = std::min(order.size(), start + cfg.batch_size);
      bx.clear();
      by.clear();
      bm.clear();
      for (std::size_t k = start; k < end; ++k) {
        bx.push_back(train_x[order[k]]);
        by.push_back(train_y[order[k]]);
        if (use_dropout) bm.push_back(draw_masks(arch, rng));
      }
      auto lg = loss_and_gradients(net, bx, by, bm);
      epoch_loss += lg.loss;
      ++batches;
      for (std::size_t l = 0; l < kLayers; ++l) {
        auto& P = net.layers[l];
        auto& V = velocity[l];
        const auto& G = lg.grad[l];
        for (std::size_t i = 0; i < P.weights.size(); ++i) {
          V.weights[i] = cfg.momentum * V.weights[i] - arch.learning_rate * G.weights[i];
          P.weights[i] += V.weights[i];
        }
        for (std::size_t i = 0; i < P.bias.size(); ++i) {
          V.bias[i] = cfg.momentum * V.bias[i] - arch.learning_rate * G.bias[i];
          P.bias[i] += V.bias[i];
        }
      }
    }
    result.epoch_train_loss.push_back(epoch_loss / static_cast<double>(batches));
    result.epochs_run = epoch + 1;
    if (val_x.empty()) continue;
    double vl = val_loss();
    if (vl < best_loss) {
      best_loss = vl;
      best = net;
      result.best_epoch = epoch + 1;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  if (!val_x.empty()) {
    net = std::move(best);
    result.best_val_loss = best_loss;
  } else {
    result.best_epoch = result.epochs_run;
  }
  return result;
}

}  // namespace cachexia
