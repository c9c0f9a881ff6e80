#pragma once

// Reference computations written independently of the library, shared by the unit and
// acceptance tests.

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cachexia/embedding.hpp"
#include "cachexia/mlp.hpp"

namespace oracle {

using Opt = std::optional<double>;

inline Opt nlr(Opt n, Opt l) { return n && l && *l > 0 ? Opt(*n / *l) : std::nullopt; }
inline Opt ucr(Opt b, Opt c) { return b && c && *c > 0 ? Opt(*b / *c) : std::nullopt; }
inline Opt smi(Opt sma, Opt h) { return sma && h && *h > 0 ? Opt(*sma / (*h * *h)) : std::nullopt; }
inline Opt bmi(Opt w, Opt h) { return w && h && *h > 0 ? Opt(*w / (*h * *h)) : std::nullopt; }
inline Opt cxi(Opt s, Opt alb, Opt r) { return s && alb && r && *r > 0 ? Opt(*s * *alb / *r) : std::nullopt; }
inline Opt mcxi(Opt alb, Opt r, Opt u) {
  return alb && r && u && *r * *u > 0 ? Opt(*alb / (*r * *u)) : std::nullopt;
}

inline bool cachectic_two_stage(double loss, double bmi) { return bmi >= 20.0 ? loss > 5.0 : loss > 2.0; }

/// Whitespace split, cut every `limit` tokens, embed each chunk, arithmetic mean.
inline cachexia::Embedding chunk_and_average(const std::string& text, const cachexia::EmbeddingProvider& p) {
  std::istringstream in(text);
  std::vector<std::string> toks;
  for (std::string t; in >> t;) toks.push_back(t);
  std::vector<double> sum(p.dimension(), 0.0);
  std::size_t chunks = 0;
  for (std::size_t at = 0; at < toks.size(); at += p.token_limit()) {
    const std::size_t end = std::min(toks.size(), at + p.token_limit());
    std::vector<std::string> chunk(toks.begin() + static_cast<long>(at), toks.begin() + static_cast<long>(end));
    auto v = p.embed_tokens(chunk);
    for (std::size_t d = 0; d < sum.size(); ++d) sum[d] += v[d];
    ++chunks;
  }
  for (auto& x : sum) x /= static_cast<double>(chunks);
  return sum;
}

/// Random text of `n` tokens from a small vocabulary with numbers mixed in.
inline std::string random_text(std::size_t n, std::uint64_t seed) {
  static const char* vocab[] = {"weight", "loss", "albumin:", "low", "fatigue", "12.5", "-3", "patient", "notes", "x"};
  std::mt19937_64 rng(seed);
  std::string s;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) s += (rng() % 5 == 0) ? "\n" : " ";
    s += vocab[rng() % 10];
  }
  return s;
}

/// Largest relative gap between analytic gradients and central differences of the batch loss.
/// Relative error uses max(|a|, |n|, floor) as the scale so exactly-zero gradients compare absolutely.
inline double max_gradient_error(const cachexia::Mlp& net, const std::vector<std::vector<double>>& xs,
                                 const std::vector<double>& ys, double h = 1e-5, double floor = 1e-6) {
  using namespace cachexia;
  const auto analytic = loss_and_gradients(net, xs, ys);
  std::vector<double> grad;
  for (const auto& layer : analytic.grad) {
    grad.insert(grad.end(), layer.weights.begin(), layer.weights.end());
    grad.insert(grad.end(), layer.bias.begin(), layer.bias.end());
  }
  auto params = net.flatten();
  Mlp probe = net;
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + h;
    probe.unflatten(params);
    const double up = loss_and_gradients(probe, xs, ys).loss;
    params[i] = keep - h;
    probe.unflatten(params);
    const double down = loss_and_gradients(probe, xs, ys).loss;
    params[i] = keep;
    const double numeric = (up - down) / (2 * h);
    const double scale = std::max({std::abs(numeric), std::abs(grad[i]), floor});
    worst = std::max(worst, std::abs(numeric - grad[i]) / scale);
  }
  return worst;
}

/// Population variance.
inline double pvariance(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size());
}

}  // namespace oracle
