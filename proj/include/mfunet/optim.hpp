#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mfunet/error.hpp"
#include "mfunet/tensor.hpp"

namespace mfunet {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  /// Decoupled decay shrinks the weights directly (theta -= lr*wd*theta)
  /// before the moment update. When false, wd*theta is added to the gradient.
  bool decoupled_weight_decay = true;
};

struct AdamState {
  AdamOptions options;
  std::int64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  AdamState() = default;
  explicit AdamState(AdamOptions opts) : options(opts) {}

  void init_for(std::span<const Tensor> params) {
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.emplace_back(p.numel(), 0.0);
      v.emplace_back(p.numel(), 0.0);
    }
    step = 0;
  }
};

/// One bias-corrected Adam update. `grads[i]` may be empty, meaning zero.
inline void adam_step(std::span<Tensor> params, std::span<const std::span<const double>> grads,
                      AdamState& state, double lr) {
  if (!(lr > 0.0)) throw ConfigError("adam_step: learning rate must be positive");
  if (params.size() != grads.size())
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grads.size()) + " gradients");
  if (state.m.empty() && !params.empty()) state.init_for(params);
  if (state.m.size() != params.size()) throw ShapeError("adam_step: optimizer state size mismatch");

  const auto& o = state.options;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(o.beta1, t);
  const double bc2 = 1.0 - std::pow(o.beta2, t);

  for (std::size_t p = 0; p < params.size(); ++p) {
    auto theta = params[p].mutable_data();
    auto g = grads[p];
    auto& m = state.m[p];
    auto& v = state.v[p];
    if (m.size() != theta.size() || (!g.empty() && g.size() != theta.size()))
      throw ShapeError("adam_step: shape mismatch for parameter " + std::to_string(p));
    for (std::size_t i = 0; i < theta.size(); ++i) {
      double gi = g.empty() ? 0.0 : g[i];
      if (o.weight_decay != 0.0) {
        if (o.decoupled_weight_decay)
          theta[i] -= lr * o.weight_decay * theta[i];
        else
          gi += o.weight_decay * theta[i];
      }
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * gi;
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      theta[i] -= lr * mhat / (std::sqrt(vhat) + o.eps);
    }
  }
}

/// Convenience overload reading each parameter's accumulated gradient.
inline void adam_step(std::span<Tensor> params, AdamState& state, double lr) {
  std::vector<std::span<const double>> grads;
  grads.reserve(params.size());
  for (const auto& p : params) grads.push_back(p.grad());
  adam_step(params, grads, state, lr);
}

/// Cosine annealing with warm restarts. `step` counts scheduler ticks (epochs
/// in the training loop); cycle i lasts t0 * t_mult^i ticks.
struct CosineWarmRestarts {
  double eta_max = 2e-4;
  double eta_min = 0.0;
  std::int64_t t0 = 200;
  std::int64_t t_mult = 1;

  void validate() const {
    if (!(eta_max > 0.0)) throw ConfigError("scheduler: eta_max must be > 0");
    if (eta_min < 0.0 || eta_min > eta_max)
      throw ConfigError("scheduler: eta_min must lie in [0, eta_max]");
    if (t0 < 1) throw ConfigError("scheduler: t0 must be >= 1");
    if (t_mult < 1) throw ConfigError("scheduler: t_mult must be >= 1");
  }

  double lr_at(std::int64_t step) const {
    if (step < 0) throw ConfigError("scheduler: step must be >= 0");
    std::int64_t t_cur = step;
    std::int64_t t_i = t0;
    if (t_mult == 1) {
      t_cur = step % t0;
    } else {
      while (t_cur >= t_i) {
        t_cur -= t_i;
        t_i *= t_mult;
      }
    }
    constexpr double pi = 3.14159265358979323846;
    const double lr = eta_min + 0.5 * (eta_max - eta_min) *
                                    (1.0 + std::cos(pi * static_cast<double>(t_cur) /
                                                    static_cast<double>(t_i)));
    return std::clamp(lr, eta_min, eta_max);
  }
};

}  // namespace mfunet
