#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cohar/tensor.hpp"

namespace cohar {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moment estimates, one array per parameter, in the order
/// the parameters are passed to adam_step. Empty until the first step.
struct AdamState {
  AdamOptions options;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t t = 0;
};

/// One bias-corrected Adam update using each parameter's accumulated gradient
/// (a parameter without a gradient buffer is treated as having zero gradient).
inline void adam_step(std::span<Tensor> params, AdamState& state) {
  const auto& o = state.options;
  if (!(o.lr > 0.0)) throw ConfigError("adam: learning rate must be positive");
  if (state.m.empty() && state.t == 0) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("adam: state tracks " + std::to_string(state.m.size()) + " parameters, got " +
                         std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].size() || state.v[i].size() != params[i].size()) {
      throw DimensionError("adam: moment size mismatch for parameter " + std::to_string(i) + " of shape " +
                           shape_str(params[i].shape()));
    }
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) continue;
    auto p = params[i].data();
    auto g = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = o.beta1 * m[k] + (1.0 - o.beta1) * g[k];
      v[k] = o.beta2 * v[k] + (1.0 - o.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p[k] -= o.lr * mhat / (std::sqrt(vhat) + o.eps);
    }
  }
}

}  // namespace cohar
