#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "aupipe/model/parameters.hpp"

namespace aupipe {

struct AdamConfig {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moment buffers keyed by parameter path.
struct AdamState {
  std::uint64_t step = 0;
  std::map<std::string, std::vector<double>> m, v;

  bool operator==(const AdamState&) const = default;
};

using GradientMap = std::map<std::string, std::vector<double>>;

/// One bias-corrected Adam update,
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2,
///   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps),
/// applied to every path present in `grads`. Paths without a gradient keep
/// their values and moments. The step counter advances once per call.
inline ParameterSet adam_step(const ParameterSet& params, const GradientMap& grads, AdamState& state,
                              const AdamConfig& cfg) {
  for (const auto& [path, g] : grads) {
    if (params.at(path).size() != g.size()) throw ShapeError("adam_step: gradient size mismatch for '" + path + "'");
    for (double x : g)
      if (!std::isfinite(x)) throw NumericError("adam_step: non-finite gradient for '" + path + "'");
  }
  const std::uint64_t t = state.step + 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  ParameterSet out{{}, params.head_tag};
  for (const auto& [path, tensor] : params.tensors) {
    auto it = grads.find(path);
    if (it == grads.end()) {
      out.tensors.emplace(path, tensor.detach());
      continue;
    }
    const auto& g = it->second;
    auto& m = state.m[path];
    auto& v = state.v[path];
    m.resize(g.size(), 0.0);
    v.resize(g.size(), 0.0);
    std::vector<double> theta = tensor.values();
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      theta[i] -= cfg.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
    }
    out.tensors.emplace(path, Tensor(tensor.shape(), std::move(theta)));
  }
  state.step = t;
  return out;
}

}  // namespace aupipe
