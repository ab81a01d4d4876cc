#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "aupipe/digest.hpp"
#include "aupipe/model/config.hpp"
#include "aupipe/tensor/tensor.hpp"

namespace aupipe {

/// Named weight tensors of the classifier, ordered by path.
template <typename Real>
struct BasicParameterSet {
  std::map<std::string, BasicTensor<Real>> tensors;
  std::string head_tag;

  const BasicTensor<Real>& at(const std::string& path) const {
    auto it = tensors.find(path);
    if (it == tensors.end()) throw ValidationError("missing parameter '" + path + "'");
    return it->second;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors) n += t.size();
    return n;
  }

  /// Attaches a fresh zeroed gradient buffer to every tensor.
  BasicParameterSet with_fresh_grads() const {
    BasicParameterSet out{{}, head_tag};
    for (const auto& [k, t] : tensors) out.tensors.emplace(k, t.with_fresh_grad());
    return out;
  }

  BasicParameterSet detached() const {
    BasicParameterSet out{{}, head_tag};
    for (const auto& [k, t] : tensors) out.tensors.emplace(k, t.detach());
    return out;
  }

  template <typename Other>
  BasicParameterSet<Other> cast() const {
    BasicParameterSet<Other> out{{}, head_tag};
    for (const auto& [k, t] : tensors) out.tensors.emplace(k, t.template cast<Other>());
    return out;
  }
};

using ParameterSet = BasicParameterSet<double>;

inline bool is_head_path(const std::string& path) { return path.rfind("head.", 0) == 0; }

/// Order-sensitive checksum over paths, shapes and value bits of the
/// selected tensors (all, or only the backbone).
template <typename Real>
std::uint64_t parameter_checksum(const BasicParameterSet<Real>& p, bool backbone_only = false) {
  std::uint64_t h = fnv1a64("");
  for (const auto& [path, t] : p.tensors) {
    if (backbone_only && is_head_path(path)) continue;
    h = fnv1a64(path, h);
    for (auto e : t.shape()) h = fnv1a64(std::string_view(reinterpret_cast<const char*>(&e), sizeof e), h);
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(t.data().data()), t.size() * sizeof(Real)), h);
  }
  return h;
}

enum class InitKind { trunc_normal, zeros, ones };

struct ParameterSpec {
  Shape shape;
  InitKind init;
};

/// Every parameter path the configuration demands, with shape and init rule.
inline std::map<std::string, ParameterSpec> parameter_specs(const ModelConfig& cfg) {
  cfg.validate();
  std::map<std::string, ParameterSpec> s;
  const auto p = cfg.patch_size;
  s["patch_embed.weight"] = {{cfg.in_channels * p * p, cfg.dims[0]}, InitKind::trunc_normal};
  s["patch_embed.bias"] = {{cfg.dims[0]}, InitKind::zeros};
  s["patch_embed.norm.weight"] = {{cfg.dims[0]}, InitKind::ones};
  s["patch_embed.norm.bias"] = {{cfg.dims[0]}, InitKind::zeros};
  if (cfg.mode == AttentionMode::full) s["pos_embed"] = {{cfg.tokens(0), cfg.dims[0]}, InitKind::trunc_normal};
  for (std::size_t st = 0; st < cfg.stages(); ++st) {
    const auto d = cfg.dims[st], hid = cfg.hidden(st), m = cfg.window_at(st);
    for (std::size_t b = 0; b < cfg.depths[st]; ++b) {
      const std::string pre = "stages." + std::to_string(st) + ".blocks." + std::to_string(b) + ".";
      s[pre + "norm1.weight"] = {{d}, InitKind::ones};
      s[pre + "norm1.bias"] = {{d}, InitKind::zeros};
      s[pre + "attn.qkv.weight"] = {{d, 3 * d}, InitKind::trunc_normal};
      s[pre + "attn.qkv.bias"] = {{3 * d}, InitKind::zeros};
      s[pre + "attn.proj.weight"] = {{d, d}, InitKind::trunc_normal};
      s[pre + "attn.proj.bias"] = {{d}, InitKind::zeros};
      if (cfg.mode == AttentionMode::windowed)
        s[pre + "attn.relative_position_bias_table"] = {{(2 * m - 1) * (2 * m - 1), cfg.heads[st]}, InitKind::zeros};
      s[pre + "norm2.weight"] = {{d}, InitKind::ones};
      s[pre + "norm2.bias"] = {{d}, InitKind::zeros};
      s[pre + "mlp.fc1.weight"] = {{d, hid}, InitKind::trunc_normal};
      s[pre + "mlp.fc1.bias"] = {{hid}, InitKind::zeros};
      s[pre + "mlp.fc2.weight"] = {{hid, d}, InitKind::trunc_normal};
      s[pre + "mlp.fc2.bias"] = {{d}, InitKind::zeros};
    }
    if (st + 1 < cfg.stages()) {
      const std::string pre = "stages." + std::to_string(st) + ".downsample.";
      s[pre + "norm.weight"] = {{4 * d}, InitKind::ones};
      s[pre + "norm.bias"] = {{4 * d}, InitKind::zeros};
      s[pre + "reduction.weight"] = {{4 * d, 2 * d}, InitKind::trunc_normal};
    }
  }
  const auto last = cfg.dims.back();
  s["norm.weight"] = {{last}, InitKind::ones};
  s["norm.bias"] = {{last}, InitKind::zeros};
  s["head.weight"] = {{last, cfg.num_aus()}, InitKind::trunc_normal};
  s["head.bias"] = {{cfg.num_aus()}, InitKind::zeros};
  return s;
}

namespace detail {

// Truncated normal (|z| <= 2 sigma, resampled), seeded per path so that a
// tensor's initial values do not depend on which other tensors exist.
inline std::vector<double> init_values(const std::string& path, const ParameterSpec& spec, std::uint64_t seed,
                                       double sigma) {
  std::vector<double> v(shape_numel(spec.shape), 0.0);
  if (spec.init == InitKind::ones) std::fill(v.begin(), v.end(), 1.0);
  if (spec.init != InitKind::trunc_normal) return v;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(fnv1a64(path)), static_cast<std::uint32_t>(fnv1a64(path) >> 32)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& x : v) {
    double z;
    do z = normal(rng);
    while (std::abs(z) > 2.0);
    x = sigma * z;
  }
  return v;
}

}  // namespace detail

/// Fresh parameters: truncated normal (sigma 0.02) projections, zero biases
/// and bias tables, unit layer-norm gains.
inline ParameterSet init_parameters(const ModelConfig& cfg, std::uint64_t seed, double sigma = 0.02) {
  ParameterSet p;
  p.head_tag = cfg.head;
  for (const auto& [path, spec] : parameter_specs(cfg))
    p.tensors.emplace(path, Tensor(spec.shape, detail::init_values(path, spec, seed, sigma)));
  return p;
}

/// Throws unless `p` holds exactly the tensors `cfg` demands, with matching shapes.
template <typename Real>
void check_parameters(const BasicParameterSet<Real>& p, const ModelConfig& cfg) {
  const auto specs = parameter_specs(cfg);
  if (p.head_tag != cfg.head)
    throw ValidationError("parameter head '" + p.head_tag + "' does not match config head '" + cfg.head + "'");
  for (const auto& [path, spec] : specs) {
    const auto& t = p.at(path);
    if (t.shape() != spec.shape)
      throw ValidationError("parameter '" + path + "' has shape " + shape_str(t.shape()) + ", expected " +
                            shape_str(spec.shape));
  }
  if (p.tensors.size() != specs.size()) {
    for (const auto& [path, _] : p.tensors)
      if (!specs.count(path)) throw ValidationError("unexpected parameter '" + path + "'");
  }
}

/// Replaces the AU head for a new dataset tag. Backbone tensors are carried
/// over untouched; the head is re-initialized from `init_seed`.
inline ParameterSet swap_head(const ParameterSet& params, const std::string& new_tag, std::uint64_t init_seed,
                              double sigma = 0.02) {
  const auto& w = params.at("head.weight");
  std::size_t feature_dim = w.dim(0);
  for (const auto& [path, t] : params.tensors)
    if (path == "norm.weight" && t.dim(0) != feature_dim)
      throw ValidationError("swap_head: backbone output width does not match head input");
  const std::size_t n = head_aus(new_tag).size();
  ParameterSet out;
  out.head_tag = new_tag;
  for (const auto& [path, t] : params.tensors)
    if (!is_head_path(path)) out.tensors.emplace(path, t.detach());
  ParameterSpec ws{{feature_dim, n}, InitKind::trunc_normal};
  out.tensors.emplace("head.weight", Tensor(ws.shape, detail::init_values("head.weight", ws, init_seed, sigma)));
  out.tensors.emplace("head.bias", Tensor::zeros({n}));
  return out;
}

}  // namespace aupipe
