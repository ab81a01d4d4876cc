#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "aupipe/model/attention.hpp"
#include "aupipe/model/config.hpp"
#include "aupipe/model/parameters.hpp"
#include "aupipe/tensor/ops.hpp"

namespace aupipe {

namespace detail {

inline std::string block_prefix(std::size_t stage, std::size_t block) {
  return "stages." + std::to_string(stage) + ".blocks." + std::to_string(block) + ".";
}

// Inverted dropout: keep with probability 1 - rate, rescale survivors.
template <typename Real>
BasicTensor<Real> dropout(const BasicTensor<Real>& x, double rate, std::mt19937_64* rng) {
  if (!rng || rate <= 0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  std::vector<Real> m(x.size());
  for (auto& v : m) v = keep(*rng) ? static_cast<Real>(1.0 / (1.0 - rate)) : Real(0);
  return mul(x, BasicTensor<Real>(x.shape(), std::move(m)));
}

// Stochastic depth on one residual branch of one sample.
template <typename Real>
BasicTensor<Real> drop_path(const BasicTensor<Real>& branch, double rate, std::mt19937_64* rng) {
  if (!rng || rate <= 0) return branch;
  std::bernoulli_distribution keep(1.0 - rate);
  return scale(branch, keep(*rng) ? static_cast<Real>(1.0 / (1.0 - rate)) : Real(0));
}

inline double block_drop_rate(const ModelConfig& cfg, std::size_t stage, std::size_t block) {
  std::size_t total = 0, index = 0;
  for (std::size_t s = 0; s < cfg.stages(); ++s) {
    if (s < stage) index += cfg.depths[s];
    total += cfg.depths[s];
  }
  index += block;
  return total > 1 ? cfg.drop_path * static_cast<double>(index) / static_cast<double>(total - 1) : cfg.drop_path;
}

}  // namespace detail

/// Non-overlapping p x p patches of a [C, H, W] image, flattened channel-major
/// projected and layer-normed: [(H/p)*(W/p), dims[0]].
template <typename Real>
BasicTensor<Real> patch_embed(const BasicTensor<Real>& image, const BasicParameterSet<Real>& p, const ModelConfig& cfg) {
  const std::size_t c = cfg.in_channels, s = cfg.input_size, k = cfg.patch_size, g = s / k;
  if (image.shape() != Shape{c, s, s})
    throw ShapeError("patch_embed: expected image " + shape_str({c, s, s}) + ", got " + shape_str(image.shape()));
  auto x = permute(reshape(image, {c, g, k, g, k}), {1, 3, 0, 2, 4});
  x = reshape(x, {g * g, c * k * k});
  x = linear(x, p.at("patch_embed.weight"), p.at("patch_embed.bias"));
  x = layer_norm(x, p.at("patch_embed.norm.weight"), p.at("patch_embed.norm.bias"));
  if (cfg.mode == AttentionMode::full) x = add(x, p.at("pos_embed"));
  return x;
}

/// 2x2 neighbourhood merge: [g*g, C] -> [(g/2)^2, 2C].
template <typename Real>
BasicTensor<Real> patch_merging(const BasicTensor<Real>& x, std::size_t g, const BasicParameterSet<Real>& p,
                                std::size_t stage) {
  const std::size_t c = x.dim(1), h = g / 2;
  if (g % 2 || x.dim(0) != g * g) throw ShapeError("patch_merging: token count does not form an even grid");
  // channel groups ordered (row 0 col 0), (row 1 col 0), (row 0 col 1), (row 1 col 1)
  auto y = permute(reshape(x, {h, 2, h, 2, c}), {0, 2, 3, 1, 4});
  y = reshape(y, {h * h, 4 * c});
  const std::string pre = "stages." + std::to_string(stage) + ".downsample.";
  y = layer_norm(y, p.at(pre + "norm.weight"), p.at(pre + "norm.bias"));
  return matmul(y, p.at(pre + "reduction.weight"));
}

/// One pre-norm transformer block on [g*g, C] tokens. Odd blocks of a stage
/// attend within shifted windows. `rng` enables dropout and drop-path.
template <typename Real>
BasicTensor<Real> transformer_block(const BasicTensor<Real>& x, std::size_t g, const BasicParameterSet<Real>& p,
                                    const ModelConfig& cfg, std::size_t stage, std::size_t block,
                                    std::mt19937_64* rng = nullptr, BasicTensor<Real>* probabilities = nullptr) {
  const std::string pre = detail::block_prefix(stage, block);
  const std::size_t c = x.dim(1), heads = cfg.heads[stage];
  auto y = layer_norm(x, p.at(pre + "norm1.weight"), p.at(pre + "norm1.bias"));
  AttentionWeights<Real> w{p.at(pre + "attn.qkv.weight"), p.at(pre + "attn.qkv.bias"), p.at(pre + "attn.proj.weight"),
                           p.at(pre + "attn.proj.bias")};
  if (cfg.mode == AttentionMode::full) {
    y = full_attention(y, w, heads);
  } else {
    w.bias_table = &p.at(pre + "attn.relative_position_bias_table");
    const std::size_t s = block % 2 ? cfg.shift_at(stage) : 0;
    auto grid = shifted_window_attention(reshape(y, {g, g, c}), w, heads, cfg.window_at(stage), s, probabilities);
    y = reshape(grid, {g * g, c});
  }
  const double dp = detail::block_drop_rate(cfg, stage, block);
  auto h = add(x, detail::drop_path(detail::dropout(y, cfg.dropout, rng), dp, rng));
  auto z = layer_norm(h, p.at(pre + "norm2.weight"), p.at(pre + "norm2.bias"));
  z = detail::dropout(gelu(linear(z, p.at(pre + "mlp.fc1.weight"), p.at(pre + "mlp.fc1.bias"))), cfg.dropout, rng);
  z = linear(z, p.at(pre + "mlp.fc2.weight"), p.at(pre + "mlp.fc2.bias"));
  return add(h, detail::drop_path(detail::dropout(z, cfg.dropout, rng), dp, rng));
}

/// Pooled backbone features [dims.back()] of one [C, H, W] image.
template <typename Real>
BasicTensor<Real> forward_features(const BasicTensor<Real>& image, const BasicParameterSet<Real>& p,
                                   const ModelConfig& cfg, std::mt19937_64* rng = nullptr) {
  auto x = patch_embed(image, p, cfg);
  for (std::size_t st = 0; st < cfg.stages(); ++st) {
    for (std::size_t b = 0; b < cfg.depths[st]; ++b) x = transformer_block(x, cfg.grid(st), p, cfg, st, b, rng);
    if (st + 1 < cfg.stages()) x = patch_merging(x, cfg.grid(st), p, st);
  }
  x = layer_norm(x, p.at("norm.weight"), p.at("norm.bias"));
  return mean_axis(x, 0);
}

/// AU logits [num_aus] of one [C, H, W] image. Passing `rng` switches on
/// the training-time stochastic layers (no effect when their rates are 0).
template <typename Real>
BasicTensor<Real> forward(const BasicTensor<Real>& image, const BasicParameterSet<Real>& p, const ModelConfig& cfg,
                          std::mt19937_64* rng = nullptr) {
  if (p.head_tag != cfg.head)
    throw ValidationError("forward: parameters carry head '" + p.head_tag + "', config expects '" + cfg.head + "'");
  auto f = forward_features(image, p, cfg, rng);
  const std::size_t d = f.dim(0);
  auto logits = linear(reshape(f, {1, d}), p.at("head.weight"), p.at("head.bias"));
  logits = reshape(logits, {logits.dim(1)});
  if (!all_finite(logits)) throw NumericError("forward: non-finite logits");
  return logits;
}

/// Stacked logits [B, num_aus].
template <typename Real>
BasicTensor<Real> forward_batch(const std::vector<BasicTensor<Real>>& images, const BasicParameterSet<Real>& p,
                                const ModelConfig& cfg) {
  if (images.empty()) throw ShapeError("forward_batch: empty batch");
  TensorList<Real> rows;
  rows.reserve(images.size());
  for (const auto& img : images) {
    auto l = forward(img, p, cfg);
    rows.push_back(reshape(l, {1, l.dim(0)}));
  }
  return concat(rows, 0);
}

/// Per-AU probabilities for one image, without recording gradients.
template <typename Real>
std::vector<Real> predict_probabilities(const BasicTensor<Real>& image, const BasicParameterSet<Real>& p,
                                        const ModelConfig& cfg) {
  BasicNoGrad<Real> guard;
  auto logits = forward(image, p, cfg);
  std::vector<Real> out(logits.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_value(logits[i]);
  return out;
}

struct StageMacs {
  std::uint64_t qk = 0;  // Q K^T
  std::uint64_t av = 0;  // attention weights times V
};

/// Multiply-accumulates of Q K^T for one block on an h x w token grid of
/// width c. A query sees all h*w keys in full mode and m^2 in windowed mode;
/// the attention-times-V product costs the same.
inline std::uint64_t attention_block_macs(std::uint64_t h, std::uint64_t w, std::uint64_t c, std::uint64_t m,
                                          AttentionMode mode) {
  const std::uint64_t n = h * w;
  return n * (mode == AttentionMode::full ? n : m * m) * c;
}

/// Closed-form attention MACs per stage for one image, summed over the
/// stage's blocks.
inline std::vector<StageMacs> attention_macs(const ModelConfig& cfg) {
  std::vector<StageMacs> out;
  for (std::size_t st = 0; st < cfg.stages(); ++st) {
    const std::uint64_t per_block =
        attention_block_macs(cfg.grid(st), cfg.grid(st), cfg.dims[st], cfg.window_at(st), cfg.mode);
    out.push_back({cfg.depths[st] * per_block, cfg.depths[st] * per_block});
  }
  return out;
}

inline std::uint64_t attention_macs_total(const ModelConfig& cfg) {
  std::uint64_t total = 0;
  for (const auto& s : attention_macs(cfg)) total += s.qk + s.av;
  return total;
}

}  // namespace aupipe
