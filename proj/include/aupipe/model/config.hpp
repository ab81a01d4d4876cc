#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "json.hpp"

#include "aupipe/digest.hpp"
#include "aupipe/errors.hpp"
#include "aupipe/model/au_sets.hpp"

namespace aupipe {

enum class AttentionMode { windowed, full };

NLOHMANN_JSON_SERIALIZE_ENUM(AttentionMode, {{AttentionMode::windowed, "windowed"}, {AttentionMode::full, "full"}})

/// Architecture hyperparameters of the hierarchical attention classifier.
/// Stage i runs depths[i] blocks at width dims[i] with heads[i] heads on a
/// token grid of side input_size / patch_size / 2^i; a patch-merging layer
/// halves the grid and doubles the width between stages.
struct ModelConfig {
  std::size_t input_size = 32;
  std::size_t in_channels = 3;
  std::size_t patch_size = 2;
  std::vector<std::size_t> depths{2, 2};
  std::vector<std::size_t> dims{16, 32};
  std::vector<std::size_t> heads{2, 4};
  std::size_t window = 4;
  std::size_t shift = 2;
  double mlp_ratio = 4.0;
  std::string head = "PainICU3";
  AttentionMode mode = AttentionMode::windowed;
  double dropout = 0.0;    // on attention and MLP outputs, training only
  double drop_path = 0.0;  // stochastic depth, rises linearly to this rate over blocks

  /// 32x32 input, patch 2, depths [2,2], dims [16,32], heads [2,4], M=4, s=2.
  static ModelConfig toy() { return ModelConfig{}; }

  std::size_t num_aus() const { return head_aus(head).size(); }
  std::size_t stages() const { return depths.size(); }
  std::size_t grid(std::size_t stage) const { return (input_size / patch_size) >> stage; }
  std::size_t tokens(std::size_t stage) const { return grid(stage) * grid(stage); }
  std::size_t hidden(std::size_t stage) const {
    return static_cast<std::size_t>(static_cast<double>(dims.at(stage)) * mlp_ratio);
  }

  /// Window side actually used at a stage: a grid no larger than the window
  /// is attended as one window.
  std::size_t window_at(std::size_t stage) const { return std::min(window, grid(stage)); }
  /// A single window covering the whole grid is never shifted.
  std::size_t shift_at(std::size_t stage) const { return grid(stage) <= window ? 0 : shift; }

  ModelConfig with_head(std::string tag) const {
    ModelConfig c = *this;
    c.head = std::move(tag);
    return c;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw ValidationError("model config: " + m); };
    if (input_size == 0 || patch_size == 0 || in_channels == 0) fail("sizes must be positive");
    if (input_size % patch_size) fail("input_size must be divisible by patch_size");
    if (depths.empty()) fail("at least one stage required");
    if (dims.size() != depths.size() || heads.size() != depths.size())
      fail("depths, dims and heads must have equal length");
    if (window == 0) fail("window must be positive");
    if (shift >= window) fail("shift must satisfy 0 <= shift < window");
    if (!(mlp_ratio > 0)) fail("mlp_ratio must be positive");
    if (!(dropout >= 0 && dropout < 1) || !(drop_path >= 0 && drop_path < 1))
      fail("dropout and drop_path must lie in [0, 1)");
    if (hidden(0) == 0) fail("mlp hidden width rounds to zero");
    head_aus(head);
    for (std::size_t s = 0; s < depths.size(); ++s) {
      if (depths[s] == 0) fail("stage depth must be positive");
      if (heads[s] == 0 || dims[s] % heads[s]) fail("dims[" + std::to_string(s) + "] not divisible by heads");
      if (grid(s) == 0) fail("token grid vanishes at stage " + std::to_string(s));
      if (s + 1 < depths.size()) {
        if (grid(s) % 2) fail("odd token grid before patch merging at stage " + std::to_string(s));
        if (dims[s + 1] != 2 * dims[s]) fail("dims must double between stages");
      }
      if (mode == AttentionMode::windowed && grid(s) % window_at(s))
        fail("token grid " + std::to_string(grid(s)) + " not divisible by window at stage " + std::to_string(s));
    }
  }

  std::uint64_t digest() const;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"input_size", c.input_size}, {"in_channels", c.in_channels}, {"patch_size", c.patch_size},
                     {"depths", c.depths},         {"dims", c.dims},               {"heads", c.heads},
                     {"window", c.window},         {"shift", c.shift},             {"mlp_ratio", c.mlp_ratio},
                     {"head", c.head},             {"mode", c.mode},               {"dropout", c.dropout},
                     {"drop_path", c.drop_path}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  static const std::vector<std::string> known{"input_size", "in_channels", "patch_size", "depths",
                                              "dims",       "heads",       "window",     "shift",
                                              "mlp_ratio",  "head",        "mode",       "dropout",
                                              "drop_path"};
  for (const auto& [k, _] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw ValidationError("model config: unknown key '" + k + "'");
  ModelConfig d;
  c.input_size = j.value("input_size", d.input_size);
  c.in_channels = j.value("in_channels", d.in_channels);
  c.patch_size = j.value("patch_size", d.patch_size);
  c.depths = j.value("depths", d.depths);
  c.dims = j.value("dims", d.dims);
  c.heads = j.value("heads", d.heads);
  c.window = j.value("window", d.window);
  c.shift = j.value("shift", d.shift);
  c.mlp_ratio = j.value("mlp_ratio", d.mlp_ratio);
  c.head = j.value("head", d.head);
  c.mode = j.value("mode", d.mode);
  c.dropout = j.value("dropout", d.dropout);
  c.drop_path = j.value("drop_path", d.drop_path);
}

// Digest of the canonical JSON form (keys sorted by nlohmann's std::map).
inline std::uint64_t ModelConfig::digest() const { return fnv1a64(nlohmann::json(*this).dump()); }

}  // namespace aupipe
