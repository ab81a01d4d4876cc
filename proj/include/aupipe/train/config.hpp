#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "aupipe/digest.hpp"
#include "aupipe/errors.hpp"
#include "aupipe/train/adam.hpp"

namespace aupipe {

struct TrainConfig {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  std::size_t num_workers = 3;
  double flip_probability = 0.5;
  std::vector<double> pos_weight;  // per AU; empty = unweighted
  bool freeze_backbone = false;    // fine-tune only the head
  double threshold = 0.5;

  AdamConfig adam() const { return {learning_rate, beta1, beta2, eps}; }

  void validate() const {
    auto fail = [](const std::string& m) { throw ValidationError("train config: " + m); };
    if (!(learning_rate > 0)) fail("learning_rate must be positive");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) fail("betas must lie in [0, 1)");
    if (!(eps > 0)) fail("eps must be positive");
    if (epochs < 1) fail("epochs must be at least 1");
    if (batch_size < 1) fail("batch_size must be at least 1");
    if (num_workers < 1) fail("num_workers must be at least 1");
    if (!(flip_probability >= 0 && flip_probability <= 1)) fail("flip_probability must lie in [0, 1]");
    for (double w : pos_weight)
      if (!(w > 0)) fail("pos_weight entries must be positive");
    if (!(threshold > 0 && threshold < 1)) fail("threshold must lie in (0, 1)");
  }

  std::uint64_t digest() const;
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"eps", c.eps},
                     {"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"seed", c.seed},
                     {"num_workers", c.num_workers},
                     {"flip_probability", c.flip_probability},
                     {"pos_weight", c.pos_weight},
                     {"freeze_backbone", c.freeze_backbone},
                     {"threshold", c.threshold}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  static const std::vector<std::string> known{"learning_rate", "beta1",       "beta2",
                                              "eps",           "epochs",      "batch_size",
                                              "seed",          "num_workers", "flip_probability",
                                              "pos_weight",    "freeze_backbone", "threshold"};
  for (const auto& [k, _] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw ValidationError("train config: unknown key '" + k + "'");
  TrainConfig d;
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.eps = j.value("eps", d.eps);
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.seed = j.value("seed", d.seed);
  c.num_workers = j.value("num_workers", d.num_workers);
  c.flip_probability = j.value("flip_probability", d.flip_probability);
  c.pos_weight = j.value("pos_weight", d.pos_weight);
  c.freeze_backbone = j.value("freeze_backbone", d.freeze_backbone);
  c.threshold = j.value("threshold", d.threshold);
}

inline std::uint64_t TrainConfig::digest() const { return fnv1a64(nlohmann::json(*this).dump()); }

}  // namespace aupipe
