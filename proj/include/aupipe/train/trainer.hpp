#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <exception>
#include <functional>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "aupipe/eval/evaluator.hpp"
#include "aupipe/model/winformer.hpp"
#include "aupipe/random.hpp"
#include "aupipe/train/adam.hpp"
#include "aupipe/train/config.hpp"

namespace aupipe {

/// One preprocessed frame: normalized [C, H, W] image and presence labels in
/// head AU order. Unannotated frames carry no labels and never enter the loss.
struct Sample {
  std::string frame_id;
  Tensor image;
  std::vector<double> labels;
  bool annotated = true;
};

struct TrainState {
  ParameterSet params;
  AdamState adam;
  std::uint64_t epochs_done = 0;
};

struct BatchGradient {
  GradientMap grads;
  double loss = 0;             // mean BCE over annotated frames
  std::size_t annotated = 0;
  std::vector<std::vector<double>> probabilities;  // per batch entry, pre-update
};

struct EpochMetrics {
  std::uint64_t epoch = 0;  // 1-based
  double loss = 0;
  EvalReport train;
  std::optional<EvalReport> test;
  double wall_seconds = 0;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix64(a ^ splitmix64(b)); }

inline bool flip_for(const TrainConfig& tc, std::uint64_t epoch, const std::string& frame_id) {
  const std::uint64_t h = mix(mix(tc.seed, epoch), fnv1a64(frame_id));
  return static_cast<double>(h >> 11) * 0x1.0p-53 < tc.flip_probability;
}

}  // namespace detail

/// Mirror of a [C, H, W] tensor along W.
inline Tensor flip_horizontal(const Tensor& chw) {
  if (chw.rank() != 3) throw ShapeError("flip_horizontal: expected [C, H, W]");
  const std::size_t rows = chw.dim(0) * chw.dim(1), w = chw.dim(2);
  std::vector<double> v(chw.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t x = 0; x < w; ++x) v[r * w + x] = chw[r * w + (w - 1 - x)];
  return Tensor(chw.shape(), std::move(v));
}

/// Gradient of the masked mean BCE over `batch`, computed by `num_workers`
/// replicas on equal contiguous shards. Shard gradients are combined in shard
/// order, each weighted by its share of annotated frames (a plain mean when
/// the shards carry equal annotated counts). `flips[i]` mirrors batch entry i;
/// `noise_seed` drives dropout/drop-path when the config enables them.
inline BatchGradient parallel_gradients(const ParameterSet& params, const ModelConfig& cfg, const TrainConfig& tc,
                                        const std::vector<const Sample*>& batch, std::size_t num_workers,
                                        const std::vector<bool>& flips = {}, std::uint64_t noise_seed = 0) {
  if (batch.empty()) throw ValidationError("parallel_gradients: empty batch");
  if (num_workers == 0 || batch.size() % num_workers)
    throw ValidationError("parallel_gradients: batch of " + std::to_string(batch.size()) +
                          " not divisible into " + std::to_string(num_workers) + " equal shards");
  if (!flips.empty() && flips.size() != batch.size()) throw ValidationError("parallel_gradients: flips size mismatch");
  const std::size_t num_aus = cfg.num_aus();
  if (!tc.pos_weight.empty() && tc.pos_weight.size() != num_aus)
    throw ValidationError("pos_weight must have one entry per AU");
  for (const auto* s : batch)
    if (s->annotated && s->labels.size() != num_aus)
      throw ValidationError("sample '" + s->frame_id + "' has " + std::to_string(s->labels.size()) +
                            " labels, head predicts " + std::to_string(num_aus));
  const bool stochastic = cfg.dropout > 0 || cfg.drop_path > 0;
  const std::size_t shard = batch.size() / num_workers;

  struct ShardOut {
    GradientMap grads;
    double loss = 0;
    std::size_t annotated = 0;
    std::exception_ptr error;
  };
  std::vector<ShardOut> outs(num_workers);
  BatchGradient result;
  result.probabilities.resize(batch.size());

  auto run = [&](std::size_t k) {
    auto& out = outs[k];
    try {
      const auto local = params.with_fresh_grads();
      GradTape tape;
      TensorList<double> rows;
      std::vector<std::size_t> keep;
      std::vector<double> targets;
      for (std::size_t i = k * shard; i < (k + 1) * shard; ++i) {
        const Sample& s = *batch[i];
        const Tensor img = !flips.empty() && flips[i] ? flip_horizontal(s.image) : s.image;
        std::mt19937_64 rng(detail::mix(noise_seed, fnv1a64(s.frame_id)));
        auto logits = forward(img, local, cfg, stochastic ? &rng : nullptr);
        auto& probs = result.probabilities[i];
        for (std::size_t a = 0; a < num_aus; ++a) probs.push_back(sigmoid_value(logits[a]));
        if (s.annotated) {
          keep.push_back(rows.size());
          targets.insert(targets.end(), s.labels.begin(), s.labels.end());
        }
        rows.push_back(reshape(logits, {1, num_aus}));
      }
      out.annotated = keep.size();
      for (const auto& [path, t] : params.tensors)
        if (!tc.freeze_backbone || is_head_path(path)) out.grads[path].assign(t.size(), 0.0);
      if (keep.empty()) return;
      auto selected = index_rows(concat(rows, 0), keep);
      auto loss = bce_with_logits(selected, Tensor({keep.size(), num_aus}, std::move(targets)),
                                  std::span<const double>(tc.pos_weight));
      out.loss = loss.item();
      backward(loss);
      for (auto& [path, g] : out.grads) {
        const auto grad = local.at(path).grad();
        std::copy(grad.begin(), grad.end(), g.begin());
      }
    } catch (...) {
      out.error = std::current_exception();
    }
  };

  if (num_workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < num_workers; ++k) pool.emplace_back(run, k);
    for (auto& t : pool) t.join();
  }
  for (const auto& o : outs)
    if (o.error) std::rethrow_exception(o.error);

  for (const auto& o : outs) result.annotated += o.annotated;
  if (result.annotated == 0) {
    result.grads = outs[0].grads;
    return result;
  }
  const double total = static_cast<double>(result.annotated);
  for (std::size_t k = 0; k < num_workers; ++k) {
    const double w = static_cast<double>(outs[k].annotated) / total;
    result.loss += w * outs[k].loss;
    for (const auto& [path, g] : outs[k].grads) {
      auto& dst = result.grads[path];
      if (dst.empty()) dst.assign(g.size(), 0.0);
      if (w == 0) continue;
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += w * g[i];
    }
  }
  return result;
}

/// Per-AU confusion counts of the model's predictions on annotated samples.
inline std::vector<ConfusionCounter> count_predictions(const ParameterSet& params, const ModelConfig& cfg,
                                                       const std::vector<Sample>& samples, double threshold = 0.5) {
  const auto& ids = head_aus(cfg.head);
  auto counters = make_counters(ids);
  for (const auto& s : samples) {
    if (!s.annotated) continue;
    const auto probs = predict_probabilities(s.image, params, cfg);
    for (std::size_t a = 0; a < ids.size(); ++a) counters[a].update(probs[a], s.labels[a] > 0.5 ? 1 : 0, threshold);
  }
  return counters;
}

inline EvalReport evaluate(const ParameterSet& params, const ModelConfig& cfg, const std::vector<Sample>& samples,
                           double threshold = 0.5) {
  return make_report(count_predictions(params, cfg, samples, threshold), threshold);
}

/// Batch sizes that do not split evenly across the configured workers (the
/// final short batch) use the largest smaller worker count that does.
inline std::size_t workers_for(std::size_t batch, std::size_t num_workers) {
  std::size_t w = std::min(batch, num_workers);
  while (batch % w) --w;
  return w;
}

/// One pass over `samples` in a seed-and-epoch determined order, one Adam
/// step per batch. Training metrics come from the pre-update predictions.
inline EpochMetrics train_epoch(TrainState& st, const ModelConfig& cfg, const TrainConfig& tc,
                                const std::vector<Sample>& samples) {
  tc.validate();
  if (samples.empty()) throw ValidationError("train_epoch: empty dataset");
  std::size_t annotated = 0;
  for (const auto& s : samples) annotated += s.annotated;
  if (annotated == 0) throw ValidationError("train_epoch: no annotated frames");
  const auto start = std::chrono::steady_clock::now();
  const std::uint64_t epoch = st.epochs_done + 1;

  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(detail::mix(tc.seed, epoch));
  stable_shuffle(order, rng);

  const auto& ids = head_aus(cfg.head);
  auto counters = make_counters(ids);
  double loss_sum = 0;
  for (std::size_t b = 0; b < order.size(); b += tc.batch_size) {
    const std::size_t n = std::min(tc.batch_size, order.size() - b);
    std::vector<const Sample*> batch;
    std::vector<bool> flips;
    for (std::size_t i = b; i < b + n; ++i) {
      batch.push_back(&samples[order[i]]);
      flips.push_back(detail::flip_for(tc, epoch, samples[order[i]].frame_id));
    }
    auto g = parallel_gradients(st.params, cfg, tc, batch, workers_for(n, tc.num_workers), flips,
                                detail::mix(tc.seed ^ 0x5eedULL, epoch));
    for (std::size_t i = 0; i < n; ++i) {
      if (!batch[i]->annotated) continue;
      for (std::size_t a = 0; a < ids.size(); ++a)
        counters[a].update(g.probabilities[i][a], batch[i]->labels[a] > 0.5 ? 1 : 0, tc.threshold);
    }
    if (g.annotated == 0) continue;
    loss_sum += g.loss * static_cast<double>(g.annotated);
    st.params = adam_step(st.params, g.grads, st.adam, tc.adam());
  }
  st.epochs_done = epoch;
  EpochMetrics m;
  m.epoch = epoch;
  m.loss = loss_sum / static_cast<double>(annotated);
  m.train = make_report(counters, tc.threshold);
  m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return m;
}

inline nlohmann::json epoch_record(const EpochMetrics& m) {
  nlohmann::json j{{"epoch", m.epoch}, {"loss", m.loss}, {"train", m.train}, {"wall_seconds", m.wall_seconds}};
  if (m.test) j["test"] = *m.test;
  return j;
}

/// Runs epochs until tc.epochs are done (continuing a resumed state), writing
/// one JSON line per epoch to `log` when given.
inline std::vector<EpochMetrics> train(TrainState& st, const ModelConfig& cfg, const TrainConfig& tc,
                                       const std::vector<Sample>& train_set,
                                       const std::vector<Sample>* test_set = nullptr, std::ostream* log = nullptr,
                                       const std::function<void(const TrainState&, const EpochMetrics&)>& on_epoch = {}) {
  check_parameters(st.params, cfg);
  std::vector<EpochMetrics> out;
  while (st.epochs_done < tc.epochs) {
    auto m = train_epoch(st, cfg, tc, train_set);
    if (test_set && !test_set->empty()) m.test = evaluate(st.params, cfg, *test_set, tc.threshold);
    if (log) *log << epoch_record(m).dump() << '\n' << std::flush;
    if (on_epoch) on_epoch(st, m);
    out.push_back(std::move(m));
  }
  return out;
}

struct TransferResult {
  ParameterSet params;
  EvalReport pretrain_report;   // stage A held-out split
  EvalReport finetune_report;   // stage B held-out split
  std::uint64_t backbone_after_pretrain = 0;
};

/// Trains on dataset A with its head, swaps in B's head (backbone kept) and
/// trains on B with a fresh optimizer.
inline TransferResult pretrain_then_finetune(const ModelConfig& cfg_a, const std::vector<Sample>& train_a,
                                             const std::vector<Sample>& test_a, const TrainConfig& tc_a,
                                             const std::string& head_b, const std::vector<Sample>& train_b,
                                             const std::vector<Sample>& test_b, const TrainConfig& tc_b,
                                             std::uint64_t init_seed, std::ostream* log = nullptr) {
  TrainState a{init_parameters(cfg_a, init_seed), {}, 0};
  train(a, cfg_a, tc_a, train_a, &test_a, log);
  TransferResult r;
  r.pretrain_report = evaluate(a.params, cfg_a, test_a.empty() ? train_a : test_a, tc_a.threshold);
  r.backbone_after_pretrain = parameter_checksum(a.params, true);
  const auto cfg_b = cfg_a.with_head(head_b);
  TrainState b{swap_head(a.params, head_b, detail::mix(init_seed, fnv1a64(head_b))), {}, 0};
  train(b, cfg_b, tc_b, train_b, &test_b, log);
  r.finetune_report = evaluate(b.params, cfg_b, test_b.empty() ? train_b : test_b, tc_b.threshold);
  r.params = std::move(b.params);
  return r;
}

}  // namespace aupipe
