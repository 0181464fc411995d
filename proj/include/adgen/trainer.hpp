#pragma once

// Training loop for the addition models: AdamW with decoupled weight decay,
// linear-warmup + cosine learning-rate schedule with a floor, right-padded
// batches with loss masking, and binary checkpoints that capture parameters,
// optimizer moments, and configs so a run can resume bit-exactly.

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "adgen/model.hpp"

namespace adgen {

struct TrainConfig {
  Index steps = 8000;
  Index batch_size = 64;
  Index warmup_steps = 500;
  double lr_peak = 3e-4;
  double lr_floor_ratio = 0.1;  // floor = lr_peak * lr_floor_ratio
  double weight_decay = 0.1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 0.0;  // global-norm clip; <= 0 disables
  std::uint64_t weight_seed = 1;
  std::uint64_t data_seed = 1;
  Index eval_every = 0;        // 0 disables the eval hook
  Index checkpoint_every = 0;  // 0 = only the final checkpoint
  bool answer_only_loss = false;

  bool operator==(const TrainConfig&) const = default;

  void validate() const;  // throws ValueError on the first violated field
};

// Learning rate at a 1-based optimizer step. Step 0 is the pre-training
// value (0 when warmup is enabled). Linear 0 -> lr_peak over warmup_steps,
// then cosine from lr_peak down to lr_peak * lr_floor_ratio at `steps`.
// Throws ValueError when step is outside [0, steps].
double lr_at(Index step, const TrainConfig& cfg);

// Adam first/second moments, one tensor per parameter in registry order.
template <typename S>
struct OptimState {
  Index step = 0;  // number of completed optimizer steps
  std::vector<Tensor<S>> m;
  std::vector<Tensor<S>> v;

  template <typename ParamsT>
  static OptimState init(ParamsT& params) {
    OptimState st;
    for (auto& [name, p] : params.named()) {
      (void)name;
      st.m.push_back(Tensor<S>::zeros(p.shape()));
      st.v.push_back(Tensor<S>::zeros(p.shape()));
    }
    return st;
  }
};

// True when decoupled weight decay applies to this parameter: matrices only
// (rank >= 2) and never position-encoding parameters. Norm gains and PE
// scalars/MLP weights stay decay-free.
bool decay_applies(const std::string& name, Index rank);

// One AdamW step over the registry `named` (same order as st.m/st.v).
// Reads each tensor's .grad(), updates moments with bias correction, applies
// the Adam step, then subtracts lr * weight_decay * p (value before the Adam
// step) where decay_applies. If grad_clip > 0, grads are scaled so the global
// L2 norm is at most grad_clip before any moment update. Throws NonFiniteError
// naming the first parameter whose gradient is not finite. Increments st.step.
template <typename S>
void adamw_update(std::vector<std::pair<std::string, Tensor<S>>>& named, OptimState<S>& st,
                  double lr, const TrainConfig& cfg) {
  if (named.size() != st.m.size() || named.size() != st.v.size())
    throw ShapeError("adamw_update: optimizer state does not match parameter registry");

  double grad_sq = 0.0;
  for (auto& [name, p] : named) {
    if (!p.has_grad()) throw ValueError("adamw_update: missing gradient for " + name);
    const S* g = p.grad();
    for (Index i = 0; i < p.numel(); ++i) {
      const double gi = static_cast<double>(g[i]);
      if (!std::isfinite(gi))
        throw NonFiniteError("adamw_update: non-finite gradient in " + name);
      grad_sq += gi * gi;
    }
  }
  double grad_scale = 1.0;
  if (cfg.grad_clip > 0.0) {
    const double norm = std::sqrt(grad_sq);
    if (norm > cfg.grad_clip) grad_scale = cfg.grad_clip / norm;
  }

  st.step += 1;
  const double t = static_cast<double>(st.step);
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, t);

  for (std::size_t k = 0; k < named.size(); ++k) {
    auto& [name, p] = named[k];
    if (st.m[k].shape() != p.shape() || st.v[k].shape() != p.shape())
      throw ShapeError("adamw_update: moment shape mismatch for " + name);
    S* pd = p.data();
    const S* g = p.grad();
    S* m = st.m[k].data();
    S* v = st.v[k].data();
    const bool decay = decay_applies(name, p.rank()) && cfg.weight_decay != 0.0;
    for (Index i = 0; i < p.numel(); ++i) {
      const double gi = static_cast<double>(g[i]) * grad_scale;
      const double mi = cfg.adam_beta1 * static_cast<double>(m[i]) + (1.0 - cfg.adam_beta1) * gi;
      const double vi =
          cfg.adam_beta2 * static_cast<double>(v[i]) + (1.0 - cfg.adam_beta2) * gi * gi;
      m[i] = static_cast<S>(mi);
      v[i] = static_cast<S>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      const double prev = static_cast<double>(pd[i]);
      double next = prev - lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
      if (decay) next -= lr * cfg.weight_decay * prev;
      pd[i] = static_cast<S>(next);
    }
  }
}

// ---- batching -------------------------------------------------------------

struct PackedBatch {
  std::vector<TokenId> inputs;     // [batch * seq], right-padded with PAD
  std::vector<TokenId> targets;    // next token; PAD where masked off
  std::vector<std::uint8_t> mask;  // 1 where the target contributes to loss
  Index batch = 0;
  Index seq = 0;
};

// Appends EOS to each sequence, right-pads to the longest, and builds
// next-token targets. Positions whose target is padding are masked off; with
// answer_only the mask keeps only targets after the '=' token (the answer
// digits, hints, and EOS). Throws ValueError on empty input or, with
// answer_only, a sequence without '='.
PackedBatch pack_batch(const std::vector<std::vector<TokenId>>& seqs, bool answer_only);

// Fisher-Yates permutation of [0, n) drawn from a (seed, epoch)-keyed stream,
// so the shuffle order depends only on data_seed and the epoch index.
std::vector<Index> epoch_permutation(Index n, std::uint64_t data_seed, Index epoch);

// ---- training loop ---------------------------------------------------------

struct StepMetrics {
  Index step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double accuracy = 0.0;  // masked next-token accuracy on the training batch
};

struct TrainHooks {
  std::function<void(const StepMetrics&)> on_metrics;
  std::function<void(Index, const ModelParams<float>&)> on_eval;  // every eval_every steps
  std::string checkpoint_dir;  // when non-empty: periodic + final checkpoints
};

struct TrainResult {
  ModelParams<float> params;
  OptimState<float> opt;
  std::vector<StepMetrics> metrics;  // one row per optimizer step run here
};

// Trains a freshly initialized model (weights from cfg.weight_seed) on the
// token sequences in `data`. Batch composition, shuffling, dropout, and
// randomized-position draws all derive from cfg.data_seed, so the logged
// metric stream is a pure function of (model_cfg, cfg, data).
TrainResult train(const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const std::vector<std::vector<TokenId>>& data, const TrainHooks& hooks = {});

// Same loop, but starting from a checkpoint written by a previous train()
// call with identical configs and data; continues at the recorded step + 1.
TrainResult resume_train(const std::string& checkpoint_path, const TrainConfig& cfg,
                         const std::vector<std::vector<TokenId>>& data,
                         const TrainHooks& hooks = {});

// ---- checkpoints ------------------------------------------------------------

// Binary format: "ADGN1" magic, config text block, completed-step counter,
// then one record per tensor (name, extents, float32 payload) for parameters
// and optimizer moments, and a trailing FNV-1a 64 checksum over everything
// before it. Load verifies magic, checksum, and shape agreement with the
// embedded model config, throwing IntegrityError otherwise.
struct IntegrityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  ModelConfig model_cfg;
  TrainConfig train_cfg;
  Index step = 0;
  ModelParams<float> params;
  OptimState<float> opt;
};

void save_checkpoint(const std::string& path, const ModelParams<float>& params,
                     const OptimState<float>& opt, const TrainConfig& train_cfg, Index step);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace adgen
