#include "adgen/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>

#include "adgen/config.hpp"
#include "adgen/datagen.hpp"
#include "adgen/ops.hpp"

namespace adgen {

namespace {

// Stream tags that keep the independent randomness axes of one data_seed
// apart: epoch shuffles vs per-step draws (dropout, randomized positions).
constexpr std::uint64_t kShuffleTag = 1ull << 32;
constexpr std::uint64_t kStepTag = 2ull << 32;

std::string checkpoint_path(const std::string& dir, Index step) {
  char name[32];
  std::snprintf(name, sizeof name, "ckpt_%08lld.bin", static_cast<long long>(step));
  return dir + "/" + name;
}

}  // namespace

void TrainConfig::validate() const {
  if (steps < 1) throw ValueError("train: steps must be positive");
  if (batch_size < 1) throw ValueError("train: batch_size must be positive");
  if (warmup_steps < 0) throw ValueError("train: warmup_steps must be non-negative");
  if (warmup_steps > steps) throw ValueError("train: warmup_steps exceeds steps");
  if (!(lr_peak > 0.0)) throw ValueError("train: lr_peak must be positive");
  if (lr_floor_ratio < 0.0 || lr_floor_ratio > 1.0)
    throw ValueError("train: lr_floor_ratio must be in [0,1]");
  if (weight_decay < 0.0) throw ValueError("train: weight_decay must be non-negative");
  if (adam_beta1 < 0.0 || adam_beta1 >= 1.0) throw ValueError("train: adam_beta1 out of [0,1)");
  if (adam_beta2 < 0.0 || adam_beta2 >= 1.0) throw ValueError("train: adam_beta2 out of [0,1)");
  if (!(adam_eps > 0.0)) throw ValueError("train: adam_eps must be positive");
  if (grad_clip < 0.0) throw ValueError("train: grad_clip must be non-negative");
  if (eval_every < 0) throw ValueError("train: eval_every must be non-negative");
  if (checkpoint_every < 0) throw ValueError("train: checkpoint_every must be non-negative");
}

double lr_at(Index step, const TrainConfig& cfg) {
  if (step < 0 || step > cfg.steps)
    throw ValueError("lr_at: step " + std::to_string(step) + " outside [0," +
                     std::to_string(cfg.steps) + "]");
  if (step <= cfg.warmup_steps) {
    if (cfg.warmup_steps == 0) return cfg.lr_peak;
    return cfg.lr_peak * (static_cast<double>(step) / static_cast<double>(cfg.warmup_steps));
  }
  const double floor = cfg.lr_peak * cfg.lr_floor_ratio;
  const double t = static_cast<double>(step - cfg.warmup_steps) /
                   static_cast<double>(cfg.steps - cfg.warmup_steps);
  return floor + (cfg.lr_peak - floor) * 0.5 * (1.0 + std::cos(t * std::numbers::pi));
}

bool decay_applies(const std::string& name, Index rank) {
  if (rank < 2) return false;              // RMSNorm gains and other vectors/scalars
  if (name.rfind("pe.", 0) == 0) return false;  // position-encoding parameters
  return true;
}

PackedBatch pack_batch(const std::vector<std::vector<TokenId>>& seqs, bool answer_only) {
  if (seqs.empty()) throw ValueError("pack_batch: empty batch");
  const Vocab& vocab = Vocab::instance();

  Index seq = 0;
  for (const auto& s : seqs) seq = std::max(seq, static_cast<Index>(s.size()) + 1);  // +eos

  PackedBatch b;
  b.batch = static_cast<Index>(seqs.size());
  b.seq = seq;
  b.inputs.assign(static_cast<std::size_t>(b.batch * seq), vocab.pad());
  b.targets.assign(static_cast<std::size_t>(b.batch * seq), vocab.pad());
  b.mask.assign(static_cast<std::size_t>(b.batch * seq), 0);

  for (Index r = 0; r < b.batch; ++r) {
    const auto& s = seqs[static_cast<std::size_t>(r)];
    const Index len = static_cast<Index>(s.size()) + 1;  // with eos
    Index eq_pos = -1;
    for (std::size_t i = 0; i < s.size(); ++i) {
      b.inputs[static_cast<std::size_t>(r * seq) + i] = s[i];
      if (s[i] == vocab.equals()) eq_pos = static_cast<Index>(i);
    }
    b.inputs[static_cast<std::size_t>(r * seq + len - 1)] = vocab.eos();
    if (answer_only && eq_pos < 0)
      throw ValueError("pack_batch: answer-only loss needs '=' in every sequence");

    for (Index j = 0; j + 1 < len; ++j) {
      const Index flat = r * seq + j;
      b.targets[static_cast<std::size_t>(flat)] =
          b.inputs[static_cast<std::size_t>(flat + 1)];
      const bool keep = !answer_only || j >= eq_pos;  // first kept target: token after '='
      b.mask[static_cast<std::size_t>(flat)] = keep ? 1 : 0;
    }
  }
  return b;
}

std::vector<Index> epoch_permutation(Index n, std::uint64_t data_seed, Index epoch) {
  if (n < 0) throw ValueError("epoch_permutation: negative size");
  std::vector<Index> perm(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
  RngStream rng(data_seed, kShuffleTag + static_cast<std::uint64_t>(epoch));
  for (Index i = n - 1; i > 0; --i) {
    const Index j = static_cast<Index>(rng.below(static_cast<std::uint64_t>(i) + 1));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  return perm;
}

namespace {

TrainResult train_impl(ModelParams<float> params, OptimState<float> opt, Index start_step,
                       const TrainConfig& cfg, const std::vector<std::vector<TokenId>>& data,
                       const TrainHooks& hooks) {
  const ModelConfig& model_cfg = params.config;
  cfg.validate();
  if (data.empty()) throw ValueError("train: empty dataset");
  for (const auto& s : data) {
    if (s.empty()) throw ValueError("train: empty sequence in dataset");
    if (static_cast<Index>(s.size()) + 1 > model_cfg.max_seq_len)
      throw ValueError("train: sequence of length " + std::to_string(s.size()) +
                       " plus EOS exceeds model capacity " +
                       std::to_string(model_cfg.max_seq_len));
    for (TokenId t : s)
      if (t < 0 || t >= model_cfg.vocab_size)
        throw ValueError("train: token id " + std::to_string(t) + " outside vocabulary");
  }

  params.set_requires_grad(true);
  auto named = params.named();

  const Index n = static_cast<Index>(data.size());
  const Index take = std::min(cfg.batch_size, n);
  const Index batches_per_epoch = std::max<Index>(1, n / cfg.batch_size);

  if (!hooks.checkpoint_dir.empty())
    std::filesystem::create_directories(hooks.checkpoint_dir);

  TrainResult result;
  std::vector<Index> perm;
  Index perm_epoch = -1;

  for (Index step = start_step + 1; step <= cfg.steps; ++step) {
    const Index epoch = (step - 1) / batches_per_epoch;
    const Index slot = (step - 1) % batches_per_epoch;
    if (epoch != perm_epoch) {
      perm = epoch_permutation(n, cfg.data_seed, epoch);
      perm_epoch = epoch;
    }

    std::vector<std::vector<TokenId>> seqs;
    seqs.reserve(static_cast<std::size_t>(take));
    for (Index i = 0; i < take; ++i)
      seqs.push_back(data[static_cast<std::size_t>(perm[static_cast<std::size_t>(
          (slot * take + i) % n)])]);
    const PackedBatch batch = pack_batch(seqs, cfg.answer_only_loss);

    RngStream step_rng(cfg.data_seed, kStepTag + static_cast<std::uint64_t>(step));
    std::vector<PositionMap> posmaps;
    posmaps.reserve(static_cast<std::size_t>(batch.batch));
    for (Index r = 0; r < batch.batch; ++r)
      posmaps.push_back(model_cfg.pe.randomized
                            ? sample_positions(batch.seq, model_cfg.pe.randomized_max, step_rng)
                            : identity_positions(batch.seq));

    Tape<float> tape;
    Tensor<float> logits =
        forward_batch(params, batch.inputs, batch.batch, batch.seq, posmaps, &tape, &step_rng);
    LossStats stats;
    Tensor<float> loss = cross_entropy(logits, batch.targets, batch.mask, &stats, &tape);
    tape.backward(loss);

    const double lr = lr_at(step, cfg);
    adamw_update(named, opt, lr, cfg);
    for (auto& [pname, p] : named) {
      (void)pname;
      p.zero_grad();
    }

    StepMetrics row;
    row.step = step;
    row.lr = lr;
    row.loss = static_cast<double>(loss[0]);
    row.accuracy = stats.accuracy;
    result.metrics.push_back(row);
    if (hooks.on_metrics) hooks.on_metrics(row);

    if (cfg.eval_every > 0 && step % cfg.eval_every == 0 && hooks.on_eval)
      hooks.on_eval(step, params);
    if (!hooks.checkpoint_dir.empty() && cfg.checkpoint_every > 0 &&
        step % cfg.checkpoint_every == 0 && step < cfg.steps)
      save_checkpoint(checkpoint_path(hooks.checkpoint_dir, step), params, opt, cfg, step);
  }

  if (!hooks.checkpoint_dir.empty())
    save_checkpoint(checkpoint_path(hooks.checkpoint_dir, cfg.steps), params, opt, cfg,
                    cfg.steps);

  result.params = std::move(params);
  result.opt = std::move(opt);
  return result;
}

}  // namespace

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const std::vector<std::vector<TokenId>>& data, const TrainHooks& hooks) {
  model_cfg.validate();
  cfg.validate();
  ModelParams<float> params = init_params<float>(model_cfg, cfg.weight_seed);
  OptimState<float> opt = OptimState<float>::init(params);
  return train_impl(std::move(params), std::move(opt), 0, cfg, data, hooks);
}

TrainResult resume_train(const std::string& checkpoint_path, const TrainConfig& cfg,
                         const std::vector<std::vector<TokenId>>& data,
                         const TrainHooks& hooks) {
  cfg.validate();
  Checkpoint ck = load_checkpoint(checkpoint_path);

  // Fields that shape the trajectory must match the checkpoint; only run
  // length and logging cadence may differ on resume.
  KVList want = train_config_kv(cfg);
  KVList have = train_config_kv(ck.train_cfg);
  auto scrub = [](KVList& kv) {
    std::erase_if(kv, [](const auto& e) {
      return e.first == "train.steps" || e.first == "train.eval_every" ||
             e.first == "train.checkpoint_every";
    });
  };
  scrub(want);
  scrub(have);
  for (std::size_t i = 0; i < want.size(); ++i)
    if (want[i] != have[i])
      throw ValueError("resume_train: config mismatch at " + want[i].first + " (checkpoint has " +
                       have[i].second + ", requested " + want[i].second + ")");
  if (ck.step >= cfg.steps)
    throw ValueError("resume_train: checkpoint already at step " + std::to_string(ck.step));

  return train_impl(std::move(ck.params), std::move(ck.opt), ck.step, cfg, data, hooks);
}

}  // namespace adgen
