#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "ivt/alignment.hpp"
#include "ivt/dataset.hpp"
#include "ivt/encoder.hpp"

namespace ivt {

struct TrainConfig {
  double base_lr = 5e-3;
  double weight_decay = 1e-4;
  // Heavy-ball momentum amplifies the early cross-modal mean attraction that
  // collapses desk-scale runs; plain SGD trains reliably here. The momentum
  // update stays implemented and configurable.
  double momentum = 0.0;
  int batch_size = 32;
  int total_steps = 2000;
  int warmup_steps = -1;  // negative -> 5% of total_steps
  std::uint64_t seed = 1;
  int checkpoint_every = 500;
  int eval_every = 500;
  int stop_after_step = 0;  // 0 = run to total_steps; otherwise halt after this step

  int resolved_warmup() const { return warmup_steps >= 0 ? warmup_steps : total_steps / 20; }
  void validate() const;
};

// Linear warmup from 0 to base_lr, then half-cosine decay to 0 at total_steps.
// Steps beyond total_steps clamp to the final value.
double cosine_lr(int step, const TrainConfig& cfg);

// v <- momentum * v + g; theta <- theta - lr * v, with decoupled weight decay
// (theta -= lr * weight_decay * theta_old) applied only to projection
// parameters -- layer norms and embedding tables are excluded.
void sgd_step(ParamStore& params, const ParamStore& grads, ParamStore& velocity, double lr,
              double momentum, double weight_decay);

struct TrainResult {
  std::string final_checkpoint;
  LossReport last_report;
  int steps_run = 0;
};

// Optimization loop over the training split. Writes metrics.jsonl (one record
// per step), periodic checkpoints (checkpoint_step_XXXXXX.ivt) and
// checkpoint_final.ivt under out_dir; optionally evaluates on eval_split at
// the configured cadence into eval_log.jsonl. Fully reproducible per seed;
// pass resume_path to continue from a saved checkpoint.
TrainResult train(const DatasetSplit& data, const EncoderConfig& model, const TrainConfig& config,
                  const AlignmentConfig& alignment, const Vocab& vocab, const PosLexicon& lexicon,
                  const std::string& out_dir, const DatasetSplit* eval_split = nullptr,
                  const std::string& resume_path = "");

// The batch used at one training step: identity-balanced (batch_size / 2
// identities, two pairs each) when the split has enough identities, uniform
// otherwise. Deterministic per (seed, step).
Batch sample_batch(const DatasetSplit& data, int batch_size, std::uint64_t seed, int step);

}  // namespace ivt
