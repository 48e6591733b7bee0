#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "capslab/network.hpp"
#include "capslab/objective.hpp"

namespace caps {

struct TrainConfig {
  double lr = 1e-3;
  double lr_decay = 0.97;      // per-epoch factor: lr after k epochs is lr * decay^k
  double weight_decay = 1e-6;  // L2, added to the gradient before the moment updates
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int batch_size = 512;
  int max_epochs = 20;
  double target_accuracy = 0.0;  // early stop once val accuracy reaches this; <= 0 disables
  std::uint64_t seed = 1;
  LossConfig loss;

  void validate() const;
};

struct AdamState {
  ModelParams m, v;  // first/second moments, shapes mirror the parameters
  long step = 0;
};

// One bias-corrected Adam update from batch-mean gradients. Non-finite
// gradients abort with the parameter name and step number.
void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, double lr,
               double weight_decay, const TrainConfig& cfg);

struct TrainStepRecord {
  long step, epoch;
  double loss_margin, loss_recon, lr;
};

struct TrainEpochRecord {
  long epoch;
  double val_accuracy;
  std::vector<double> max_caps_norms;  // per capsule layer, max over the epoch's batches
  std::vector<double> w_grad_norms;    // per routing-weight block, mean over the epoch's steps
};

struct TrainLog {
  std::vector<TrainStepRecord> steps;
  std::vector<TrainEpochRecord> epochs;
};

void write_train_log_jsonl(const TrainLog& log, const std::string& path);
TrainLog read_train_log_jsonl(const std::string& path);

struct TrainSet {
  std::vector<Tensor> images;
  std::vector<int> labels;
};

// Applied to every drawn training sample; rng is deterministic in
// (seed, epoch, sample index), so runs with equal settings are bitwise equal.
// Validation images are used as-is.
using SampleTransform = std::function<Tensor(const Tensor& image, Rng& rng)>;

struct TrainOptions {
  ArchitectureSpec arch;
  TrainConfig cfg;
  std::string jsonl_path;       // write the log incrementally when nonempty
  std::string checkpoint_path;  // write after every epoch when nonempty
  SampleTransform transform;    // optional
  // Per-step observation hook: max_norms[l][i] is the largest norm capsule i of
  // layer l reached within the step's batch (PrimeCaps first). Used by the
  // starvation tracker.
  std::function<void(long step, const std::vector<Tensor>& max_norms)> step_hook;
};

struct TrainResult {
  ModelParams params;
  AdamState adam;
  TrainLog log;
  double best_val_accuracy = 0.0;
  long epochs_run = 0;
};

// Adam training with per-epoch exponential lr decay, seeded shuffling,
// per-epoch validation, and optional early stopping. max_epochs 0 returns the
// initial parameters and an empty log.
TrainResult train(const TrainSet& train_set, const TrainSet& val_set, const TrainOptions& opt);

double evaluate_accuracy(const ArchitectureSpec& arch, const ModelParams& params,
                         const std::vector<Tensor>& images, const std::vector<int>& labels);

// Checkpoint container: "CAPS" magic, u32 version, u64 header length, JSON
// header naming every tensor (shape + byte offset into the data section),
// then raw little-endian f32 blobs in header order. The optimizer state is
// stored under "adam." names; load tolerates checkpoints saved without it.
void save_checkpoint(const ModelParams& params, const AdamState* state, const std::string& path);
void load_checkpoint(const std::string& path, ModelParams& params, AdamState* state);

}  // namespace caps
