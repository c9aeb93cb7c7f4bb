#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pcqa/model.hpp"
#include "pcqa/point_cloud.hpp"
#include "pcqa/preprocess.hpp"
#include "pcqa/tensor.hpp"

namespace pcqa {

struct TrainConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  std::size_t epochs = 120;
  std::uint64_t seed = 0;
  std::size_t fold_count = 6;
  // Optional cap on total optimizer steps across epochs; 0 means no cap.
  std::size_t max_steps = 0;
};

// Rejects negative or non-finite rates, betas outside [0, 1), eps <= 0.
// learning_rate 0 and epochs 0 are allowed: both are useful no-op probes.
void validate(const TrainConfig& cfg);

// Per-tensor Adam moments, lazily sized on the first step.
struct OptimizerState {
  std::vector<Tensor> m, v;
  std::uint64_t t = 0;
};

// (mean(partition_scores) - mos)^2
double mse_loss(const std::vector<double>& partition_scores, double mos);

// One bias-corrected Adam update, in place.
void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
               OptimizerState& state, const TrainConfig& cfg);

// A stimulus ready for training: its patches are extracted once and reused
// every epoch.
struct TrainStimulus {
  std::string path;
  double mos = 0.0;
  std::vector<PartitionPatches> partitions;
};

struct TraceEntry {
  std::size_t epoch = 0;
  std::size_t step = 0;  // global optimizer step index
  std::string stimulus;
  double loss = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<TraceEntry> trace;
};

// Invoked after each completed epoch with a snapshot of the current weights
// (skipped for an epoch cut short by max_steps).
using EpochCallback = std::function<void(std::size_t epoch, const ModelParams& snapshot)>;

// MSE regression of cloud scores to MOS, batch size one: each step runs one
// stimulus' full forward, backpropagates, and applies Adam. Stimulus order is
// reshuffled every epoch from a counter-based generator, so the whole run is
// a pure function of (data, configs, seed).
TrainResult train(const std::vector<TrainStimulus>& data, const ModelConfig& model_cfg,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// Loads and preprocesses every manifest entry (paths resolved against
// base_dir unless absolute). Any unreadable or malformed stimulus aborts the
// load with its path in the error.
std::vector<TrainStimulus> load_training_set(const DatasetManifest& manifest,
                                             const std::string& base_dir,
                                             const PreprocessConfig& pre_cfg,
                                             std::size_t threads = 1);

struct FoldSplit {
  DatasetManifest train, test;
};

// Partitions reference ids (never individual stimuli) into k test folds, so
// all degraded versions of a reference land on the same side. Deterministic
// in seed. Requires 2 <= k <= number of distinct references.
std::vector<FoldSplit> kfold_split(const DatasetManifest& manifest, std::size_t k,
                                   std::uint64_t seed);

}  // namespace pcqa
