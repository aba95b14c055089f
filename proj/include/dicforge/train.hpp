#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dicforge/dataset.hpp"
#include "dicforge/metrics.hpp"
#include "dicforge/nn.hpp"

namespace dicforge::net {

struct TrainConfig {
  std::filesystem::path data_dir;
  int epochs = 100;
  int batch = 12;
  double lr = 1e-4;
  uint64_t seed = 0;
  int crop = 0;        // center-crop samples to this size; 0 keeps native
  int ckpt_every = 10; // epochs between rolling checkpoint writes
  std::filesystem::path ckpt_path;
  std::filesystem::path log_path;  // JSON-lines training log
  std::filesystem::path resume_from;
  bool verbose = false;
};

/// A dataset sample loaded to trainer resolution.
struct LoadedSample {
  std::vector<float> reference;
  std::vector<float> deformed;
  std::vector<float> u;
  std::vector<float> v;
  int size = 0;
};

/// In-memory view of a generated dataset split at a fixed crop size.
class DataView {
 public:
  static DataView load(const std::filesystem::path& dir, bool train_split, int crop,
                       size_t limit = 0);

  /// Wraps already-materialized samples (used by tests and overfit runs).
  static DataView from_samples(std::vector<LoadedSample> samples);

  size_t count() const { return samples_.size(); }
  int size() const { return samples_.empty() ? 0 : samples_[0].size; }
  const LoadedSample& sample(size_t i) const { return samples_[i]; }

  /// Stacks samples[indices] into (B,2,S,S) input and target tensors.
  std::pair<tc::Tensor<float>, tc::Tensor<float>> batch(const std::vector<size_t>& indices) const;

 private:
  std::vector<LoadedSample> samples_;
};

LoadedSample to_loaded_sample(const data::Sample& sample, int crop);

struct EpochStats {
  int epoch = 0;
  int64_t steps = 0;    // cumulative optimizer steps
  double mean_loss = 0; // mean MSE over the epoch
  double wall_ms = 0;
};

/// Runs the Adam/MSE training loop over a DataView. Shuffling, dropout,
/// and initialization all derive from TrainConfig::seed, so a run is a
/// pure function of (config, data). Checkpoints roll every ckpt_every
/// epochs; resume continues from the stored Adam step with the identical
/// schedule.
class Trainer {
 public:
  Trainer(BayesDicNet<float>& model, DataView data, TrainConfig cfg);

  /// Trains until `epochs` or until stop(stats) returns true (checked
  /// after every epoch).
  std::vector<EpochStats> run(const std::function<bool(const EpochStats&)>& stop = nullptr);

  /// Deterministic-forward MAE in pixels over the held data, both
  /// directions pooled.
  double train_mae();

  /// Deterministic predictions for an arbitrary view (test split).
  eval::MetricsReport evaluate(const DataView& view);

  int64_t global_step() const { return opt_.step_count(); }
  tc::AdamOptimizer<float>& optimizer() { return opt_; }

 private:
  std::vector<size_t> epoch_order(int epoch) const;

  BayesDicNet<float>& model_;
  DataView data_;
  TrainConfig cfg_;
  tc::AdamOptimizer<float> opt_;
  int start_epoch_ = 0;
};

/// Predicts displacement fields for every sample of a view with the
/// deterministic forward pass, batching internally.
std::vector<eval::DisplacementField> predict_fields(const BayesDicNet<float>& model,
                                                    const DataView& view, int batch = 8);

}  // namespace dicforge::net
