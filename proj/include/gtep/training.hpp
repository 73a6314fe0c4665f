#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "gtep/features.hpp"
#include "gtep/model.hpp"
#include "gtep/telemetry.hpp"

namespace gtep {

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch_size = 256;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  double dropout_p = 0.1;
  std::uint64_t seed = 42;
  FeatureMode feature_mode = FeatureMode::Full;
  LagNorm lag_norm = LagNorm::PerColumn;
  std::vector<std::size_t> hidden = {64, 64, 32};
  /// Early stopping counts an epoch as an improvement when val < best - min_improvement.
  double min_improvement = 1e-7;

  void validate() const;
  std::vector<std::size_t> dims() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 0 is the untrained initialisation
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainedModel {
  PowerModel model;
  TrainConfig config;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  std::size_t stop_epoch = 0;  // last epoch run
  bool stopped_early = false;
};

struct SplitSpec {
  std::vector<int> train = {1, 2, 3, 4};
  std::vector<int> val = {5};
  std::vector<int> test = {6};
};

struct Split {
  std::vector<Trial> train;
  std::vector<Trial> val;
  std::vector<Trial> test;
};

/// Throws std::invalid_argument for missing, empty or overlapping members.
Split split_dataset(const Dataset& dataset, const SplitSpec& spec = {});

/// Training and validation rows plus the normalizer fitted on the training rows only.
struct PreparedData {
  Normalizer normalizer;
  std::size_t dim = 0;
  std::vector<float> train_x;  // rows x dim, normalized
  std::vector<float> train_y;  // normalized targets
  std::vector<float> val_x;
  std::vector<float> val_y;
  std::size_t train_rows() const noexcept { return train_y.size(); }
  std::size_t val_rows() const noexcept { return val_y.size(); }
};

PreparedData prepare_data(const std::vector<Trial>& train, const std::vector<Trial>& val,
                          const TrainConfig& config);

/// Minibatch Adam on normalized MSE with per-epoch seeded shuffling, early
/// stopping on validation loss and best-epoch weight restoration. The test
/// trials never reach this function.
TrainedModel train(const std::vector<Trial>& train, const std::vector<Trial>& val,
                   const TrainConfig& config);
/// Splits `dataset` and trains on the train/val members only.
TrainedModel train(const Dataset& dataset, const TrainConfig& config, const SplitSpec& spec = {});

/// Mean squared error of normalized predictions, dropout off.
double mse_loss(const Mlp& mlp, std::span<const float> x, std::span<const float> y, std::size_t dim);

struct AblationEntry {
  FeatureMode mode;
  double test_r2 = 0.0;
  TrainedModel model;
};

/// One model per feature mode with a shared seed; test R² is teacher-forced.
std::vector<AblationEntry> ablate(const Dataset& dataset, std::uint64_t seed,
                                  const SplitSpec& spec = {}, TrainConfig base = {});

}  // namespace gtep
