#pragma once

#include "mtlstm/lstm.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace mtlstm {

inline constexpr Index kLabelCount = 11;

struct TrainConfig {
  int epochs = 50;
  Index batch = 64;
  double learning_rate = 0.001;
  /// Global gradient-norm clip; <= 0 disables clipping.
  double clip_norm = 5.0;
  std::uint64_t seed = 0;

  static TrainConfig predictor_defaults() { return {}; }
  static TrainConfig mapper_defaults() { return {20, 32, 0.001, 5.0, 0}; }
};

/// `length` consecutive rows of `series` starting at `start`, with targets the
/// rows one step later (teacher forcing). Requires start + length < rows.
struct RegressionWindow {
  const Matrix* series = nullptr;
  Index start = 0;
  Index length = 0;
};

/// Rows [start, start + length) of `features` with their aligned per-row labels.
struct LabelWindow {
  const Matrix* features = nullptr;
  const std::vector<int>* labels = nullptr;
  Index start = 0;
  Index length = 0;
};

struct TrainResult {
  LstmParams params;
  std::vector<double> loss_history;  // one value per epoch
};

/// Adam on teacher-forced one-step-ahead RMSE. Shuffling is seeded by
/// `config.seed`, so identical inputs give bitwise identical parameters.
TrainResult train(std::span<const RegressionWindow> data, const Network& initial,
                  const TrainConfig& config);

/// Trains a single-group LSTM with an 11-way softmax head on per-step
/// cross-entropy. Initialization is seeded by `config.seed`.
TrainResult train_mapper(std::span<const LabelWindow> data, Index input_size,
                         const TrainConfig& config, Index hidden_size = 64);

/// Per-step class probabilities (T x 11) from a trained mapper.
Matrix mapper_probabilities(const Network& mapper, const Matrix& features);

}  // namespace mtlstm
