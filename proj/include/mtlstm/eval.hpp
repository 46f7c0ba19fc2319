#pragma once

// Baseline, k-fold cross-validation and the accuracy report.

#include "mtlstm/behavior.hpp"
#include "mtlstm/lstm.hpp"
#include "mtlstm/predictor.hpp"
#include "mtlstm/trainer.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace mtlstm {

/// Modal label; ties go to the lowest class index. Throws on empty input.
SemanticLabel baseline1_fit(std::span<const SemanticLabel> train_labels);
std::vector<SemanticLabel> baseline1_predict(SemanticLabel label, Index horizon);

/// Per-step exact-match fraction. Throws on length mismatch or empty input.
double accuracy(std::span<const SemanticLabel> pred, std::span<const SemanticLabel> truth);

enum class SplitMode { Window, Team };
std::string_view to_string(SplitMode m);
SplitMode split_mode_from_string(std::string_view s);

struct FoldPlan {
  int k = 10;
  SplitMode mode = SplitMode::Window;
  std::uint64_t seed = 0;
  std::vector<int> fold_of;  // per window

  std::vector<std::size_t> test_indices(int fold) const;
  std::vector<std::size_t> train_indices(int fold) const;
};

/// Deterministic per seed. Window mode balances fold sizes to within one;
/// team mode keeps every team in a single fold (`teams` holds one id per window).
FoldPlan kfold_split(std::size_t n_windows, int k, SplitMode mode, std::uint64_t seed,
                     std::span<const int> teams = {});

struct WindowRef {
  std::size_t series = 0;
  Window window;
};

std::vector<WindowRef> corpus_windows(std::span<const FeatureSeries> corpus, Index input_len,
                                      Index step, Index horizon);

/// Encoding statistics from the records covered by the selected windows only.
EncodingSpec fit_fold_encoding(std::span<const FeatureSeries> corpus,
                               std::span<const WindowRef> windows,
                               std::span<const std::size_t> selected);

struct ModelSpec {
  enum class Kind { Baseline, Predictor };
  std::string name;
  Kind kind = Kind::Predictor;
  GroupSchedule schedule;
  Connectivity connectivity = Connectivity::Full;
};

struct CvConfig {
  Index input_len = 1200;
  Index step = 300;
  Index horizon = 300;
  int folds = 10;
  SplitMode split = SplitMode::Window;
  std::uint64_t seed = 0;
  TrainConfig predictor = TrainConfig::predictor_defaults();
  TrainConfig mapper = TrainConfig::mapper_defaults();
  Index mapper_hidden = 64;
  RolloutOptions rollout;
  int threads = 1;  // folds evaluated concurrently
  std::vector<ModelSpec> models;
};

/// baseline-1, lstm (single group) and mt-lstm (balanced groups over `periods`).
std::vector<ModelSpec> standard_models(Index hidden_size, const std::vector<std::int64_t>& periods,
                                       Connectivity connectivity = Connectivity::Full);

struct RoleRow {
  Role role = Role::Medic;
  std::size_t windows = 0;
  double mean = 0.0;
  double std_error = 0.0;
  std::vector<double> folds;
};

struct ModelReport {
  std::string name;
  double mean = 0.0;
  double std_error = 0.0;
  std::vector<double> folds;
  std::vector<RoleRow> roles;  // medic, engineer, transporter
};

struct EvalReport {
  int k = 0;
  SplitMode split = SplitMode::Window;
  std::uint64_t seed = 0;
  std::size_t windows = 0;
  std::vector<ModelReport> models;

  const ModelReport& model(std::string_view name) const;
};

/// Sample standard deviation / sqrt(n); 0 for fewer than two values.
double standard_error(std::span<const double> values);

using ProgressFn = std::function<void(const std::string&)>;

/// Encoding, mapper and predictors are fit on the training folds only. Errors
/// from a fold are rethrown with the fold index.
EvalReport cross_validate(std::span<const FeatureSeries> corpus, const CvConfig& config,
                          const ProgressFn& progress = {});

void write_report_text(std::ostream& out, const EvalReport& report);
void write_report_csv(std::ostream& out, const EvalReport& report);
std::string report_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);

}  // namespace mtlstm
