#pragma once

// Multi-timescale LSTM cell. The hidden layer is partitioned into groups that
// each tick on their own clock period; a group whose period does not divide the
// step index keeps its h and c slices unchanged. With a single group of period
// 1 this is the standard LSTM.

#include "mtlstm/tensor.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mtlstm {

class ScheduleError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// How an active group reads the previous hidden state.
///  - Full: every group reads all of h_{t-1}.
///  - Clockwork: a group reads only itself and the slower groups.
enum class Connectivity { Full, Clockwork };

std::string_view to_string(Connectivity c);
Connectivity connectivity_from_string(std::string_view s);

struct GroupSchedule {
  std::vector<Index> sizes;
  std::vector<std::int64_t> periods;

  Index group_count() const { return static_cast<Index>(sizes.size()); }
  Index hidden_size() const;
  Index offset(Index group) const;

  /// Collects every violated invariant; empty when valid.
  std::vector<std::string> violations() const;
  void validate() const;

  /// One group of period 1: the standard LSTM.
  static GroupSchedule standard(Index hidden_size);
  /// Near-equal sizes (larger groups first), e.g. 64 over 3 groups -> 22/21/21.
  static GroupSchedule balanced(Index hidden_size, std::vector<std::int64_t> periods);

  bool operator==(const GroupSchedule&) const = default;
};

inline bool group_active(std::int64_t t, std::int64_t period) { return t % period == 0; }

/// Groups whose period divides `t`.
std::vector<Index> active_groups(std::int64_t t, const GroupSchedule& schedule);

/// Weights of one LSTM layer plus its per-step linear head.
/// Gate rows are stacked in the order input, forget, output, candidate; the
/// columns of `gate_weights` are [x ; h_{t-1}].
struct LstmParams {
  Index input_size = 0;
  Index hidden_size = 0;
  Index output_size = 0;
  Matrix gate_weights;  // 4H x (D+H)
  Vector gate_bias;     // 4H
  Matrix head_weights;  // out x H
  Vector head_bias;     // out

  enum Gate : Index { kInput = 0, kForget = 1, kOutput = 2, kCandidate = 3 };

  static LstmParams zeros(Index input_size, Index hidden_size, Index output_size);
  /// Uniform(+-1/sqrt(H)) weights, zero biases except forget bias 1.0. Weights
  /// excluded by the connectivity mode are zero.
  static LstmParams initialized(Index input_size, Index hidden_size, Index output_size,
                                std::uint64_t seed, const GroupSchedule& schedule,
                                Connectivity connectivity);

  Index parameter_count() const;

  auto gate_block(Gate g) { return gate_weights.middleRows(g * hidden_size, hidden_size); }
  auto gate_block(Gate g) const {
    return gate_weights.middleRows(g * hidden_size, hidden_size);
  }

  void set_zero();
  void add_scaled(const LstmParams& other, double scale);
  double squared_norm() const;
  bool finite() const;

  /// Visits (name, tensor) in checkpoint order: W_i W_f W_o W_g b_i b_f b_o b_g W_y b_y.
  /// Gate tensors are row blocks of the stacked storage.
  void for_each_named(
      const std::function<void(const std::string&, Eigen::Ref<const Matrix>)>& fn) const;

  /// Flat views over every scalar, in storage order (gate_weights, gate_bias,
  /// head_weights, head_bias). Used by optimizers and finite-difference checks.
  std::vector<std::span<double>> buffers();
  std::vector<std::span<const double>> buffers() const;

  bool operator==(const LstmParams& o) const;
};

/// Zeroes every weight that the connectivity mode excludes.
void apply_connectivity_mask(LstmParams& params, const GroupSchedule& schedule,
                             Connectivity connectivity);

struct CellState {
  Vector h;
  Vector c;
  std::int64_t t = 0;

  static CellState zero(Index hidden_size) {
    return {Vector::Zero(hidden_size), Vector::Zero(hidden_size), 0};
  }
};

/// A model is its weights together with the clock layout they were trained under.
struct Network {
  LstmParams params;
  GroupSchedule schedule;
  Connectivity connectivity = Connectivity::Full;

  void validate() const;
};

/// One clocked step for a single sequence.
CellState mts_step(const Vector& x, const CellState& state, const Network& net);

/// Forward activations for a batch over time. Column b of every matrix belongs
/// to sequence b; step t is at index t of each vector.
struct BatchTrace {
  std::vector<Matrix> z;       // (D+H) x B, [x_t ; h_{t-1}]
  std::vector<Matrix> gates;   // 4H x B post-nonlinearity; inactive rows are stale
  std::vector<Matrix> c;       // H x B
  std::vector<Matrix> tanh_c;  // H x B
  std::vector<Matrix> h;       // H x B
  std::vector<Matrix> y;       // out x B
};

/// Runs `xs` (each D x B) from the given state, clock starting at `t0`.
/// Outputs are the linear head applied to every h_t.
void forward_batch(const Network& net, std::span<const Matrix> xs, BatchTrace& trace,
                   const Matrix* h0 = nullptr, const Matrix* c0 = nullptr, std::int64_t t0 = 0);

/// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(y_t) for every
/// step. Starts from a zero initial state at clock 0 (the training layout).
void backward_batch(const Network& net, const BatchTrace& trace, std::span<const Matrix> dy,
                    LstmParams& grads);

struct SequenceResult {
  Matrix outputs;  // T x out
  BatchTrace trace;
  CellState final_state;
};

/// Forward over one sequence (T x D) from the zero state.
SequenceResult forward_sequence(const Matrix& xs, const Network& net);

enum class Loss { Rmse, CrossEntropy };

/// RMSE over every output element of the sequence against `targets` (T x out).
double sequence_rmse(const Matrix& outputs, const Matrix& targets);

/// Mean per-step cross-entropy of softmax(outputs) against `labels`.
double sequence_cross_entropy(const Matrix& outputs, std::span<const int> labels);

/// Exact gradients of the sequence RMSE.
LstmParams bptt(const Matrix& xs, const Matrix& targets, const Network& net);
/// Exact gradients of the mean per-step cross-entropy with softmax outputs.
LstmParams bptt(const Matrix& xs, std::span<const int> labels, const Network& net);

/// Global L2 norm clip; returns the norm before clipping.
double clip_global_norm(LstmParams& grads, double max_norm);

}  // namespace mtlstm
