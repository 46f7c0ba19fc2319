#pragma once

// Autoregressive forecasting: the feature predictor is run over an observed
// window and then fed its own (snapped) outputs; a separate mapper turns the
// predicted features into semantic labels.

#include "mtlstm/behavior.hpp"
#include "mtlstm/lstm.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace mtlstm {

/// Replaces every categorical block by the one-hot of its argmax (ties go to
/// the lowest index). Numeric coordinates are untouched.
Vector snap_categoricals(const Vector& v, const EncodingSpec& spec);

struct RolloutOptions {
  /// Re-run the last input_len vectors from a zero state on every iteration
  /// instead of carrying the recurrent state forward.
  bool literal_refeed = false;
};

/// `horizon` predicted vectors (rows) following `window` (rows = time). The
/// first row is the head output at the window's last step; each row is snapped
/// and monotone count fields are floored at the window's last value before it
/// is fed back.
Matrix rollout(const Network& net, const Matrix& window, Index horizon, const EncodingSpec& spec,
               const RolloutOptions& options = {});

/// Per-step argmax of the mapper's softmax.
std::vector<SemanticLabel> map_labels(const Network& mapper, const Matrix& features);

struct Forecast {
  std::string window_id;
  Matrix features;  // horizon x D
  std::vector<SemanticLabel> labels;
};

Forecast forecast(const Network& predictor, const Network& mapper, const Matrix& window,
                  Index horizon, const EncodingSpec& spec, std::string window_id,
                  const RolloutOptions& options = {});

/// One JSON object per line: window id, horizon, labels, and optionally the
/// raw predicted vectors.
void write_forecast(std::ostream& out, const Forecast& f, bool include_vectors = false);

}  // namespace mtlstm
