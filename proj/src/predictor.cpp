#include "mtlstm/predictor.hpp"

#include "mtlstm/trainer.hpp"

#include <json.hpp>

#include <ostream>
#include <string>

namespace mtlstm {

Vector snap_categoricals(const Vector& v, const EncodingSpec& spec) {
  if (v.size() != spec.dimension) {
    throw ShapeError("snap_categoricals: vector has " + std::to_string(v.size()) +
                     " entries, encoding expects " + std::to_string(spec.dimension));
  }
  Vector out = v;
  const auto fields = record_fields();
  for (const auto& slot : spec.slots) {
    if (fields[slot.field].kind != FieldKind::Categorical) continue;
    Index best = 0;
    for (Index j = 1; j < slot.width; ++j) {
      if (v(slot.offset + j) > v(slot.offset + best)) best = j;
    }
    out.segment(slot.offset, slot.width).setZero();
    out(slot.offset + best) = 1.0;
  }
  return out;
}

namespace {

Vector head(const Network& net, const Vector& h) {
  return net.params.head_weights * h + net.params.head_bias;
}

Vector feedback(const Vector& y, const Vector& floor, const EncodingSpec& spec, Index iteration) {
  if (!all_finite(y)) {
    throw NumericError("rollout: non-finite prediction at iteration " + std::to_string(iteration));
  }
  Vector out = snap_categoricals(y, spec);
  const auto fields = record_fields();
  for (const auto& slot : spec.slots) {
    // z-scoring is increasing, so the floor can be applied in encoded space
    if (fields[slot.field].monotone) out(slot.offset) = std::max(out(slot.offset), floor(slot.offset));
  }
  return out;
}

}  // namespace

Matrix rollout(const Network& net, const Matrix& window, Index horizon, const EncodingSpec& spec,
               const RolloutOptions& options) {
  if (window.rows() < 1) throw ShapeError("rollout: empty window");
  if (window.cols() != net.params.input_size || spec.dimension != net.params.input_size) {
    throw ShapeError("rollout: window has " + std::to_string(window.cols()) +
                     " columns, model expects " + std::to_string(net.params.input_size));
  }
  if (net.params.output_size != net.params.input_size) {
    throw ShapeError("rollout: model output size must equal its input size");
  }
  if (horizon < 0) throw std::invalid_argument("rollout: negative horizon");

  const Index D = window.cols();
  const Index n = window.rows();
  const Vector floor = window.row(n - 1).transpose();
  Matrix out(horizon, D);
  if (horizon == 0) return out;

  if (!options.literal_refeed) {
    auto seq = forward_sequence(window, net);
    CellState state = std::move(seq.final_state);
    Vector x = feedback(seq.outputs.row(n - 1).transpose(), floor, spec, 0);
    out.row(0) = x.transpose();
    for (Index i = 1; i < horizon; ++i) {
      state = mts_step(x, state, net);
      x = feedback(head(net, state.h), floor, spec, i);
      out.row(i) = x.transpose();
    }
    return out;
  }

  Matrix buffer(n + horizon, D);
  buffer.topRows(n) = window;
  for (Index i = 0; i < horizon; ++i) {
    const auto seq = forward_sequence(buffer.middleRows(i, n), net);
    const Vector x = feedback(seq.outputs.row(n - 1).transpose(), floor, spec, i);
    out.row(i) = x.transpose();
    buffer.row(n + i) = x.transpose();
  }
  return out;
}

std::vector<SemanticLabel> map_labels(const Network& mapper, const Matrix& features) {
  if (features.cols() != mapper.params.input_size) {
    throw ShapeError("map_labels: features have " + std::to_string(features.cols()) +
                     " columns, mapper expects " + std::to_string(mapper.params.input_size));
  }
  if (mapper.params.output_size != kLabelCount) {
    throw ShapeError("map_labels: mapper head must have 11 outputs");
  }
  std::vector<SemanticLabel> labels;
  if (features.rows() == 0) return labels;
  const Matrix probs = mapper_probabilities(mapper, features);
  labels.reserve(static_cast<std::size_t>(probs.rows()));
  for (Index t = 0; t < probs.rows(); ++t) {
    Index best = 0;
    probs.row(t).maxCoeff(&best);
    labels.push_back(label_from_index(static_cast<int>(best)));
  }
  return labels;
}

Forecast forecast(const Network& predictor, const Network& mapper, const Matrix& window,
                  Index horizon, const EncodingSpec& spec, std::string window_id,
                  const RolloutOptions& options) {
  Forecast f;
  f.window_id = std::move(window_id);
  f.features = rollout(predictor, window, horizon, spec, options);
  f.labels = map_labels(mapper, f.features);
  return f;
}

void write_forecast(std::ostream& out, const Forecast& f, bool include_vectors) {
  nlohmann::ordered_json j;
  j["window_id"] = f.window_id;
  j["horizon"] = f.features.rows();
  auto labels = nlohmann::ordered_json::array();
  for (auto l : f.labels) labels.push_back(std::string(label_name(l)));
  j["labels"] = std::move(labels);
  if (include_vectors) {
    auto rows = nlohmann::ordered_json::array();
    for (Index t = 0; t < f.features.rows(); ++t) {
      std::vector<double> row(f.features.row(t).begin(), f.features.row(t).end());
      rows.push_back(row);
    }
    j["vectors"] = std::move(rows);
  }
  out << j.dump() << '\n';
}

}  // namespace mtlstm
