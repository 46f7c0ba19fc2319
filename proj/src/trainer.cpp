#include "mtlstm/trainer.hpp"

#include "mtlstm/rng.hpp"

#include <array>
#include <sstream>

namespace mtlstm {
namespace {

struct Optimizer {
  std::array<AdamState, 4> states;

  Optimizer(const LstmParams& p, double lr) {
    states[0] = AdamState(p.gate_weights.rows(), p.gate_weights.cols(), lr);
    states[1] = AdamState(p.gate_bias.rows(), 1, lr);
    states[2] = AdamState(p.head_weights.rows(), p.head_weights.cols(), lr);
    states[3] = AdamState(p.head_bias.rows(), 1, lr);
  }

  void step(LstmParams& p, const LstmParams& g) {
    adam_step(p.gate_weights, g.gate_weights, states[0]);
    adam_step(p.gate_bias, g.gate_bias, states[1]);
    adam_step(p.head_weights, g.head_weights, states[2]);
    adam_step(p.head_bias, g.head_bias, states[3]);
  }
};

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(hash_key({seed, 0x73687566ULL, static_cast<std::uint64_t>(epoch)}));
  rng.shuffle(order);
  return order;
}

void check_config(const TrainConfig& c) {
  if (c.epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
  if (c.batch < 1) throw std::invalid_argument("train: batch must be >= 1");
  if (c.learning_rate < 0) throw std::invalid_argument("train: learning rate must be >= 0");
}

[[noreturn]] void non_finite(const char* what, int epoch, std::size_t batch) {
  std::ostringstream msg;
  msg << what << ": non-finite loss at epoch " << epoch << ", batch " << batch;
  throw NumericError(msg.str());
}

}  // namespace

TrainResult train(std::span<const RegressionWindow> data, const Network& initial,
                  const TrainConfig& config) {
  check_config(config);
  initial.validate();
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  const Index length = data.front().length;
  const Index D = initial.params.input_size;
  if (initial.params.output_size != D) {
    throw ShapeError("train: predictor head must emit input-sized vectors");
  }
  for (const auto& w : data) {
    if (!w.series || w.length != length || length < 1) {
      throw ShapeError("train: windows must share a positive length");
    }
    if (w.series->cols() != D) throw ShapeError("train: window width differs from input size");
    if (w.start < 0 || w.start + w.length >= w.series->rows()) {
      throw ShapeError("train: window has no next-step target");
    }
  }

  Network net = initial;
  Optimizer opt(net.params, config.learning_rate);
  LstmParams grads = LstmParams::zeros(D, net.params.hidden_size, D);
  TrainResult result;
  BatchTrace trace;
  std::vector<Matrix> xs(static_cast<std::size_t>(length));
  std::vector<Matrix> dy(static_cast<std::size_t>(length));

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = epoch_order(data.size(), config.seed, epoch);
    double sq_total = 0.0;
    double n_total = 0.0;
    for (std::size_t first = 0, batch_no = 0; first < order.size();
         first += static_cast<std::size_t>(config.batch), ++batch_no) {
      const std::size_t last = std::min(order.size(), first + static_cast<std::size_t>(config.batch));
      const auto B = static_cast<Index>(last - first);
      for (Index t = 0; t < length; ++t) {
        auto& x = xs[static_cast<std::size_t>(t)];
        x.resize(D, B);
        for (Index b = 0; b < B; ++b) {
          const auto& w = data[order[first + static_cast<std::size_t>(b)]];
          x.col(b) = w.series->row(w.start + t).transpose();
        }
      }
      forward_batch(net, xs, trace);

      double sq = 0.0;
      for (Index t = 0; t < length; ++t) {
        auto& d = dy[static_cast<std::size_t>(t)];
        d = trace.y[static_cast<std::size_t>(t)];
        for (Index b = 0; b < B; ++b) {
          const auto& w = data[order[first + static_cast<std::size_t>(b)]];
          d.col(b) -= w.series->row(w.start + t + 1).transpose();
        }
        sq += d.squaredNorm();
      }
      const double n = static_cast<double>(length * B * D);
      const double loss = std::sqrt(sq / n);
      if (!std::isfinite(loss)) non_finite("train", epoch, batch_no);
      sq_total += sq;
      n_total += n;
      if (loss == 0.0) continue;
      for (auto& d : dy) d /= (n * loss);

      grads.set_zero();
      backward_batch(net, trace, dy, grads);
      if (config.clip_norm > 0) clip_global_norm(grads, config.clip_norm);
      opt.step(net.params, grads);
    }
    const double epoch_loss = std::sqrt(sq_total / n_total);
    if (!std::isfinite(epoch_loss) || !net.params.finite()) non_finite("train", epoch, 0);
    result.loss_history.push_back(epoch_loss);
  }
  result.params = std::move(net.params);
  return result;
}

TrainResult train_mapper(std::span<const LabelWindow> data, Index input_size,
                         const TrainConfig& config, Index hidden_size) {
  check_config(config);
  if (data.empty()) throw std::invalid_argument("train_mapper: empty dataset");
  const Index length = data.front().length;
  for (const auto& w : data) {
    if (!w.features || !w.labels || w.length != length || length < 1) {
      throw ShapeError("train_mapper: windows must share a positive length");
    }
    if (w.features->cols() != input_size) throw ShapeError("train_mapper: feature width mismatch");
    if (w.start < 0 || w.start + w.length > w.features->rows() ||
        static_cast<Index>(w.labels->size()) != w.features->rows()) {
      throw ShapeError("train_mapper: window outside its series");
    }
    for (Index t = 0; t < length; ++t) {
      const int label = (*w.labels)[static_cast<std::size_t>(w.start + t)];
      if (label < 0 || label >= kLabelCount) {
        throw std::out_of_range("train_mapper: label " + std::to_string(label) +
                                " outside 0..10");
      }
    }
  }

  Network net{LstmParams::initialized(input_size, hidden_size, kLabelCount, config.seed,
                                      GroupSchedule::standard(hidden_size), Connectivity::Full),
              GroupSchedule::standard(hidden_size), Connectivity::Full};
  Optimizer opt(net.params, config.learning_rate);
  LstmParams grads = LstmParams::zeros(input_size, hidden_size, kLabelCount);
  TrainResult result;
  BatchTrace trace;
  std::vector<Matrix> xs(static_cast<std::size_t>(length));
  std::vector<Matrix> dy(static_cast<std::size_t>(length));

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = epoch_order(data.size(), config.seed, epoch);
    double ce_total = 0.0;
    double n_total = 0.0;
    for (std::size_t first = 0, batch_no = 0; first < order.size();
         first += static_cast<std::size_t>(config.batch), ++batch_no) {
      const std::size_t last = std::min(order.size(), first + static_cast<std::size_t>(config.batch));
      const auto B = static_cast<Index>(last - first);
      for (Index t = 0; t < length; ++t) {
        auto& x = xs[static_cast<std::size_t>(t)];
        x.resize(input_size, B);
        for (Index b = 0; b < B; ++b) {
          const auto& w = data[order[first + static_cast<std::size_t>(b)]];
          x.col(b) = w.features->row(w.start + t).transpose();
        }
      }
      forward_batch(net, xs, trace);

      const double n = static_cast<double>(length * B);
      double ce = 0.0;
      for (Index t = 0; t < length; ++t) {
        const Matrix& y = trace.y[static_cast<std::size_t>(t)];
        auto& d = dy[static_cast<std::size_t>(t)];
        d.resize(kLabelCount, B);
        for (Index b = 0; b < B; ++b) {
          const auto& w = data[order[first + static_cast<std::size_t>(b)]];
          const int label = (*w.labels)[static_cast<std::size_t>(w.start + t)];
          Vector probs = softmax<double>(y.col(b));
          ce -= std::log(std::max(probs(label), kProbabilityFloor));
          probs(label) -= 1.0;
          d.col(b) = probs / n;
        }
      }
      if (!std::isfinite(ce)) non_finite("train_mapper", epoch, batch_no);
      ce_total += ce;
      n_total += n;

      grads.set_zero();
      backward_batch(net, trace, dy, grads);
      if (config.clip_norm > 0) clip_global_norm(grads, config.clip_norm);
      opt.step(net.params, grads);
    }
    result.loss_history.push_back(ce_total / n_total);
  }
  result.params = std::move(net.params);
  return result;
}

Matrix mapper_probabilities(const Network& mapper, const Matrix& features) {
  const auto fwd = forward_sequence(features, mapper);
  Matrix probs(fwd.outputs.rows(), fwd.outputs.cols());
  for (Index t = 0; t < probs.rows(); ++t) {
    probs.row(t) = softmax<double>(fwd.outputs.row(t).transpose()).transpose();
  }
  return probs;
}

}  // namespace mtlstm
