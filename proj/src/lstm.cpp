#include "mtlstm/lstm.hpp"

#include "mtlstm/rng.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace mtlstm {

std::string_view to_string(Connectivity c) {
  return c == Connectivity::Full ? "full" : "clockwork";
}

Connectivity connectivity_from_string(std::string_view s) {
  if (s == "full") return Connectivity::Full;
  if (s == "clockwork") return Connectivity::Clockwork;
  throw std::invalid_argument("unknown connectivity mode '" + std::string(s) +
                              "' (expected full|clockwork)");
}

// ---------------------------------------------------------------------------
// GroupSchedule

Index GroupSchedule::hidden_size() const {
  return std::accumulate(sizes.begin(), sizes.end(), Index{0});
}

Index GroupSchedule::offset(Index group) const {
  return std::accumulate(sizes.begin(), sizes.begin() + group, Index{0});
}

std::vector<std::string> GroupSchedule::violations() const {
  std::vector<std::string> out;
  if (sizes.empty()) out.emplace_back("schedule must have at least one group");
  if (sizes.size() != periods.size()) {
    out.emplace_back("sizes and periods must have the same length");
  }
  for (auto s : sizes) {
    if (s <= 0) {
      out.emplace_back("group sizes must be positive");
      break;
    }
  }
  for (auto p : periods) {
    if (p <= 0) {
      out.emplace_back("periods must be positive");
      break;
    }
  }
  for (std::size_t i = 1; i < periods.size(); ++i) {
    if (periods[i] < periods[i - 1]) {
      out.emplace_back("periods must be non-decreasing");
      break;
    }
  }
  if (!periods.empty() && periods.front() != 1) out.emplace_back("periods[0] must be 1");
  return out;
}

void GroupSchedule::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::ostringstream msg;
  for (std::size_t i = 0; i < v.size(); ++i) msg << (i ? "; " : "") << v[i];
  throw ScheduleError(msg.str());
}

GroupSchedule GroupSchedule::standard(Index hidden_size) { return {{hidden_size}, {1}}; }

GroupSchedule GroupSchedule::balanced(Index hidden_size, std::vector<std::int64_t> periods) {
  const auto k = static_cast<Index>(periods.size());
  if (k == 0 || hidden_size < k) throw ScheduleError("cannot split hidden layer into groups");
  GroupSchedule s;
  s.periods = std::move(periods);
  for (Index g = 0; g < k; ++g) s.sizes.push_back(hidden_size / k + (g < hidden_size % k ? 1 : 0));
  return s;
}

std::vector<Index> active_groups(std::int64_t t, const GroupSchedule& schedule) {
  std::vector<Index> out;
  for (Index g = 0; g < schedule.group_count(); ++g) {
    if (group_active(t, schedule.periods[static_cast<std::size_t>(g)])) out.push_back(g);
  }
  return out;
}

// ---------------------------------------------------------------------------
// LstmParams

LstmParams LstmParams::zeros(Index input_size, Index hidden_size, Index output_size) {
  LstmParams p;
  p.input_size = input_size;
  p.hidden_size = hidden_size;
  p.output_size = output_size;
  p.gate_weights = Matrix::Zero(4 * hidden_size, input_size + hidden_size);
  p.gate_bias = Vector::Zero(4 * hidden_size);
  p.head_weights = Matrix::Zero(output_size, hidden_size);
  p.head_bias = Vector::Zero(output_size);
  return p;
}

LstmParams LstmParams::initialized(Index input_size, Index hidden_size, Index output_size,
                                   std::uint64_t seed, const GroupSchedule& schedule,
                                   Connectivity connectivity) {
  LstmParams p = zeros(input_size, hidden_size, output_size);
  Rng rng(hash_key({seed, 0x6c73746dULL}));
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_size));
  for (Index i = 0; i < p.gate_weights.size(); ++i) {
    p.gate_weights.data()[i] = rng.uniform(-bound, bound);
  }
  for (Index i = 0; i < p.head_weights.size(); ++i) {
    p.head_weights.data()[i] = rng.uniform(-bound, bound);
  }
  p.gate_bias.segment(kForget * hidden_size, hidden_size).setOnes();
  apply_connectivity_mask(p, schedule, connectivity);
  return p;
}

Index LstmParams::parameter_count() const {
  return gate_weights.size() + gate_bias.size() + head_weights.size() + head_bias.size();
}

void LstmParams::set_zero() {
  gate_weights.setZero();
  gate_bias.setZero();
  head_weights.setZero();
  head_bias.setZero();
}

void LstmParams::add_scaled(const LstmParams& other, double scale) {
  gate_weights += scale * other.gate_weights;
  gate_bias += scale * other.gate_bias;
  head_weights += scale * other.head_weights;
  head_bias += scale * other.head_bias;
}

double LstmParams::squared_norm() const {
  return gate_weights.squaredNorm() + gate_bias.squaredNorm() + head_weights.squaredNorm() +
         head_bias.squaredNorm();
}

bool LstmParams::finite() const {
  return all_finite(gate_weights) && all_finite(gate_bias) && all_finite(head_weights) &&
         all_finite(head_bias);
}

void LstmParams::for_each_named(
    const std::function<void(const std::string&, Eigen::Ref<const Matrix>)>& fn) const {
  static const char* gate_names[] = {"i", "f", "o", "g"};
  for (Index g = 0; g < 4; ++g) {
    fn(std::string("W_") + gate_names[g], gate_block(static_cast<Gate>(g)));
  }
  for (Index g = 0; g < 4; ++g) {
    Matrix b = gate_bias.segment(g * hidden_size, hidden_size);
    fn(std::string("b_") + gate_names[g], b);
  }
  fn("W_y", head_weights);
  Matrix by = head_bias;
  fn("b_y", by);
}

std::vector<std::span<double>> LstmParams::buffers() {
  auto span_of = [](auto& m) {
    return std::span<double>(m.data(), static_cast<std::size_t>(m.size()));
  };
  return {span_of(gate_weights), span_of(gate_bias), span_of(head_weights), span_of(head_bias)};
}

std::vector<std::span<const double>> LstmParams::buffers() const {
  auto span_of = [](const auto& m) {
    return std::span<const double>(m.data(), static_cast<std::size_t>(m.size()));
  };
  return {span_of(gate_weights), span_of(gate_bias), span_of(head_weights), span_of(head_bias)};
}

bool LstmParams::operator==(const LstmParams& o) const {
  return input_size == o.input_size && hidden_size == o.hidden_size &&
         output_size == o.output_size && gate_weights == o.gate_weights &&
         gate_bias == o.gate_bias && head_weights == o.head_weights && head_bias == o.head_bias;
}

void apply_connectivity_mask(LstmParams& params, const GroupSchedule& schedule,
                             Connectivity connectivity) {
  if (connectivity == Connectivity::Full) return;
  const Index H = params.hidden_size;
  const Index D = params.input_size;
  for (Index g = 0; g < schedule.group_count(); ++g) {
    const Index off = schedule.offset(g);
    const Index size = schedule.sizes[static_cast<std::size_t>(g)];
    // Group g reads h columns [off, H) only.
    for (Index q = 0; q < 4; ++q) {
      params.gate_weights.block(q * H + off, D, size, off).setZero();
    }
  }
}

void Network::validate() const {
  schedule.validate();
  if (schedule.hidden_size() != params.hidden_size) {
    throw ShapeError("schedule sizes sum to " + std::to_string(schedule.hidden_size()) +
                     " but hidden size is " + std::to_string(params.hidden_size));
  }
  const Index H = params.hidden_size;
  if (params.gate_weights.rows() != 4 * H ||
      params.gate_weights.cols() != params.input_size + H || params.gate_bias.size() != 4 * H ||
      params.head_weights.rows() != params.output_size || params.head_weights.cols() != H ||
      params.head_bias.size() != params.output_size) {
    throw ShapeError("inconsistent LSTM parameter shapes");
  }
}

// ---------------------------------------------------------------------------
// Forward

namespace {

bool all_groups_active(std::int64_t t, const GroupSchedule& s) {
  return std::all_of(s.periods.begin(), s.periods.end(),
                     [t](std::int64_t p) { return group_active(t, p); });
}

// Pre-activations for the rows of `group` in every gate.
void gate_preactivations(const Network& net, Index group, const Matrix& z, Matrix& gates) {
  const auto& p = net.params;
  const Index H = p.hidden_size;
  const Index D = p.input_size;
  const Index off = net.schedule.offset(group);
  const Index size = net.schedule.sizes[static_cast<std::size_t>(group)];
  for (Index q = 0; q < 4; ++q) {
    const Index row = q * H + off;
    auto out = gates.middleRows(row, size);
    if (net.connectivity == Connectivity::Full) {
      out.noalias() = p.gate_weights.middleRows(row, size) * z;
    } else {
      out.noalias() = p.gate_weights.block(row, 0, size, D) * z.topRows(D);
      out.noalias() += p.gate_weights.block(row, D + off, size, H - off) *
                       z.middleRows(D + off, H - off);
    }
    out.colwise() += p.gate_bias.segment(row, size);
  }
}

void apply_gate_nonlinearities(Matrix& gates, Index H, Index off, Index size) {
  for (Index q = 0; q < 3; ++q) {
    auto blk = gates.middleRows(q * H + off, size);
    blk = (Eigen::exp(-blk.array()) + 1.0).inverse().matrix();
  }
  auto cand = gates.middleRows(3 * H + off, size);
  cand = cand.array().tanh().matrix();
}

}  // namespace

void forward_batch(const Network& net, std::span<const Matrix> xs, BatchTrace& trace,
                   const Matrix* h0, const Matrix* c0, std::int64_t t0) {
  const auto& p = net.params;
  const Index H = p.hidden_size;
  const Index D = p.input_size;
  const auto T = xs.size();
  if (T == 0) throw ShapeError("forward: empty sequence");
  const Index B = xs[0].cols();

  trace.z.resize(T);
  trace.gates.resize(T);
  trace.c.resize(T);
  trace.tanh_c.resize(T);
  trace.h.resize(T);
  trace.y.resize(T);

  Matrix h_prev = h0 ? *h0 : Matrix::Zero(H, B);
  Matrix c_prev = c0 ? *c0 : Matrix::Zero(H, B);

  for (std::size_t t = 0; t < T; ++t) {
    const Matrix& x = xs[t];
    if (x.rows() != D || x.cols() != B) {
      throw ShapeError("forward: input at step " + std::to_string(t) + " is " +
                       std::to_string(x.rows()) + "x" + std::to_string(x.cols()) + ", expected " +
                       std::to_string(D) + "x" + std::to_string(B));
    }
    const std::int64_t clock = t0 + static_cast<std::int64_t>(t);

    Matrix& z = trace.z[t];
    z.resize(D + H, B);
    z.topRows(D) = x;
    z.bottomRows(H) = h_prev;

    Matrix& gates = trace.gates[t];
    gates.resize(4 * H, B);
    Matrix& c = trace.c[t];
    Matrix& h = trace.h[t];
    c = c_prev;
    h = h_prev;

    if (net.connectivity == Connectivity::Full && all_groups_active(clock, net.schedule)) {
      gates.noalias() = p.gate_weights * z;
      gates.colwise() += p.gate_bias;
      apply_gate_nonlinearities(gates, H, 0, H);
      c = gates.middleRows(H, H).cwiseProduct(c_prev) +
          gates.topRows(H).cwiseProduct(gates.bottomRows(H));
      trace.tanh_c[t] = c.array().tanh().matrix();
      h = gates.middleRows(2 * H, H).cwiseProduct(trace.tanh_c[t]);
    } else {
      gates.setZero();
      for (Index g = 0; g < net.schedule.group_count(); ++g) {
        if (!group_active(clock, net.schedule.periods[static_cast<std::size_t>(g)])) continue;
        const Index off = net.schedule.offset(g);
        const Index size = net.schedule.sizes[static_cast<std::size_t>(g)];
        gate_preactivations(net, g, z, gates);
        apply_gate_nonlinearities(gates, H, off, size);
        c.middleRows(off, size) =
            gates.middleRows(H + off, size).cwiseProduct(c_prev.middleRows(off, size)) +
            gates.middleRows(off, size).cwiseProduct(gates.middleRows(3 * H + off, size));
        h.middleRows(off, size) = gates.middleRows(2 * H + off, size)
                                      .cwiseProduct(c.middleRows(off, size).array().tanh().matrix());
      }
      trace.tanh_c[t] = c.array().tanh().matrix();
    }

    Matrix& y = trace.y[t];
    y.noalias() = p.head_weights * h;
    y.colwise() += p.head_bias;

    h_prev = h;
    c_prev = c;
  }
}

CellState mts_step(const Vector& x, const CellState& state, const Network& net) {
  const Index H = net.params.hidden_size;
  if (x.size() != net.params.input_size) throw ShapeError("mts_step: input size mismatch");
  if (state.h.size() != H || state.c.size() != H) throw ShapeError("mts_step: state size mismatch");
  if (state.t < 0) throw std::invalid_argument("mts_step: negative step index");
  if (!all_finite(state.h) || !all_finite(state.c)) throw NumericError("mts_step: non-finite state");

  BatchTrace trace;
  const Matrix xm = x;
  const Matrix h0 = state.h;
  const Matrix c0 = state.c;
  forward_batch(net, std::span<const Matrix>(&xm, 1), trace, &h0, &c0, state.t);
  return {trace.h[0].col(0), trace.c[0].col(0), state.t + 1};
}

SequenceResult forward_sequence(const Matrix& xs, const Network& net) {
  net.validate();
  if (xs.rows() == 0) throw ShapeError("forward_sequence: empty sequence");
  if (xs.cols() != net.params.input_size) throw ShapeError("forward_sequence: input size mismatch");
  std::vector<Matrix> steps(static_cast<std::size_t>(xs.rows()));
  for (Index t = 0; t < xs.rows(); ++t) steps[static_cast<std::size_t>(t)] = xs.row(t).transpose();

  SequenceResult r;
  forward_batch(net, steps, r.trace);
  r.outputs.resize(xs.rows(), net.params.output_size);
  for (Index t = 0; t < xs.rows(); ++t) {
    r.outputs.row(t) = r.trace.y[static_cast<std::size_t>(t)].col(0).transpose();
  }
  r.final_state = {r.trace.h.back().col(0), r.trace.c.back().col(0), xs.rows()};
  return r;
}

// ---------------------------------------------------------------------------
// Backward

void backward_batch(const Network& net, const BatchTrace& trace, std::span<const Matrix> dy,
                    LstmParams& grads) {
  const auto& p = net.params;
  const Index H = p.hidden_size;
  const Index D = p.input_size;
  const auto T = trace.h.size();
  if (dy.size() != T) throw ShapeError("backward: gradient/trace length mismatch");
  const Index B = trace.h[0].cols();

  Matrix dh_next = Matrix::Zero(H, B);
  Matrix dc_next = Matrix::Zero(H, B);
  Matrix dh(H, B), dc(H, B), dA(4 * H, B), dz(D + H, B);
  Matrix dh_prev(H, B), dc_prev(H, B);
  const Matrix zero_state = Matrix::Zero(H, B);

  for (std::size_t step = T; step-- > 0;) {
    const auto clock = static_cast<std::int64_t>(step);
    const Matrix& gates = trace.gates[step];
    const Matrix& z = trace.z[step];
    const Matrix& tanh_c = trace.tanh_c[step];
    const Matrix& c_prev = step == 0 ? zero_state : trace.c[step - 1];

    grads.head_weights.noalias() += dy[step] * trace.h[step].transpose();
    grads.head_bias += dy[step].rowwise().sum();
    dh = dh_next;
    dh.noalias() += p.head_weights.transpose() * dy[step];
    dc = dc_next;

    dh_prev.setZero();
    dc_prev.setZero();
    dA.setZero();
    bool any_active = false;
    for (Index g = 0; g < net.schedule.group_count(); ++g) {
      const Index off = net.schedule.offset(g);
      const Index size = net.schedule.sizes[static_cast<std::size_t>(g)];
      if (!group_active(clock, net.schedule.periods[static_cast<std::size_t>(g)])) {
        // Inactive: state was copied, so its error is copied back unchanged.
        dh_prev.middleRows(off, size) = dh.middleRows(off, size);
        dc_prev.middleRows(off, size) = dc.middleRows(off, size);
        continue;
      }
      any_active = true;
      const auto ig = gates.middleRows(off, size).array();
      const auto fg = gates.middleRows(H + off, size).array();
      const auto og = gates.middleRows(2 * H + off, size).array();
      const auto gg = gates.middleRows(3 * H + off, size).array();
      const auto tc = tanh_c.middleRows(off, size).array();
      const auto dh_g = dh.middleRows(off, size).array();

      const Eigen::ArrayXXd dc_g = dc.middleRows(off, size).array() + dh_g * og * (1.0 - tc * tc);
      dA.middleRows(2 * H + off, size) = (dh_g * tc * og * (1.0 - og)).matrix();
      dA.middleRows(off, size) = (dc_g * gg * ig * (1.0 - ig)).matrix();
      dA.middleRows(H + off, size) =
          (dc_g * c_prev.middleRows(off, size).array() * fg * (1.0 - fg)).matrix();
      dA.middleRows(3 * H + off, size) = (dc_g * ig * (1.0 - gg * gg)).matrix();
      dc_prev.middleRows(off, size) = (dc_g * fg).matrix();
    }

    if (any_active) {
      if (net.connectivity == Connectivity::Full && all_groups_active(clock, net.schedule)) {
        grads.gate_weights.noalias() += dA * z.transpose();
        grads.gate_bias += dA.rowwise().sum();
        dz.noalias() = p.gate_weights.transpose() * dA;
        dh_prev += dz.bottomRows(H);
      } else {
        dz.setZero();
        for (Index g = 0; g < net.schedule.group_count(); ++g) {
          if (!group_active(clock, net.schedule.periods[static_cast<std::size_t>(g)])) continue;
          const Index off = net.schedule.offset(g);
          const Index size = net.schedule.sizes[static_cast<std::size_t>(g)];
          for (Index q = 0; q < 4; ++q) {
            const Index row = q * H + off;
            const auto dA_blk = dA.middleRows(row, size);
            grads.gate_bias.segment(row, size) += dA_blk.rowwise().sum();
            if (net.connectivity == Connectivity::Full) {
              grads.gate_weights.middleRows(row, size).noalias() += dA_blk * z.transpose();
              dz.noalias() += p.gate_weights.middleRows(row, size).transpose() * dA_blk;
            } else {
              grads.gate_weights.block(row, 0, size, D).noalias() +=
                  dA_blk * z.topRows(D).transpose();
              grads.gate_weights.block(row, D + off, size, H - off).noalias() +=
                  dA_blk * z.middleRows(D + off, H - off).transpose();
              dz.middleRows(D + off, H - off).noalias() +=
                  p.gate_weights.block(row, D + off, size, H - off).transpose() * dA_blk;
            }
          }
        }
        dh_prev += dz.bottomRows(H);
      }
    }

    dh_next.swap(dh_prev);
    dc_next.swap(dc_prev);
  }
}

double sequence_rmse(const Matrix& outputs, const Matrix& targets) { return rmse(outputs, targets); }

double sequence_cross_entropy(const Matrix& outputs, std::span<const int> labels) {
  if (static_cast<std::size_t>(outputs.rows()) != labels.size()) {
    throw ShapeError("cross-entropy: outputs/labels length mismatch");
  }
  double total = 0.0;
  for (Index t = 0; t < outputs.rows(); ++t) {
    const Vector probs = softmax<double>(outputs.row(t).transpose());
    total += cross_entropy(probs, labels[static_cast<std::size_t>(t)]);
  }
  return total / static_cast<double>(outputs.rows());
}

namespace {

LstmParams run_backward(const Network& net, const BatchTrace& trace, const std::vector<Matrix>& dy) {
  LstmParams grads = LstmParams::zeros(net.params.input_size, net.params.hidden_size,
                                       net.params.output_size);
  backward_batch(net, trace, dy, grads);
  if (!grads.finite()) throw NumericError("bptt: non-finite gradients");
  return grads;
}

}  // namespace

LstmParams bptt(const Matrix& xs, const Matrix& targets, const Network& net) {
  auto fwd = forward_sequence(xs, net);
  require_same_shape(fwd.outputs, targets, "bptt targets");
  const double loss = rmse(fwd.outputs, targets);
  const auto n = static_cast<double>(targets.size());
  std::vector<Matrix> dy(static_cast<std::size_t>(xs.rows()));
  for (Index t = 0; t < xs.rows(); ++t) {
    Matrix d = (fwd.outputs.row(t) - targets.row(t)).transpose();
    dy[static_cast<std::size_t>(t)] = loss > 0.0 ? Matrix(d / (n * loss)) : Matrix(Matrix::Zero(d.rows(), 1));
  }
  return run_backward(net, fwd.trace, dy);
}

LstmParams bptt(const Matrix& xs, std::span<const int> labels, const Network& net) {
  auto fwd = forward_sequence(xs, net);
  if (labels.size() != static_cast<std::size_t>(xs.rows())) {
    throw ShapeError("bptt: labels/sequence length mismatch");
  }
  const auto n = static_cast<double>(xs.rows());
  std::vector<Matrix> dy(static_cast<std::size_t>(xs.rows()));
  for (Index t = 0; t < xs.rows(); ++t) {
    const int label = labels[static_cast<std::size_t>(t)];
    if (label < 0 || label >= net.params.output_size) {
      throw std::out_of_range("bptt: label " + std::to_string(label) + " out of range");
    }
    Vector probs = softmax<double>(fwd.outputs.row(t).transpose());
    probs(label) -= 1.0;
    dy[static_cast<std::size_t>(t)] = probs / n;
  }
  return run_backward(net, fwd.trace, dy);
}

double clip_global_norm(LstmParams& grads, double max_norm) {
  const double norm = std::sqrt(grads.squared_norm());
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    grads.gate_weights *= s;
    grads.gate_bias *= s;
    grads.head_weights *= s;
    grads.head_bias *= s;
  }
  return norm;
}

}  // namespace mtlstm
