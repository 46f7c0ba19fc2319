#pragma once

// Dense linear algebra, activations, losses and the Adam optimizer shared by
// every model in the library. Thin layer over Eigen: all storage is row-major
// and every op rejects shape mismatches and non-finite values.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace mtlstm {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
using Index = Eigen::Index;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Activation { Sigmoid, Tanh, Softmax };

inline constexpr double kProbabilityFloor = 1e-12;

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.derived().array().isFinite().all();
}

template <typename A, typename B>
void require_same_shape(const Eigen::DenseBase<A>& a, const Eigen::DenseBase<B>& b,
                        const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
}

template <typename Scalar>
MatrixX<Scalar> matmul(const MatrixX<Scalar>& a, const MatrixX<Scalar>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.rows()) + ")");
  }
  MatrixX<Scalar> out = a * b;
  if (!all_finite(out)) throw NumericError("matmul: non-finite result");
  return out;
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  return Scalar(1) / (Scalar(1) + std::exp(-x));
}

// Elementwise in place; used on the hot path where the caller already owns the
// buffer and has validated its inputs.
template <typename Derived>
void sigmoid_inplace(Eigen::MatrixBase<Derived>&& x) {
  x = (Eigen::exp(-x.array()) + 1.0).inverse().matrix();
}
template <typename Derived>
void sigmoid_inplace(Eigen::MatrixBase<Derived>& x) {
  x = (Eigen::exp(-x.array()) + 1.0).inverse().matrix();
}

template <typename Scalar>
VectorX<Scalar> softmax(const VectorX<Scalar>& x) {
  const Scalar peak = x.maxCoeff();
  VectorX<Scalar> e = (x.array() - peak).exp().matrix();
  return e / e.sum();
}

template <typename Scalar>
VectorX<Scalar> activate(Activation kind, const VectorX<Scalar>& x) {
  if (!all_finite(x)) throw NumericError("activate: non-finite input");
  switch (kind) {
    case Activation::Sigmoid:
      return x.unaryExpr([](Scalar v) { return sigmoid(v); });
    case Activation::Tanh:
      return x.array().tanh().matrix();
    case Activation::Softmax:
      if (x.size() == 0) throw ShapeError("activate: softmax of empty vector");
      return softmax(x);
  }
  throw std::invalid_argument("activate: unknown activation");
}

template <typename A, typename B>
typename A::Scalar rmse(const Eigen::MatrixBase<A>& pred, const Eigen::MatrixBase<B>& truth) {
  require_same_shape(pred, truth, "rmse");
  if (pred.size() == 0) throw ShapeError("rmse: empty input");
  return std::sqrt((pred - truth).squaredNorm() / static_cast<typename A::Scalar>(pred.size()));
}

template <typename Scalar>
Scalar cross_entropy(const VectorX<Scalar>& probs, int target) {
  if (target < 0 || target >= probs.size()) {
    throw std::out_of_range("cross_entropy: target " + std::to_string(target) +
                            " outside 0.." + std::to_string(probs.size() - 1));
  }
  if (std::abs(probs.sum() - Scalar(1)) > Scalar(1e-9)) {
    throw NumericError("cross_entropy: probabilities do not sum to 1");
  }
  return -std::log(std::max(probs(target), Scalar(kProbabilityFloor)));
}

/// Adam moments for one parameter tensor. Defaults are the standard ones.
template <typename Scalar>
struct AdamStateT {
  std::int64_t step = 0;
  MatrixX<Scalar> m;
  MatrixX<Scalar> v;
  Scalar beta1 = 0.9;
  Scalar beta2 = 0.999;
  Scalar epsilon = 1e-8;
  Scalar learning_rate = 0.001;

  AdamStateT() = default;
  AdamStateT(Index rows, Index cols, Scalar lr = 0.001)
      : m(MatrixX<Scalar>::Zero(rows, cols)),
        v(MatrixX<Scalar>::Zero(rows, cols)),
        learning_rate(lr) {}
};
using AdamState = AdamStateT<double>;

/// One bias-corrected Adam update, in place on `params` and `state`.
/// Entries whose gradient is exactly zero are left untouched (their moments
/// still decay), so a zero gradient is the identity on parameters for any
/// state and structurally masked weights stay at zero.
template <typename Scalar, typename P, typename G>
void adam_step(Eigen::MatrixBase<P>& params, const Eigen::MatrixBase<G>& grads,
               AdamStateT<Scalar>& state) {
  require_same_shape(params, grads, "adam_step");
  if (state.m.size() == 0 && state.v.size() == 0) {
    state.m = MatrixX<Scalar>::Zero(params.rows(), params.cols());
    state.v = MatrixX<Scalar>::Zero(params.rows(), params.cols());
  }
  require_same_shape(params, state.m, "adam_step (first moment)");
  require_same_shape(params, state.v, "adam_step (second moment)");
  if (state.step < 0) throw std::invalid_argument("adam_step: negative step count");

  state.step += 1;
  const auto t = static_cast<Scalar>(state.step);
  const Scalar c1 = Scalar(1) - std::pow(state.beta1, t);
  const Scalar c2 = Scalar(1) - std::pow(state.beta2, t);
  state.m = state.beta1 * state.m + (Scalar(1) - state.beta1) * grads;
  state.v = state.beta2 * state.v + (Scalar(1) - state.beta2) * grads.cwiseProduct(grads);
  for (Index r = 0; r < params.rows(); ++r) {
    for (Index c = 0; c < params.cols(); ++c) {
      if (grads(r, c) == Scalar(0)) continue;
      const Scalar m_hat = state.m(r, c) / c1;
      const Scalar v_hat = state.v(r, c) / c2;
      params(r, c) -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

template <typename Scalar, typename P, typename G>
void adam_step(Eigen::MatrixBase<P>&& params, const Eigen::MatrixBase<G>& grads,
               AdamStateT<Scalar>& state) {
  adam_step(params, grads, state);
}

}  // namespace mtlstm
